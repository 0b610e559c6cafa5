fn main() {
    std::process::exit(maihda::cli::run(std::env::args_os()));
}
