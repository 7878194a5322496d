fn main() {
    std::process::exit(ansemb::cli::run_from(std::env::args_os()));
}
