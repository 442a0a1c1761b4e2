fn main() {
    std::process::exit(proxsc::cli::run_from(std::env::args_os()));
}
