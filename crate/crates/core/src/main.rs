fn main() {
    std::process::exit(rbsde::cli::run(std::env::args_os()));
}
