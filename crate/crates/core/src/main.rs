fn main() {
    std::process::exit(carmsim::cli::run_from_args(std::env::args_os()));
}
