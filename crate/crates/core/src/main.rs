fn main() {
    std::process::exit(adaptive_ensemble::cli::run_from_args(std::env::args_os()));
}
