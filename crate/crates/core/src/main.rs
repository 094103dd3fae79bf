fn main() {
    std::process::exit(biaslab::harness::cli::run_cli(std::env::args_os()));
}
