fn main() {
    std::process::exit(markov_bsde::cli::run_cli(std::env::args_os()));
}
