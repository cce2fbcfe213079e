fn main() {
    proofminer::cli::init_logging();
    std::process::exit(proofminer::cli::run(std::env::args_os()));
}
