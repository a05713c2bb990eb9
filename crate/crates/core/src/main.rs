fn main() {
    std::process::exit(policylab::cli::run(std::env::args_os()));
}
