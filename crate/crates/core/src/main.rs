fn main() {
    std::process::exit(mgcc::cli::run(std::env::args_os()));
}
