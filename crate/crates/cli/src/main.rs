fn main() {
    std::process::exit(quadscan_cli::run(std::env::args_os()));
}
