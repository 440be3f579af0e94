fn main() {
    std::process::exit(csimpute::cli::main_with_args(std::env::args_os()));
}
