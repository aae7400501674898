fn main() {
    std::process::exit(xrsim::cli::main_with_args(std::env::args_os()));
}
