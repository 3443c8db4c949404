fn main() {
    std::process::exit(csense::cli::main_with_args(std::env::args_os()));
}
