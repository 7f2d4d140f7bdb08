fn main() {
    std::process::exit(flowscene::cli::main_with_args(std::env::args_os()));
}
