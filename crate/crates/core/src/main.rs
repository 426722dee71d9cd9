fn main() {
    std::process::exit(cutlab::cli::main_with_args(std::env::args_os()));
}
