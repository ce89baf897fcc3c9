fn main() {
    std::process::exit(surrogate_pte::cli::main_with_args(std::env::args_os()));
}
