fn main() {
    std::process::exit(dots::cli::main_with_args(std::env::args_os()));
}
