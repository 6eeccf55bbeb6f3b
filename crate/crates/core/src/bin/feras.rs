fn main() {
    std::process::exit(feras::cli::main_with_args(std::env::args_os()));
}
