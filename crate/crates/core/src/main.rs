fn main() {
    std::process::exit(foldmap::cli::main_with_args(std::env::args_os()));
}
