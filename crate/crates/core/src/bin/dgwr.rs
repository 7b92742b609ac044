fn main() {
    std::process::exit(dgwr::cli::main_with_args(std::env::args_os()));
}
