fn main() {
    std::process::exit(cdt::cli::main_with_args(std::env::args_os()));
}
