fn main() {
    std::process::exit(pronecl::cli::main_with_args(std::env::args_os()));
}
