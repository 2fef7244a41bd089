fn main() {
    std::process::exit(gecco::cli::main_with_args(std::env::args_os()));
}
