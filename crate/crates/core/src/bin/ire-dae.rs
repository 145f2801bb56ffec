fn main() {
    std::process::exit(ire_dae::cli::main_with_args(std::env::args_os()));
}
