fn main() {
    std::process::exit(smoothpwa_cli::main_with_args(std::env::args_os()));
}
