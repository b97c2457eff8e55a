fn main() {
    std::process::exit(liff_cli::main_with_args(std::env::args_os()));
}
