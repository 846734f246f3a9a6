fn main() {
    std::process::exit(mlcc_cli::run(std::env::args_os()));
}
