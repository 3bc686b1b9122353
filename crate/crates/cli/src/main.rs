fn main() {
    std::process::exit(scl_cli::run(std::env::args_os()));
}
