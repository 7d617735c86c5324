fn main() {
    std::process::exit(drbqo::cli::run_cli(std::env::args_os()));
}
