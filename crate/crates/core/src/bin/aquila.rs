fn main() {
    env_logger::init();
    std::process::exit(aquila::cli::run_cli(std::env::args_os()));
}
