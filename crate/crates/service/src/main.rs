fn main() {
    std::process::exit(mgrl_service::cli::run(std::env::args_os()));
}
