fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("KMSHRINK_LOG", "warn")).init();
    std::process::exit(kmshrink_cli::run(std::env::args_os()));
}
