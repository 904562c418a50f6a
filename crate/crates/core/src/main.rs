fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NESTQUANT_LOG", "warn")).init();
    let code = nestquant::cli::run(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code);
}
