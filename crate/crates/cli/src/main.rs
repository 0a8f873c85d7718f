use clap::Parser;

fn main() {
    let cli = r2d_cli::Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("R2D_LOG", "info"))
        .format_timestamp(None)
        .init();
    if let Err(e) = r2d_cli::run(cli) {
        eprintln!("error: {e:#}");
        let code = if e.downcast_ref::<r2d_cli::UsageError>().is_some() { 2 } else { 1 };
        std::process::exit(code);
    }
}
