use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = treetag::cli::Cli::parse();
    if let Err(e) = treetag::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
