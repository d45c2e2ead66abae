use clap::Parser;

fn main() {
    let cli = gtg_cli::Cli::parse();
    if let Err(e) = gtg_cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(gtg_cli::exit_code(&e));
    }
}
