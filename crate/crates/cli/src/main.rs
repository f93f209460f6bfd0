use clap::Parser;

fn main() {
    let cli = scoreq_cli::args::Cli::parse();
    if let Err(e) = scoreq_cli::commands::run(cli) {
        eprintln!("{}", e.to_json());
        std::process::exit(e.exit_code());
    }
}
