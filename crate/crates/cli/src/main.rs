use clap::Parser;

fn main() {
    let cli = billm_cli::Cli::parse();
    if let Err(e) = billm_cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(billm_cli::exit_code(&e));
    }
}
