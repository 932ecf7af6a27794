use clap::Parser;

fn main() {
    let cli = ccqn::cli::Cli::parse();
    if let Err(e) = ccqn::cli::execute(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
