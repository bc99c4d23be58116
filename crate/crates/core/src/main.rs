use clap::Parser;

fn main() {
    let cli = convstep::cli::Cli::parse();
    if let Err(e) = convstep::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.code);
    }
}
