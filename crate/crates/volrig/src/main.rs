use clap::Parser;

fn main() {
    let cli = volrig::cli::Cli::parse();
    std::process::exit(volrig::cli::run(cli));
}
