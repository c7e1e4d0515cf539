use clap::Parser;

fn main() {
    let cli = proposa::cli::Cli::parse();
    std::process::exit(proposa::cli::main_entry(cli));
}
