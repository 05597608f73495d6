use clap::Parser;

fn main() {
    let cli = rbspde_lab::args::Cli::parse();
    std::process::exit(rbspde_lab::run(&cli));
}
