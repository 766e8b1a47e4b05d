use clap::Parser;

fn main() {
    let cli = kslab_cli::Cli::parse();
    std::process::exit(kslab_cli::run(cli));
}
