use clap::Parser;

fn main() {
    let cli = mflab_cli::Cli::parse();
    std::process::exit(mflab_cli::main_with(cli));
}
