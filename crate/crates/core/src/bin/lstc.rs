use clap::Parser;

fn main() {
    std::process::exit(lstc::cli::run(lstc::cli::Cli::parse()));
}
