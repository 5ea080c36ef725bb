use clap::Parser;

fn main() -> std::process::ExitCode {
    nmst::cli::run(nmst::cli::Cli::parse())
}
