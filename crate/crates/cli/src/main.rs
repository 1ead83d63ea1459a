use clap::Parser;

fn main() -> std::process::ExitCode {
    refractor_kit::main_with(refractor_kit::args::Cli::parse())
}
