use clap::Parser;

fn main() {
    env_logger::init();
    std::process::exit(wmpc_cli::run(wmpc_cli::Cli::parse()));
}
