mod args;
mod commands;
mod error;
mod formula;
mod manifest;
mod table;

use clap::error::ErrorKind;
use clap::Parser;

use crate::args::{Cli, Command};
use crate::error::exit;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => exit::OK,
                _ => exit::USAGE,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Command::Fit(args) = &cli.command {
        if args.jobs > 1 {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(args.jobs).build_global() {
                log::warn!("cannot size the thread pool: {e}");
            }
        }
    }
    let code = match commands::run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}
