use std::process::ExitCode;

use clap::Parser;

use ivcate_cli::{error_json, execute, Cli, SEED_ENV};

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.command.flags().threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("cannot configure {threads} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let env_seed = std::env::var(SEED_ENV).ok();
    match execute(&cli.command, env_seed.as_deref()) {
        Ok(outcome) => {
            print!("{}", outcome.json);
            if outcome.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprint!("{}", error_json(&e));
            ExitCode::from(2)
        }
    }
}
