use std::process::ExitCode;

use clap::Parser;
use drr_cli::args::Cli;
use drr_cli::{exit_code, run, EXIT_USAGE};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DRR_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(&cli) {
        Ok(out) => {
            println!("{}", out.summary);
            if let Some(p) = out.result {
                println!("result: {}", p.display());
            }
            ExitCode::from(out.code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let drr_core::Error::Diverged { last_good: Some(p), .. } = &e {
                eprintln!("last good checkpoint: {}", p.display());
            }
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
