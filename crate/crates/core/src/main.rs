use std::process::ExitCode;

use clap::Parser;
use conicflow::cli::{self, Cli};

fn main() -> ExitCode {
    let args = Cli::parse();
    if let Ok(n) = std::env::var("CONICFLOW_THREADS") {
        match n.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                let e = conicflow::Error::Config(format!("CONICFLOW_THREADS must be a positive integer, got {n:?}"));
                eprintln!("{}", cli::error_json(&e));
                return ExitCode::from(2);
            }
        }
    }
    match cli::run(args.command, &args.config) {
        Ok(files) => {
            for p in files {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", cli::error_json(&e));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
