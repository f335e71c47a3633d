use clap::Parser;

use clockprobe_cli::{configure_workers, run, Cli};

fn main() {
    let cli = Cli::parse();
    let result = configure_workers().and_then(|_| run(&cli.command));
    match result {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
