use std::io::Write;

use clap::Parser;

fn main() {
    let cli = crflab_cli::Cli::parse();
    match crflab_cli::run(cli) {
        Ok(msg) => {
            let _ = writeln!(std::io::stdout(), "{msg}");
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            std::process::exit(e.exit_code());
        }
    }
}
