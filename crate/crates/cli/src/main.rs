use clap::Parser;

use superopt_cli::{run, Cli};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(failure) = run(cli) {
        eprintln!("error: {failure}");
        std::process::exit(failure.exit_code());
    }
}
