use clap::Parser;

use czkit_cli::{run, Cli};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            e.print().ok();
            std::process::exit(code);
        }
    };
    let code = match run(cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("czkit: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}
