use clap::Parser;

use gorl_cli::{run, Cli, CliError};

fn main() {
    let cli = Cli::parse();
    let result: anyhow::Result<String> = run(&cli).map_err(anyhow::Error::from);
    match result {
        Ok(line) => println!("{line}"),
        Err(e) => {
            eprintln!("error: {e}");
            let code = e.downcast_ref::<CliError>().map_or(1, CliError::exit_code);
            std::process::exit(code);
        }
    }
}
