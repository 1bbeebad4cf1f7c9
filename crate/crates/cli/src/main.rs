use clap::error::ErrorKind;
use clap::Parser;
use swipeforge_cli::args::Cli;
use swipeforge_cli::{commands, CliError};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            e.exit()
        }
        Err(e) => {
            let _ = e.print();
            eprintln!("{}", CliError::Usage(e.kind().to_string()).to_line());
            std::process::exit(2);
        }
    };
    if let Err(e) = commands::run(cli.command) {
        eprintln!("{}", e.to_line());
        std::process::exit(e.exit_code());
    }
}
