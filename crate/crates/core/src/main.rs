use clap::Parser;
use dscnn::cli::{self, Cli};

fn main() {
    let code = match Cli::try_parse() {
        Ok(c) => cli::run(c),
        Err(e) => {
            let code = if e.use_stderr() { cli::EXIT_USAGE } else { cli::EXIT_OK };
            let _ = e.print();
            code
        }
    };
    std::process::exit(code);
}
