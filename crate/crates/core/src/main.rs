use std::process::ExitCode;

use fdshift::cli::{parse_args, run};

fn main() -> ExitCode {
    let inv = match parse_args(std::env::args_os()) {
        Ok(inv) => inv,
        // usage errors exit with 2, --help/--version with 0
        Err(e) => e.exit(),
    };
    let stdout = std::io::stdout();
    match run(&inv, &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
