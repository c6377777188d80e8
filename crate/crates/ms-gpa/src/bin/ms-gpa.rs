use std::process::ExitCode;

use ms_gpa::cli;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match cli::parse_args(&args).and_then(|inv| cli::execute(&inv)) {
        Ok(outcome) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(hint) = cli::remediation(&e) {
                eprintln!("hint: {hint}");
            }
            // config mistakes exit 2, numerical failures exit 3
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
