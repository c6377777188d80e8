//! Run a packaged scenario through the CLI layer, exactly as
//! `ms-gpa sf-populations out=...` would, and show the CSV it writes.
//! Reruns are byte-identical, so the output can be committed as a golden file.

use ms_gpa::cli::{self, Command, Invocation, Preset};

fn main() -> ms_gpa::Result<()> {
    let out = std::env::temp_dir().join("ms_gpa_example_sf_populations.csv");
    let inv = Invocation {
        command: Command::Preset(Preset::SfPopulations),
        config_path: None,
        overrides: vec![("out".into(), out.to_string_lossy().into_owned())],
    };
    let outcome = cli::execute(&inv)?;
    for line in &outcome.summary {
        println!("{line}");
    }
    for file in &outcome.files {
        let text = std::fs::read_to_string(file).map_err(ms_gpa::Error::Io)?;
        let mut lines = text.lines();
        println!("-- {} --", file.display());
        for line in lines.by_ref().take(3) {
            println!("{line}");
        }
        println!("... ({} data rows)", text.lines().count() - 1);
    }
    Ok(())
}
