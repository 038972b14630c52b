//! Writes the bundled synthetic stance dataset to a directory, so the CLI
//! can be tried end to end without any external data:
//!
//! ```text
//! cargo run -p mppt --example synthetic_dataset -- work/data
//! ```

use std::path::PathBuf;

fn main() {
    let dir = std::env::args().nth(1).unwrap_or_else(|| {
        eprintln!("usage: synthetic_dataset <output-dir>");
        std::process::exit(2);
    });
    match mppt::synthetic::write_dataset(&PathBuf::from(&dir)) {
        Ok(manifest) => println!("wrote {}", manifest.display()),
        Err(err) => {
            eprintln!("failed to write dataset: {err}");
            std::process::exit(1);
        }
    }
}
