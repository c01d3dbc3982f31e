//! Writes the synthetic survey fixture.
//!
//! Usage: `cargo run -p regmix --example make_fixture [OUT_DIR]`
//! (default `fixtures/synthetic` at the workspace root).

use std::path::PathBuf;

#[path = "../tests/common/synthetic.rs"]
mod synthetic;

fn main() -> std::io::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/synthetic")
    });
    std::fs::create_dir_all(&out)?;
    let (survey, realizations) = synthetic::generate();
    std::fs::write(out.join("survey.csv"), survey)?;
    std::fs::write(out.join("realizations.csv"), realizations)?;
    println!("wrote {}", out.display());
    Ok(())
}
