//! Writes the shipped scenario files into the directory given as the first argument.

use quiver_wp::scenario::presets;
use std::path::PathBuf;

fn main() -> std::io::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "scenarios".into()));
    std::fs::create_dir_all(&dir)?;
    for (file, scn) in presets::shipped() {
        std::fs::write(dir.join(file), scn.to_canonical())?;
    }
    Ok(())
}
