//! Regenerates `configs/default.conf` and `refs/builtin.json`.
//!
//! ```text
//! cargo run --release --example write_defaults
//! ```

use std::path::Path;

use semfield::harness::{builtin_scene, generate_selection, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let cfg = RunConfig::default();
    std::fs::write(root.join("configs/default.conf"), cfg.to_text())?;
    let mut refs = generate_selection(&cfg, builtin_scene(&cfg))?.to_json()?;
    refs.push('\n');
    std::fs::write(root.join("refs/builtin.json"), refs)?;
    Ok(())
}
