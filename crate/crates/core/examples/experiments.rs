//! Cross-validation and the ablation grid with the quick configuration.
//!
//!     cargo run --release --example experiments

use std::path::Path;

use reqgen::pipeline::{cmd_ablate, cmd_crossval, cmd_prepare, ExperimentConfig};

fn main() -> reqgen::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let mut config = ExperimentConfig::load(data.join("quick.json"))?;
    config.out_dir = std::env::temp_dir().join("reqgen-example-experiments");
    cmd_prepare(&config)?;

    let crossval = cmd_crossval(&config)?;
    println!("{}-fold cross-validation\n{}", crossval.k, crossval.table());

    let ablation = cmd_ablate(&config)?;
    println!("ablation, {} settings\n{}", ablation.rows.len(), ablation.table());
    println!("tables written to {}", config.out_dir.display());
    Ok(())
}
