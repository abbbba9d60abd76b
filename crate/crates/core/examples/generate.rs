//! Prepares the corpus, trains the quick configuration and generates a
//! requirement from keywords, with and without syntax-element rescoring.
//!
//!     cargo run --release --example generate -- "landing, internal simulator, ground"

use std::path::Path;

use reqgen::ontology::OntologyGraph;
use reqgen::pipeline::{cmd_prepare, cmd_train, load_roles, parse_keywords, ExperimentConfig, Generator};

fn main() -> reqgen::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let keywords = parse_keywords(
        &std::env::args().nth(1).unwrap_or_else(|| "landing, internal simulator, ground".into()),
    );

    let mut config = ExperimentConfig::load(data.join("quick.json"))?;
    config.out_dir = std::env::temp_dir().join("reqgen-example-generate");
    config.model.epochs = 30;

    let coverage = cmd_prepare(&config)?;
    println!("prepared {} records, keyword coverage {:.2}", coverage.prepared, coverage.coverage);
    let (checkpoint, log) = cmd_train(&config, |_, _| {})?;
    println!("trained {} epochs, final loss {:.4}", log.epoch_losses.len(), log.epoch_losses.last().unwrap());

    let graph = OntologyGraph::load(&config.ontology)?;
    let generator = Generator::new(&config, &checkpoint, &graph);
    let roles = load_roles(data.join("roles.json"))?;

    let plain = generator.generate(&keywords, None)?;
    println!("\nkeywords: {keywords:?}");
    println!("without roles: {}", plain.response.text);
    let guided = generator.generate(&keywords, Some(&roles))?;
    println!("with roles:    {}", guided.response.text);
    for c in &guided.response.candidates {
        println!("  {:>8.4}  {:?}  {}", c.score, c.rs4re, c.text);
    }
    if let Some(overlap) = &guided.response.element_overlap {
        println!("element overlap {overlap:?}");
    }
    Ok(())
}
