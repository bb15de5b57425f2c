//! Trains on a small graph and prints the semantic description and the
//! assignment explanation for one node.
//!
//! `cargo run --release --example explain_node [node] [snapshot]`

use rolecluster::graph::{generate_synthetic, GeneratorConfig};
use rolecluster::pipeline::{describe_all, train, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let node = args.next().unwrap_or_else(|| "v0".to_string());
    let t: Option<usize> = args.next().map(|s| s.parse()).transpose()?;

    let graph = generate_synthetic(&GeneratorConfig {
        n_nodes: 90,
        n_communities: 3,
        n_snapshots: 4,
        ..GeneratorConfig::default()
    })?
    .graph;
    let config = RunConfig {
        epochs: 12,
        warmup_epochs: 4,
        reasoning_every: 4,
        ..RunConfig::desk()
    };
    let (_, report) = train(&config, &graph)?;
    let explanation = report
        .explanation(&node, t)
        .ok_or_else(|| format!("node `{node}` not found"))?;

    let descriptions = describe_all(&graph, &report.snapshots, &config)?;
    if let Some(d) = descriptions
        .iter()
        .find(|d| d.node == node && d.t == explanation.t)
    {
        println!("--- description ---\n{}\n", d.text());
        println!("{} checkable claims", d.claims.len());
    }
    println!("--- explanation ---\n{}", explanation.text());
    Ok(())
}
