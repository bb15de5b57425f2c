//! Generates one synthetic dynamic graph per event family and prints its
//! shape, the generator log and the truth modularity per snapshot.
//!
//! `cargo run --example generate_benchmark [out_dir]`

use std::fs;
use std::path::PathBuf;

use rolecluster::graph::{generate_synthetic, serialize_dynamic_graph, EventKind, GeneratorConfig};
use rolecluster::metrics::modularity;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from);
    for kind in [EventKind::BD, EventKind::EC, EventKind::DR, EventKind::MS] {
        let generated = generate_synthetic(&GeneratorConfig {
            event_kind: kind,
            ..GeneratorConfig::default()
        })?;
        let graph = &generated.graph;
        println!("== {kind}: {} snapshots", graph.len());
        for snap in graph.snapshots() {
            let truth = snap.labels().expect("generated graphs carry labels");
            let k = truth
                .iter()
                .collect::<std::collections::BTreeSet<_>>()
                .len();
            println!(
                "  t={} |V|={} |E|={} communities={k} truth Q={:.3}",
                snap.t(),
                snap.node_count(),
                snap.edge_count(),
                modularity(snap, truth)
            );
        }
        print!("{}", generated.log_text());
        for w in &generated.warnings {
            println!("  warning: {w}");
        }
        if let Some(dir) = &out {
            fs::create_dir_all(dir)?;
            fs::write(
                dir.join(format!("{kind}.graph")),
                serialize_dynamic_graph(graph),
            )?;
            fs::write(dir.join(format!("{kind}.log")), generated.log_text())?;
        }
    }
    Ok(())
}
