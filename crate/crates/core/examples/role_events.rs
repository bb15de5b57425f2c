//! Trains on a merge/split benchmark and prints, per snapshot, the
//! dominant-role census and the community events detected from role
//! composition shifts.

use std::collections::BTreeMap;

use rolecluster::graph::{generate_synthetic, EventKind, GeneratorConfig};
use rolecluster::pipeline::{train, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let generated = generate_synthetic(&GeneratorConfig {
        event_kind: EventKind::MS,
        ..GeneratorConfig::default()
    })?;
    print!("planted:\n{}", generated.log_text());

    let (_, report) = train(&RunConfig::desk(), &generated.graph)?;
    for snap in &report.snapshots {
        let mut census: BTreeMap<&str, usize> = BTreeMap::new();
        for role in &snap.roles {
            *census.entry(role.name()).or_default() += 1;
        }
        println!("t={} roles {census:?}", snap.t);
        for e in snap.events.iter().filter(|e| e.label.name() != "Stable") {
            let c = |id: Option<usize>| id.map_or("-".to_string(), |c| format!("C{c}"));
            println!(
                "    {:<11} {} ({} nodes) -> {} ({} nodes)",
                e.label,
                c(e.community_t),
                e.size_t,
                c(e.community_t1),
                e.size_t1
            );
        }
    }
    Ok(())
}
