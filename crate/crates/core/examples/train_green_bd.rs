//! Trains on a Birth-Death benchmark with the deterministic reasoner and
//! prints per-epoch losses and the final partition metrics.
//!
//! `cargo run --release --example train_green_bd [seed] [epochs]`

use std::collections::BTreeSet;

use rolecluster::graph::{generate_synthetic, GeneratorConfig};
use rolecluster::pipeline::{train, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1);
    let epochs: Option<usize> = args.next().map(|s| s.parse()).transpose()?;

    let generated = generate_synthetic(&GeneratorConfig {
        seed,
        ..GeneratorConfig::default()
    })?;
    let mut config = RunConfig {
        seed,
        ..RunConfig::desk()
    };
    if let Some(e) = epochs {
        config.epochs = e;
    }
    let (_, report) = train(&config, &generated.graph)?;
    for log in &report.epochs {
        println!(
            "epoch {:>3}  total {:>9.5}  modularity {:>9.5}  temporal {:>8.5}  prototype {:>8.5}  consistency {:>8.5}",
            log.epoch, log.total, log.modularity, log.temporal, log.prototype, log.consistency
        );
    }
    for a in &report.agreement {
        println!(
            "epoch {:>3}  agreement {:.3}  lambda_llm {:.3}",
            a.epoch, a.agreement, a.lambda_llm
        );
    }
    let m = &report.metrics;
    for (s, snap) in m.snapshots.iter().zip(generated.graph.snapshots()) {
        let truth_k = snap
            .labels()
            .map_or(0, |l| l.iter().collect::<BTreeSet<_>>().len());
        let pred_k = report.snapshots[s.t]
            .labels
            .iter()
            .collect::<BTreeSet<_>>()
            .len();
        println!(
            "t={} communities truth {truth_k} found {pred_k}  NMI {:.3}  NF1 {:.3}",
            s.t,
            s.nmi.unwrap_or(f64::NAN),
            s.nf1.as_ref().map_or(f64::NAN, |r| r.nf1)
        );
    }
    println!("NMI  {:.4}", m.mean_nmi.unwrap_or(f64::NAN));
    println!("NF1  {:.4}", m.mean_nf1.unwrap_or(f64::NAN));
    println!("Q    {:.4}", m.mean_modularity);
    if let Some(rcs) = &m.rcs {
        println!("RCS  {:.4}", rcs.normalized);
    }
    println!("EFS  {:.4}", m.efs.unwrap_or(f64::NAN));
    println!("provenance {:?}", report.provenance);
    Ok(())
}
