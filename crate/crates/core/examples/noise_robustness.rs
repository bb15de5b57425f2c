//! Trains once on a clean graph, then clusters copies with increasing
//! amounts of random edges added and reports NMI against the planted truth.

use rolecluster::graph::{generate_synthetic, inject_noise, GeneratorConfig};
use rolecluster::pipeline::{cluster_report, evaluate_run, train, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let graph = generate_synthetic(&GeneratorConfig::default())?.graph;
    let config = RunConfig::desk();
    let (model, report) = train(&config, &graph)?;
    let clean = report.metrics.mean_nmi.unwrap();
    println!("noise  NMI    drop");
    println!("  0%   {clean:.3}");
    for fraction in [0.1, 0.2, 0.3] {
        let (noisy, _) = inject_noise(&graph, fraction, 7)?;
        let clustered = cluster_report(&model, &noisy, None)?;
        // Noise only adds edges, so the clean labels still apply.
        let nmi = evaluate_run(&graph, &clustered.snapshots, &config)?
            .mean_nmi
            .unwrap();
        println!(
            "{:>3.0}%   {nmi:.3}  {:>5.1}%",
            100.0 * fraction,
            100.0 * (clean - nmi) / clean
        );
    }
    Ok(())
}
