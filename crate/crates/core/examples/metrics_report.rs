//! Scores progressively corrupted copies of the planted partition to show
//! how NMI, NF1, modularity and conductance respond, and computes role
//! consistency for steady and flipping role affinities.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rolecluster::graph::{generate_synthetic, GeneratorConfig};
use rolecluster::metrics::{evaluate_partitions, rcs};
use rolecluster::tensor::Matrix;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let graph = generate_synthetic(&GeneratorConfig::default())?.graph;
    let truth: Vec<Vec<usize>> = graph
        .snapshots()
        .iter()
        .map(|s| s.labels().unwrap().to_vec())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    println!("corrupted  NMI    NF1    Q      conductance");
    for fraction in [0.0, 0.1, 0.25, 0.5, 1.0] {
        let pred: Vec<Vec<usize>> = truth
            .iter()
            .map(|labels| {
                let k = labels.iter().max().map_or(1, |m| m + 1);
                let mut out = labels.clone();
                let mut order: Vec<usize> = (0..out.len()).collect();
                order.shuffle(&mut rng);
                for &i in &order[..(fraction * out.len() as f64) as usize] {
                    out[i] = rng.random_range(0..k);
                }
                out
            })
            .collect();
        let m = evaluate_partitions(&graph, &pred, Some(&truth))?;
        println!(
            "{:>8.0}%  {:.3}  {:.3}  {:.3}  {:.3}",
            100.0 * fraction,
            m.mean_nmi.unwrap(),
            m.mean_nf1.unwrap(),
            m.mean_modularity,
            m.mean_conductance
        );
    }

    let one_hot = |graph_t: usize, n: usize| {
        let mut pi = Matrix::zeros(n, 5);
        for i in 0..n {
            pi.set(i, (i + graph_t) % 5, 1.0);
        }
        pi
    };
    let steady: Vec<Matrix> = graph
        .snapshots()
        .iter()
        .map(|s| one_hot(0, s.node_count()))
        .collect();
    let flipping: Vec<Matrix> = graph
        .snapshots()
        .iter()
        .map(|s| one_hot(s.t(), s.node_count()))
        .collect();
    println!("RCS steady roles   {:.3}", rcs(&graph, &steady)?.normalized);
    println!(
        "RCS flipping roles {:.3}",
        rcs(&graph, &flipping)?.normalized
    );
    Ok(())
}
