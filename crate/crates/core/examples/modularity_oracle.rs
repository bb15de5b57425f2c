//! The edge-list modularity loss against the dense `-Tr(Zᵀ B Z)` oracle on a
//! small graph, then its forward/backward time on growing sparse graphs.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use rolecluster::clustering::{modularity_loss, modularity_trace_oracle, EdgeIndex, Similarity};
use rolecluster::graph::{planted_partition, Snapshot};
use rolecluster::tensor::{Matrix, Tape};

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.sample(StandardNormal))
            .collect(),
    )
    .unwrap()
}

fn planted(n: usize, blocks: usize, p_in: f64, p_out: f64, rng: &mut ChaCha8Rng) -> Snapshot {
    let labels: Vec<usize> = (0..n).map(|i| i % blocks).collect();
    let edges = planted_partition(&labels, p_in, p_out, &[], rng);
    Snapshot::new(
        0,
        (0..n).map(|i| format!("n{i}")).collect(),
        edges,
        None,
        Some(labels),
    )
    .unwrap()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let snap = planted(20, 4, 0.6, 0.05, &mut rng);
    let z = gaussian(20, 4, &mut rng);
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let fast = modularity_loss(&mut tape, &EdgeIndex::new(&snap), zv, Similarity::Dot)?;
    let fast = tape.value(fast).item();
    let dense = modularity_trace_oracle(&snap, &z)?;
    println!(
        "20 nodes, {} edges: edge form {fast:.12}, dense oracle {dense:.12}",
        snap.edge_count()
    );

    for n in [1_000usize, 10_000, 100_000] {
        let snap = planted(n, 10, 200.0 / n as f64, 0.0, &mut rng);
        let edges = EdgeIndex::new(&snap);
        let z = gaussian(n, 16, &mut rng);
        let start = Instant::now();
        let mut tape = Tape::new();
        let zv = tape.param(z);
        let loss = modularity_loss(&mut tape, &edges, zv, Similarity::Cosine)?;
        tape.backward(loss)?;
        println!(
            "|V|={n:>6} |E|={:>7}: forward+backward {:.1} ms",
            snap.edge_count(),
            1e3 * start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
