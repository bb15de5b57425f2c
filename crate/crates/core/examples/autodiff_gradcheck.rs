//! Builds a small two-layer network on the tape, backpropagates, and
//! compares the gradients against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use rolecluster::tensor::{check_gradients, Matrix, Tape, Var};

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

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = gaussian(8, 5, &mut rng);
    let w1 = gaussian(5, 6, &mut rng);
    let w2 = gaussian(6, 3, &mut rng);

    // loss = mean over rows of -log softmax(tanh(x W1) W2)[row % 3]
    let mut target = Matrix::zeros(8, 3);
    for i in 0..8 {
        target.set(i, i % 3, 1.0 / 8.0);
    }
    let loss = |tape: &mut Tape, p: &[Var]| {
        let xv = tape.constant(x.clone());
        let h = tape.matmul(xv, p[0])?;
        let h = tape.tanh(h)?;
        let logits = tape.matmul(h, p[1])?;
        let probs = tape.row_softmax(logits)?;
        let logp = tape.log(probs)?;
        let t = tape.constant(target.clone());
        let picked = tape.dot(logp, t)?;
        tape.scalar_mul(picked, -1.0)
    };

    let mut tape = Tape::new();
    let p = [tape.param(w1.clone()), tape.param(w2.clone())];
    let out = loss(&mut tape, &p)?;
    let grads = tape.backward(out)?;
    println!("loss {:.6}", tape.value(out).item());
    println!("|dL/dW1| {:.6}", grads.get(p[0]).unwrap().frobenius_norm());
    println!("|dL/dW2| {:.6}", grads.get(p[1]).unwrap().frobenius_norm());

    let report = check_gradients(loss, &[w1, w2], 1e-6)?;
    println!(
        "finite differences: {} entries, max relative error {:.2e}",
        report.entries_checked, report.max_relative_error
    );
    Ok(())
}
