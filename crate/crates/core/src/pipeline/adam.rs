use crate::tensor::Matrix;

/// Adam with bias correction, one moment pair per parameter slot.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(lr: f64, shapes: &[[usize; 2]]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|&[r, c]| Matrix::zeros(r, c)).collect(),
            v: shapes.iter().map(|&[r, c]| Matrix::zeros(r, c)).collect(),
        }
    }

    /// Clears the moments of one slot, which may change shape (used when a
    /// parameter is refitted).
    pub fn reset_slot(&mut self, slot: usize, [r, c]: [usize; 2]) {
        self.m[slot] = Matrix::zeros(r, c);
        self.v[slot] = Matrix::zeros(r, c);
    }

    /// `grads[i]` of `None` leaves parameter `i` untouched.
    pub fn step(&mut self, params: Vec<&mut Matrix>, grads: &[Option<&Matrix>]) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (slot, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            let m = self.m[slot].data_mut();
            let v = self.v[slot].data_mut();
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                *w -= self.lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic() {
        let mut x = Matrix::from_rows(&[vec![3.0, -2.0]]).unwrap();
        let mut opt = Adam::new(0.1, &[[1, 2]]);
        for _ in 0..500 {
            let g = x.scale(2.0);
            opt.step(vec![&mut x], &[Some(&g)]);
        }
        assert!(x.frobenius_norm() < 1e-2, "{x:?}");
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut x = Matrix::scalar(1.0);
        let mut opt = Adam::new(0.01, &[[1, 1]]);
        opt.step(vec![&mut x], &[Some(&Matrix::scalar(123.0))]);
        assert!((x.item() - 0.99).abs() < 1e-9);
    }
}
