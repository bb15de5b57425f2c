use rand::Rng;

use crate::tensor::Matrix;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(row: &[f64], centers: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centers.rows() {
        let d = sq_dist(row, centers.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// D²-weighted seeding. Duplicate points are handled by falling back to
/// the farthest remaining row when every distance is zero.
pub fn kmeans_plus_plus<R: Rng>(data: &Matrix, k: usize, rng: &mut R) -> Matrix {
    let n = data.rows();
    assert!(n > 0 && k > 0, "k-means needs data and k > 0");
    let mut centers = Matrix::zeros(k, data.cols());
    centers
        .row_mut(0)
        .copy_from_slice(data.row(rng.random_range(0..n)));
    let mut dist: Vec<f64> = (0..n)
        .map(|i| sq_dist(data.row(i), centers.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, d) in dist.iter().enumerate() {
                if target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).copy_from_slice(data.row(pick));
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(data.row(i), centers.row(c)));
        }
    }
    centers
}

/// Lloyd iterations from `init` (or k-means++ seeding). An emptied cluster
/// is moved onto the point farthest from its current center.
pub fn kmeans<R: Rng>(
    data: &Matrix,
    k: usize,
    init: Option<&Matrix>,
    max_iter: usize,
    rng: &mut R,
) -> Matrix {
    let mut centers = match init {
        Some(c) if c.rows() == k && c.cols() == data.cols() => c.clone(),
        _ => kmeans_plus_plus(data, k, rng),
    };
    let n = data.rows();
    let mut labels = vec![usize::MAX; n];
    for _ in 0..max_iter {
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let (c, _) = nearest(data.row(i), &centers);
            if *label != c {
                *label = c;
                changed = true;
            }
        }
        let mut sums = Matrix::zeros(k, data.cols());
        let mut counts = vec![0usize; k];
        for (i, &c) in labels.iter().enumerate() {
            counts[c] += 1;
            for (s, v) in sums.row_mut(c).iter_mut().zip(data.row(i)) {
                *s += v;
            }
        }
        for (c, &count) in counts.iter().enumerate() {
            if count > 0 {
                for (dst, s) in centers.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s / count as f64;
                }
            } else {
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = nearest(data.row(a), &centers).1;
                        let db = nearest(data.row(b), &centers).1;
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .unwrap_or(0);
                centers.row_mut(c).copy_from_slice(data.row(far));
                labels[far] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    centers
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn separates_two_blobs() {
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                if i < 10 {
                    vec![0.0 + i as f64 * 0.01, 0.0]
                } else {
                    vec![5.0, 5.0 + i as f64 * 0.01]
                }
            })
            .collect();
        let data = Matrix::from_rows(&rows).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = kmeans(&data, 2, None, 50, &mut rng);
        let (a, _) = nearest(data.row(0), &c);
        let (b, _) = nearest(data.row(15), &c);
        assert_ne!(a, b);
    }

    #[test]
    fn duplicates_do_not_panic() {
        let data = Matrix::filled(6, 3, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = kmeans(&data, 3, None, 10, &mut rng);
        assert_eq!(c.rows(), 3);
        assert!(c.is_finite());
    }
}
