//! Gauss–Hermite rules for Gaussian expectations `∫ Dz f(z)`, with
//! `Dz = exp(-z²/2) / √(2π) dz`.

/// Nodes and weights of an `n`-point rule for the standard normal measure.
/// Weights sum to one.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

/// Orthonormal probabilists' Hermite values at `z`: returns
/// `(p_n, p_{n-1}, Σ_{k<n} p_k²)`, the sum infinite when it overflows.
fn orthonormal(n: usize, z: f64) -> (f64, f64, f64) {
    let (mut prev, mut cur) = (0.0, 1.0);
    let mut sum = 0.0;
    let mut rescaled = false;
    for k in 0..n {
        sum += cur * cur;
        let next = (z * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
        prev = cur;
        cur = next;
        if cur.abs() > 1e150 {
            cur *= 1e-150;
            prev *= 1e-150;
            rescaled = true;
        }
    }
    (cur, prev, if rescaled { f64::INFINITY } else { sum })
}

impl GaussHermite {
    /// Golub–Welsch nodes polished by Newton on `p_n`; Christoffel weights
    /// `1 / Σ_k p_k(z)²`.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "quadrature needs at least one node");
        let jacobi = nalgebra::DMatrix::from_fn(n, n, |i, j| {
            if i + 1 == j || j + 1 == i {
                (i.max(j) as f64).sqrt()
            } else {
                0.0
            }
        });
        let mut nodes: Vec<f64> = nalgebra::SymmetricEigen::new(jacobi)
            .eigenvalues
            .iter()
            .copied()
            .collect();
        nodes.sort_by(f64::total_cmp);
        let sqrt_n = (n as f64).sqrt();
        for z in nodes.iter_mut() {
            for _ in 0..4 {
                let (pn, pm, _) = orthonormal(n, *z);
                let step = pn / (sqrt_n * pm);
                if !step.is_finite() {
                    break;
                }
                *z -= step;
                if step.abs() <= 1e-16 * z.abs().max(1.0) {
                    break;
                }
            }
        }
        // Exact symmetry about zero.
        for i in 0..n / 2 {
            let a = 0.5 * (nodes[n - 1 - i] - nodes[i]);
            nodes[i] = -a;
            nodes[n - 1 - i] = a;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        let mut weights: Vec<f64> = nodes.iter().map(|&z| 1.0 / orthonormal(n, z).2).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }

    /// `E[f(z)]` for `z ~ N(0, 1)`.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.pairs().map(|(z, w)| w * f(z)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_moments_exact() {
        for n in [1usize, 2, 5, 20, 199, 398] {
            let q = GaussHermite::new(n);
            assert!((q.expect(|_| 1.0) - 1.0).abs() < 1e-12, "n={n}");
            if n >= 2 {
                assert!((q.expect(|z| z * z) - 1.0).abs() < 1e-12, "n={n}");
            }
            if n >= 3 {
                assert!((q.expect(|z| z.powi(4)) - 3.0).abs() < 1e-11, "n={n}");
            }
        }
    }

    #[test]
    fn nodes_sorted_and_symmetric() {
        let q = GaussHermite::new(199);
        let z = q.nodes();
        assert!(z.windows(2).all(|w| w[0] < w[1]));
        for i in 0..z.len() {
            assert!((z[i] + z[z.len() - 1 - i]).abs() < 1e-12);
        }
    }

    #[test]
    fn smooth_expectation() {
        // E[cos z] = e^{-1/2}
        let q = GaussHermite::new(60);
        assert!((q.expect(f64::cos) - (-0.5f64).exp()).abs() < 1e-14);
    }
}
