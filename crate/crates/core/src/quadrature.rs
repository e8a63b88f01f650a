//! Gauss-Hermite rules for expectations under the standard normal measure.

use crate::error::{Error, Result};

/// Nodes and weights such that `sum_i w_i f(x_i) ~ E[f(Z)]`, `Z ~ N(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub order: usize,
}

impl QuadratureGrid {
    /// Probabilists' Gauss-Hermite rule of the given order.
    ///
    /// Nodes come from Newton iteration on the orthonormal Hermite
    /// recurrence, started from the usual asymptotic guesses.
    pub fn gauss_hermite(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidParam {
                name: "quad_order",
                value: 0.0,
                reason: "must be at least 1",
            });
        }
        let n = order;
        let nf = n as f64;
        let pim4 = std::f64::consts::PI.powf(-0.25);
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let half = n.div_ceil(2);
        let mut z = 0.0_f64;
        for i in 0..half {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 1..=n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let step = p1 / pp;
                z -= step;
                if step.abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        if n % 2 == 1 {
            // the recurrence returns a tiny non-zero centre node
            x[n / 2] = 0.0;
        }
        // physicists' rule (weight e^{-x^2}) -> standard normal measure
        let sqrt2 = std::f64::consts::SQRT_2;
        let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
        let mut nodes: Vec<f64> = x.iter().map(|&v| v * sqrt2).collect();
        let mut weights: Vec<f64> = w.iter().map(|&v| v * inv_sqrt_pi).collect();
        nodes.reverse();
        weights.reverse();
        Ok(Self { nodes, weights, order })
    }

    /// `E[f(Z)]` approximated on the grid.
    pub fn expect(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn weights_normalized_and_nodes_symmetric() {
        for order in [1, 2, 5, 20, 60, 61, 120] {
            let g = QuadratureGrid::gauss_hermite(order).unwrap();
            assert_abs_diff_eq!(g.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-13);
            for i in 0..order {
                assert_abs_diff_eq!(g.nodes[i], -g.nodes[order - 1 - i], epsilon = 1e-12);
            }
            assert!(g.nodes.windows(2).all(|p| p[0] < p[1]));
        }
    }

    #[test]
    fn gaussian_moments_are_exact() {
        let g = QuadratureGrid::gauss_hermite(20).unwrap();
        // E[Z^2k] = (2k - 1)!!
        let double_fact = [1.0, 1.0, 3.0, 15.0, 105.0, 945.0, 10395.0];
        for (k, &df) in double_fact.iter().enumerate() {
            let m = g.expect(|z| z.powi(2 * k as i32));
            assert_abs_diff_eq!(m / df, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(g.expect(|z| z.powi(2 * k as i32 + 1)), 0.0, epsilon = 1e-10);
        }
        // E[cos Z] = e^{-1/2}
        assert_abs_diff_eq!(g.expect(f64::cos), (-0.5f64).exp(), epsilon = 1e-14);
    }

    #[test]
    fn zero_order_rejected() {
        assert!(QuadratureGrid::gauss_hermite(0).is_err());
    }
}
