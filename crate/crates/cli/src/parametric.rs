//! Discretized lognormal laws with an exactly preserved mean.

use statrs::distribution::{ContinuousCDF, Normal};
use superhedge_core::marginals::{Grid, Marginal, MarginalError};

/// Law of `X = exp(log(mean) - sigma^2 / 2 + sigma Z)` with
/// `sigma^2 = log_variance`, cut into `grid_size - 1` cells of equal mass
/// below the `truncation` quantile plus one tail cell above it. Each cell's
/// mass sits at its conditional mean, so the tail mass lands on the top level
/// and the mean is kept; the top level is then nudged so the dot product
/// matches `mean` to rounding.
pub fn lognormal(mean: f64, log_variance: f64, grid_size: usize, truncation: f64) -> Result<Marginal, MarginalError> {
    assert!(grid_size >= 2 && truncation > 0.0 && truncation < 1.0);
    let sigma = log_variance.sqrt();
    let z = Normal::new(0.0, 1.0).expect("standard normal");
    // E[X; Z <= u] = mean * Phi(u - sigma).
    let partial = |u: f64| mean * z.cdf(u - sigma);

    let cells = grid_size - 1;
    let cell_mass = truncation / cells as f64;
    let mut cuts = Vec::with_capacity(grid_size + 1);
    cuts.push(f64::NEG_INFINITY);
    for j in 1..=cells {
        cuts.push(z.inverse_cdf(j as f64 * cell_mass));
    }
    cuts.push(f64::INFINITY);

    let mut weights = vec![cell_mass; cells];
    weights.push(1.0 - truncation);
    let mut levels: Vec<f64> = cuts
        .windows(2)
        .zip(&weights)
        .map(|(u, w)| {
            let lo = if u[0].is_finite() { partial(u[0]) } else { 0.0 };
            let hi = if u[1].is_finite() { partial(u[1]) } else { mean };
            (hi - lo) / w
        })
        .collect();
    let below: f64 = levels[..cells].iter().zip(&weights).map(|(x, w)| x * w).sum();
    levels[cells] = (mean - below) / weights[cells];
    Marginal::new(Grid::new(levels)?, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_mass_are_kept() {
        for (mean, var, size, q) in [(92.0, 0.05, 5, 0.98), (100.0, 0.3, 12, 0.999), (40.0, 0.01, 2, 0.5)] {
            let law = lognormal(mean, var, size, q).unwrap();
            assert_eq!(law.grid().len(), size);
            assert!((law.mean() - mean).abs() <= 1e-12 * mean, "{} vs {mean}", law.mean());
            assert!((law.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            assert!((law.weights()[size - 1] - (1.0 - q)).abs() <= 1e-15);
        }
    }

    #[test]
    fn top_level_carries_the_tail() {
        // The tail cell's conditional mean lies above the truncation quantile.
        let (mean, var, q) = (100.0_f64, 0.04_f64, 0.95);
        let law = lognormal(mean, var, 6, q).unwrap();
        let sigma = var.sqrt();
        let quantile = (mean.ln() - 0.5 * var + sigma * Normal::new(0.0, 1.0).unwrap().inverse_cdf(q)).exp();
        assert!(law.top() > quantile);
        assert!(law.grid().points()[4] < quantile);
    }

    #[test]
    fn finer_grids_approach_the_continuous_put_price() {
        // E[(K - X)^+] for the lognormal, by Black's formula with zero rates.
        let (mean, var, k) = (100.0_f64, 0.04_f64, 95.0);
        let s = var.sqrt();
        let n = Normal::new(0.0, 1.0).unwrap();
        let d1 = ((mean / k).ln() + 0.5 * var) / s;
        let exact = k * n.cdf(-(d1 - s)) - mean * n.cdf(-d1);
        let err = |size| {
            let law = lognormal(mean, var, size, 0.999).unwrap();
            (law.expect(|x| (k - x).max(0.0)) - exact).abs()
        };
        assert!(err(200) < err(10));
        assert!(err(200) < 0.05, "{}", err(200));
    }
}
