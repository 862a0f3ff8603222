//! Isotropic Gaussian kernel density estimation in 2-D with k-fold
//! cross-validated bandwidth selection.

use crate::tensor::Matrix;
use crate::{Result, SganError};

use std::f64::consts::PI;

/// A fitted 2-D Gaussian KDE.
#[derive(Clone, Debug)]
pub struct Kde2d {
    points: Vec<[f64; 2]>,
    bandwidth: f64,
}

impl Kde2d {
    pub fn new(samples: &Matrix, bandwidth: f64) -> Result<Kde2d> {
        if samples.rows() == 0 {
            return Err(SganError::Config("KDE requires at least one sample".into()));
        }
        if bandwidth <= 0.0 {
            return Err(SganError::Config("KDE bandwidth must be > 0".into()));
        }
        Ok(Kde2d {
            points: rows_of(samples),
            bandwidth,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Log density at (x, y), computed with log-sum-exp.
    pub fn log_density(&self, x: f64, y: f64) -> f64 {
        log_density_of(&self.points, self.bandwidth, x, y)
    }

    pub fn density(&self, x: f64, y: f64) -> f64 {
        self.log_density(x, y).exp()
    }
}

fn rows_of(m: &Matrix) -> Vec<[f64; 2]> {
    (0..m.rows()).map(|i| [m.get(i, 0), m.get(i, 1)]).collect()
}

fn log_density_of(points: &[[f64; 2]], h: f64, x: f64, y: f64) -> f64 {
    let inv = 1.0 / (2.0 * h * h);
    let mut max = f64::NEG_INFINITY;
    let mut exps = Vec::with_capacity(points.len());
    for p in points {
        let e = -((x - p[0]).powi(2) + (y - p[1]).powi(2)) * inv;
        if e > max {
            max = e;
        }
        exps.push(e);
    }
    let sum: f64 = exps.iter().map(|e| (e - max).exp()).sum();
    max + sum.ln() - (points.len() as f64).ln() - (2.0 * PI * h * h).ln()
}

/// Result of a cross-validated KDE log-likelihood evaluation.
#[derive(Clone, Debug)]
pub struct KdeResult {
    /// Mean log density of the held-out points under the fitted KDE.
    pub mean_loglik: f64,
    pub bandwidth: f64,
    /// Set when the fit samples were (numerically) all identical and the
    /// smallest grid bandwidth was used without cross-validation.
    pub degenerate: bool,
}

/// Logarithmic bandwidth grid over [sigma/4, 4*sigma].
pub fn default_bandwidth_grid(sigma: f64, points: usize) -> Vec<f64> {
    let lo = (sigma / 4.0).ln();
    let hi = (4.0 * sigma).ln();
    (0..points)
        .map(|i| (lo + (hi - lo) * i as f64 / (points - 1).max(1) as f64).exp())
        .collect()
}

/// Fit a KDE on `samples` with the bandwidth chosen by k-fold
/// cross-validated log-likelihood on the samples themselves.
pub fn fit_cv(samples: &Matrix, bandwidth_grid: &[f64], folds: usize) -> Result<(Kde2d, bool)> {
    if bandwidth_grid.is_empty() || bandwidth_grid.iter().any(|&h| h <= 0.0) {
        return Err(SganError::Config(
            "bandwidth grid must be non-empty and positive".into(),
        ));
    }
    let points = rows_of(samples);
    if points.is_empty() {
        return Err(SganError::Config("KDE requires at least one sample".into()));
    }
    let degenerate = points
        .iter()
        .all(|p| (p[0] - points[0][0]).abs() < 1e-12 && (p[1] - points[0][1]).abs() < 1e-12);
    if degenerate || points.len() < folds.max(2) {
        let h = bandwidth_grid.iter().cloned().fold(f64::INFINITY, f64::min);
        return Ok((Kde2d::new(samples, h)?, true));
    }

    let folds = folds.max(2);
    let mut best_h = bandwidth_grid[0];
    let mut best_score = f64::NEG_INFINITY;
    for &h in bandwidth_grid {
        let mut score = 0.0;
        let mut count = 0usize;
        for f in 0..folds {
            // contiguous folds keep the split deterministic
            let lo = f * points.len() / folds;
            let hi = (f + 1) * points.len() / folds;
            if lo == hi {
                continue;
            }
            let train: Vec<[f64; 2]> = points[..lo]
                .iter()
                .chain(points[hi..].iter())
                .cloned()
                .collect();
            for p in &points[lo..hi] {
                score += log_density_of(&train, h, p[0], p[1]);
                count += 1;
            }
        }
        let score = score / count as f64;
        if score > best_score {
            best_score = score;
            best_h = h;
        }
    }
    Ok((Kde2d::new(samples, best_h)?, false))
}

/// Gaussian KDE fitted on the generated samples with cross-validated
/// bandwidth; returns the mean log density of the held-out real points.
pub fn kde_loglik(
    gen_samples: &Matrix,
    held_out_real: &Matrix,
    bandwidth_grid: &[f64],
) -> Result<KdeResult> {
    let (kde, degenerate) = fit_cv(gen_samples, bandwidth_grid, 5)?;
    let n = held_out_real.rows();
    if n == 0 {
        return Err(SganError::Config("kde_loglik requires held-out points".into()));
    }
    let mean = (0..n)
        .map(|i| kde.log_density(held_out_real.get(i, 0), held_out_real.get(i, 1)))
        .sum::<f64>()
        / n as f64;
    Ok(KdeResult {
        mean_loglik: mean,
        bandwidth: kde.bandwidth(),
        degenerate,
    })
}

/// Value below which a fraction `q` of the given points' KDE density falls.
/// Used for the percentile construction of the coverage threshold.
pub fn density_percentile(kde: &Kde2d, points: &Matrix, q: f64) -> f64 {
    let mut densities: Vec<f64> = (0..points.rows())
        .map(|i| kde.density(points.get(i, 0), points.get(i, 1)))
        .collect();
    densities.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((q * densities.len() as f64).floor() as usize).min(densities.len() - 1);
    densities[idx]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DatasetSpec, SampleStream};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_point_kernel_matches_closed_form() {
        let samples = Matrix::from_vec(1, 2, vec![0.0, 0.0]).unwrap();
        let h = 0.3;
        let kde = Kde2d::new(&samples, h).unwrap();
        let (x, y) = (0.2, -0.1);
        let expected =
            (-(x * x + y * y) / (2.0 * h * h)) - (2.0 * PI * h * h).ln();
        assert_abs_diff_eq!(kde.log_density(x, y), expected, epsilon = 1e-12);
    }

    #[test]
    fn far_point_has_very_low_log_density() {
        let spec = DatasetSpec::circle(8);
        let mut stream = SampleStream::new(spec, 9).unwrap();
        let samples = stream.next_batch(200);
        let kde = Kde2d::new(&samples, 0.05).unwrap();
        assert!(kde.log_density(100.0, 100.0) < -50.0);
    }

    #[test]
    fn collapsed_samples_are_flagged_degenerate() {
        let samples = Matrix::from_vec(50, 2, vec![1.5; 100]).unwrap();
        let grid = default_bandwidth_grid(0.02, 9);
        let (kde, degenerate) = fit_cv(&samples, &grid, 5).unwrap();
        assert!(degenerate);
        let h_min = grid.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_abs_diff_eq!(kde.bandwidth(), h_min, epsilon = 1e-15);
    }

    #[test]
    fn bandwidth_grid_spans_quarter_to_four_sigma() {
        let grid = default_bandwidth_grid(0.02, 9);
        assert_eq!(grid.len(), 9);
        assert_abs_diff_eq!(grid[0], 0.005, epsilon = 1e-12);
        assert_abs_diff_eq!(grid[8], 0.08, epsilon = 1e-12);
        for w in grid.windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn kde_density_integrates_to_one() {
        // Monte Carlo integral of the fitted density over a box containing
        // effectively all the mass.
        let spec = DatasetSpec::circle(8);
        let mut stream = SampleStream::new(spec, 11).unwrap();
        let samples = stream.next_batch(150);
        let kde = Kde2d::new(&samples, 0.05).unwrap();

        let (lo, hi) = (-2.5, 2.5);
        let area = (hi - lo) * (hi - lo);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let trials = 200_000;
        let mut acc = 0.0;
        for _ in 0..trials {
            let x = rng.gen_range(lo..hi);
            let y = rng.gen_range(lo..hi);
            acc += kde.density(x, y);
        }
        let integral = acc / trials as f64 * area;
        assert!(
            (0.95..=1.0 + 0.02).contains(&integral),
            "integral = {integral}"
        );
    }

    #[test]
    fn loglik_close_to_analytic_mixture_value() {
        // Fit on mixture samples, evaluate held-out mixture samples, and
        // compare against the mean log density under the true mixture.
        let spec = DatasetSpec::circle(8);
        let centers = spec.mode_centers().unwrap();
        let sigma = spec.component_std;
        let mut stream = SampleStream::new(spec, 21).unwrap();
        let fit = stream.next_batch(500);
        let held = stream.next_batch(256);

        let grid = default_bandwidth_grid(sigma, 9);
        let result = kde_loglik(&fit, &held, &grid).unwrap();
        assert!(!result.degenerate);

        let true_log_density = |x: f64, y: f64| {
            let inv = 1.0 / (2.0 * sigma * sigma);
            let mut acc = 0.0;
            for c in &centers {
                acc += (-((x - c[0]).powi(2) + (y - c[1]).powi(2)) * inv).exp();
            }
            (acc / centers.len() as f64 / (2.0 * PI * sigma * sigma)).ln()
        };
        let analytic = (0..held.rows())
            .map(|i| true_log_density(held.get(i, 0), held.get(i, 1)))
            .sum::<f64>()
            / held.rows() as f64;
        assert!(
            (result.mean_loglik - analytic).abs() < 0.3,
            "kde = {}, analytic = {}",
            result.mean_loglik,
            analytic
        );
    }

    #[test]
    fn density_percentile_cuts_off_the_requested_mass() {
        let spec = DatasetSpec::circle(8);
        let mut stream = SampleStream::new(spec, 31).unwrap();
        let samples = stream.next_batch(400);
        let kde = Kde2d::new(&samples, 0.05).unwrap();
        let t = density_percentile(&kde, &samples, 0.05);
        assert!(t > 0.0);
        let above = (0..samples.rows())
            .filter(|&i| kde.density(samples.get(i, 0), samples.get(i, 1)) > t)
            .count() as f64
            / samples.rows() as f64;
        assert!((above - 0.95).abs() < 0.03, "fraction above = {above}");
    }
}
