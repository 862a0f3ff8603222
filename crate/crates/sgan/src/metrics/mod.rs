//! Evaluation used by the toy experiments: mode assignment and coverage,
//! uncovered-mode curves, KDE log-likelihood, entropy and total variation of
//! the mode distribution, and discriminator level-set grids.

pub mod kde;

use serde::{Deserialize, Serialize};

use crate::nn::{forward_plain, MlpSpec, ParamStore};
use crate::tensor::Matrix;
use crate::{Result, SganError};

pub use kde::{kde_loglik, Kde2d, KdeResult};

/// Per-mode sample counts from nearest-center assignment within a radius.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeAssignment {
    pub counts: Vec<usize>,
    pub unassigned: usize,
    pub eps: f64,
}

impl ModeAssignment {
    pub fn assigned_total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Assign each sample to its nearest center iff the distance is at most
/// `eps`; everything else counts as unassigned.
pub fn assign_modes(samples: &Matrix, centers: &[[f64; 2]], eps: f64) -> Result<ModeAssignment> {
    if centers.is_empty() {
        return Err(SganError::Config("assign_modes requires at least one center".into()));
    }
    if eps <= 0.0 {
        return Err(SganError::Config("assignment radius eps must be > 0".into()));
    }
    let mut counts = vec![0usize; centers.len()];
    let mut unassigned = 0usize;
    for i in 0..samples.rows() {
        let (x, y) = (samples.get(i, 0), samples.get(i, 1));
        let mut best = 0usize;
        let mut best_d2 = f64::INFINITY;
        for (k, c) in centers.iter().enumerate() {
            let d2 = (x - c[0]).powi(2) + (y - c[1]).powi(2);
            if d2 < best_d2 {
                best_d2 = d2;
                best = k;
            }
        }
        if best_d2.sqrt() <= eps {
            counts[best] += 1;
        } else {
            unassigned += 1;
        }
    }
    Ok(ModeAssignment {
        counts,
        unassigned,
        eps,
    })
}

/// A mode is covered iff it received at least `threshold_count` samples.
/// Returns the covered mode indices and the covered fraction.
pub fn mode_coverage(assignment: &ModeAssignment, threshold_count: usize) -> (Vec<usize>, f64) {
    let threshold = threshold_count.max(1);
    let covered: Vec<usize> = assignment
        .counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c >= threshold)
        .map(|(k, _)| k)
        .collect();
    let fraction = covered.len() as f64 / assignment.counts.len() as f64;
    (covered, fraction)
}

/// Default coverage threshold: max(1, floor(0.2 * samples / modes)).
pub fn default_coverage_threshold(samples: usize, modes: usize) -> usize {
    (samples / (5 * modes)).max(1)
}

/// Entropy (nats) of the assigned-sample mode frequencies. None when no
/// sample was assigned (undefined, logged as a sentinel rather than NaN).
pub fn mode_entropy(assignment: &ModeAssignment) -> Option<f64> {
    let total = assignment.assigned_total();
    if total == 0 {
        return None;
    }
    let mut h = 0.0;
    for &c in &assignment.counts {
        if c > 0 {
            let p = c as f64 / total as f64;
            h -= p * p.ln();
        }
    }
    Some(h)
}

/// Total variation between the assigned-mode distribution and uniform:
/// 0.5 * sum |p_m - 1/M|.
pub fn total_variation(assignment: &ModeAssignment) -> Option<f64> {
    let total = assignment.assigned_total();
    if total == 0 {
        return None;
    }
    let m = assignment.counts.len() as f64;
    let tv = assignment
        .counts
        .iter()
        .map(|&c| (c as f64 / total as f64 - 1.0 / m).abs())
        .sum::<f64>()
        * 0.5;
    Some(tv)
}

/// Fraction of modes covered by none of the per-pair sample sets.
pub fn union_uncovered_fraction(
    per_pair_samples: &[Matrix],
    centers: &[[f64; 2]],
    eps: f64,
    threshold_count: usize,
) -> Result<f64> {
    let mut covered = vec![false; centers.len()];
    for samples in per_pair_samples {
        let assignment = assign_modes(samples, centers, eps)?;
        let (ids, _) = mode_coverage(&assignment, threshold_count);
        for k in ids {
            covered[k] = true;
        }
    }
    let uncovered = covered.iter().filter(|&&c| !c).count();
    Ok(uncovered as f64 / centers.len() as f64)
}

/// One row of the uncovered-mode curve.
#[derive(Clone, Debug, Serialize)]
pub struct CurveRow {
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
    /// Seeds whose run failed and were excluded.
    pub failed_seeds: usize,
}

/// Mean fraction of modes uncovered by the whole ensemble, per N, averaged
/// over seeds. `run(n, seed)` produces the uncovered fractions observed at
/// the sampled iterations of one run; failed runs are excluded and counted.
pub fn uncovered_curve<F>(n_values: &[usize], seeds: &[u64], mut run: F) -> Vec<CurveRow>
where
    F: FnMut(usize, u64) -> Result<Vec<f64>>,
{
    let mut rows = Vec::with_capacity(n_values.len());
    for &n in n_values {
        let mut per_seed = Vec::new();
        let mut failed = 0usize;
        for &seed in seeds {
            match run(n, seed) {
                Ok(fractions) if !fractions.is_empty() => {
                    per_seed.push(fractions.iter().sum::<f64>() / fractions.len() as f64);
                }
                Ok(_) => failed += 1,
                Err(_) => failed += 1,
            }
        }
        let k = per_seed.len() as f64;
        let mean = if per_seed.is_empty() {
            f64::NAN
        } else {
            per_seed.iter().sum::<f64>() / k
        };
        let stderr = if per_seed.len() > 1 {
            let var = per_seed.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
            (var / k).sqrt()
        } else {
            0.0
        };
        rows.push(CurveRow {
            n,
            mean,
            stderr,
            failed_seeds: failed,
        });
    }
    rows
}

/// Discriminator outputs evaluated on an R x R lattice over a bounding box.
#[derive(Clone, Debug)]
pub struct LevelSetGrid {
    pub bounds: (f64, f64, f64, f64),
    pub resolution: usize,
    /// values[i][j] = D(x_j, y_i), row-major over the lattice.
    pub values: Matrix,
}

/// Evaluate a scalar-output network on the lattice. `resolution >= 2` so the
/// box corners are included.
pub fn level_set_grid(
    params: &ParamStore,
    spec: &MlpSpec,
    bounds: (f64, f64, f64, f64),
    resolution: usize,
) -> Result<LevelSetGrid> {
    if resolution < 2 {
        return Err(SganError::Config("grid resolution must be >= 2".into()));
    }
    let (xmin, xmax, ymin, ymax) = bounds;
    let mut points = Matrix::zeros(resolution * resolution, 2);
    for i in 0..resolution {
        let y = ymin + (ymax - ymin) * i as f64 / (resolution - 1) as f64;
        for j in 0..resolution {
            let x = xmin + (xmax - xmin) * j as f64 / (resolution - 1) as f64;
            points.set(i * resolution + j, 0, x);
            points.set(i * resolution + j, 1, y);
        }
    }
    let out = forward_plain(params, spec, &points)?;
    let values = Matrix::from_vec(resolution, resolution, out.data().to_vec())?;
    Ok(LevelSetGrid {
        bounds,
        resolution,
        values,
    })
}

/// Per-evaluation metric row, one per generator per eval point.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MetricRecord {
    pub iteration: u64,
    /// 0 = global generator, 1..=N local, N+1 = paired-baseline standard pair.
    pub generator_id: usize,
    /// None for datasets without mixture modes (Swiss Roll).
    pub coverage_fraction: Option<f64>,
    pub coverage_c: f64,
    pub kde_loglik: f64,
    pub kde_bandwidth: f64,
    /// None when no sample was assigned to any mode (undefined metric).
    pub entropy_nats: Option<f64>,
    pub tv: Option<f64>,
    pub d_loss: f64,
    pub g_loss: f64,
}

/// Mass of `probe_real` falling where the generated-sample KDE assigns
/// density above the threshold `t`.
pub fn coverage_c(gen_kde: &Kde2d, t: f64, probe_real: &Matrix) -> Result<f64> {
    if t <= 0.0 {
        return Err(SganError::Config("coverage threshold t must be > 0".into()));
    }
    let n = probe_real.rows();
    if n == 0 {
        return Ok(0.0);
    }
    let ln_t = t.ln();
    let hits = (0..n)
        .filter(|&i| gen_kde.log_density(probe_real.get(i, 0), probe_real.get(i, 1)) > ln_t)
        .count();
    Ok(hits as f64 / n as f64)
}
