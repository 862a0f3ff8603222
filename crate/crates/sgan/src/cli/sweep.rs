//! Ensemble-size sweep: how the fraction of modes missed by every member of
//! an N-pair ensemble falls as N grows. Includes a closed-form stub mode
//! (independent per-pair mode misses with probability `p`, so the expected
//! uncovered fraction is `p^N`) for validating the harness itself.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cli::seeds::{derive_seed_pair, SeedRole};
use crate::cli::RunConfig;
use crate::ensemble::{standalone_pair, standalone_streams, train_pair_step};
use crate::metrics::{uncovered_curve, union_uncovered_fraction, CurveRow};
use crate::Result;

/// Iterations at which a sweep run is evaluated: `points` evenly spaced
/// iterations in `(burn_in, total]`.
pub fn eval_iterations(total: u64, burn_in_fraction: f64, points: usize) -> Vec<u64> {
    let burn = (total as f64 * burn_in_fraction).floor() as u64;
    let span = total.saturating_sub(burn).max(1);
    let points = points.max(1) as u64;
    let mut out: Vec<u64> = (1..=points)
        .map(|k| burn + span * k / points)
        .filter(|&it| it >= 1 && it <= total)
        .collect();
    out.dedup();
    out
}

/// Train `n` independent pairs under `config` (with the given master seed)
/// and report the union uncovered fraction at each eval iteration.
pub fn trained_run(config: &RunConfig, n: usize, master_seed: u64) -> Result<Vec<f64>> {
    let mut resolved = config.resolve()?;
    resolved.master_seed = master_seed;
    let dataset = resolved.dataset.clone();
    let centers = dataset.mode_centers()?;
    let eps = config
        .metrics
        .assignment_eps
        .unwrap_or(3.0 * dataset.component_std);
    let threshold = config.coverage_threshold();

    let mut pairs = Vec::with_capacity(n);
    let mut streams = Vec::with_capacity(n);
    for i in 1..=n as u64 {
        pairs.push(standalone_pair(&resolved, i)?);
        streams.push(standalone_streams(&resolved, i)?);
    }

    let evals = eval_iterations(
        resolved.iterations,
        config.metrics.burn_in_fraction,
        config.metrics.curve_eval_points,
    );
    let mut fractions = Vec::with_capacity(evals.len());
    for it in 1..=resolved.iterations {
        for (pair, stream) in pairs.iter_mut().zip(streams.iter_mut()) {
            train_pair_step(pair, stream, resolved.batch_size)?;
        }
        if evals.contains(&it) {
            let mut sample_sets = Vec::with_capacity(n);
            for (idx, pair) in pairs.iter().enumerate() {
                let seed =
                    derive_seed_pair(master_seed, SeedRole::Eval, it, (idx + 1) as u64);
                sample_sets.push(crate::cli::runner::generate(
                    &pair.generator,
                    seed,
                    config.metrics.eval_samples,
                )?);
            }
            fractions.push(union_uncovered_fraction(
                &sample_sets,
                &centers,
                eps,
                threshold,
            )?);
        }
    }
    Ok(fractions)
}

/// The full trained sweep. Runs are independent and execute on a worker
/// pool; each failed run is excluded from its row and counted.
pub fn trained_sweep(
    config: &RunConfig,
    n_values: &[usize],
    seeds: &[u64],
) -> Vec<CurveRow> {
    let combos: Vec<(usize, u64)> = n_values
        .iter()
        .flat_map(|&n| seeds.iter().map(move |&s| (n, s)))
        .collect();
    let results: std::collections::HashMap<(usize, u64), std::result::Result<Vec<f64>, String>> =
        combos
            .par_iter()
            .map(|&(n, s)| ((n, s), trained_run(config, n, s).map_err(|e| e.to_string())))
            .collect();
    uncovered_curve(n_values, seeds, |n, s| {
        results
            .get(&(n, s))
            .expect("every combo was computed")
            .clone()
            .map_err(crate::SganError::Config)
    })
}

/// Stub sweep: each of `modes` modes is missed by each of the `n` pairs
/// independently with probability `p`, so the expected uncovered fraction
/// is exactly `p^n`.
pub fn stub_sweep(p: f64, modes: usize, n_values: &[usize], seeds: &[u64]) -> Vec<CurveRow> {
    uncovered_curve(n_values, seeds, |n, seed| {
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed_pair(seed, SeedRole::Sweep, n as u64, 0));
        let mut uncovered = 0usize;
        for _ in 0..modes {
            if (0..n).all(|_| rng.gen_bool(p)) {
                uncovered += 1;
            }
        }
        Ok(vec![uncovered as f64 / modes as f64])
    })
}

/// Write a sweep curve as CSV.
pub fn write_curve_csv(rows: &[CurveRow], path: &std::path::Path) -> Result<()> {
    let mut text = String::from("n,mean,stderr,failed_seeds\n");
    for r in rows {
        text.push_str(&format!("{},{},{},{}\n", r.n, r.mean, r.stderr, r.failed_seeds));
    }
    std::fs::write(path, text)?;
    Ok(())
}
