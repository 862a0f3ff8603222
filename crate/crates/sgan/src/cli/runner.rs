//! Drives a full training run and writes its artifact tree:
//!
//! ```text
//! out/
//!   config.echo        resolved configuration
//!   seeds.log          derived seed table
//!   metrics.jsonl      one MetricRecord per generator per eval point
//!   samples/           generator sample dumps (CSV)
//!   grids/             discriminator level-set grids (CSV)
//!   checkpoints/       resumable binary checkpoints
//!   summary.json       end-of-run summary
//!   error.json         written instead when training diverges
//! ```

use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::cli::seeds::{derive_seed_pair, seed_table, SeedRole};
use crate::cli::{checkpoint, RunConfig};
use crate::data::{noise_batch, SampleStream};
use crate::ensemble::{Ensemble, IterationLosses, RunMode};
use crate::metrics::kde::{default_bandwidth_grid, density_percentile, fit_cv, kde_loglik};
use crate::metrics::{
    assign_modes, coverage_c, level_set_grid, mode_coverage, mode_entropy, total_variation,
    MetricRecord,
};
use crate::nn::{forward_plain, Network};
use crate::tensor::Matrix;
use crate::{Result, SganError};

/// Distinguished stream index for the shared held-out real batch of one
/// evaluation point (far outside any generator id).
const EVAL_HELD_OUT_INDEX: u64 = 1_000_000;

pub struct RunArtifacts {
    pub records: Vec<MetricRecord>,
    pub final_checkpoint: PathBuf,
    pub ensemble: Ensemble,
}

/// Execute a run from scratch into `out_dir`.
pub fn run(config: &RunConfig, out_dir: &Path) -> Result<RunArtifacts> {
    let ensemble = Ensemble::init(&config.resolve()?)?;
    run_from(config, out_dir, ensemble)
}

/// Resume a checkpointed run and continue into `out_dir` (which may be the
/// original run directory; metrics are appended).
pub fn resume(config: &RunConfig, out_dir: &Path, checkpoint_path: &Path) -> Result<RunArtifacts> {
    let resolved = config.resolve()?;
    let ensemble = checkpoint::load(checkpoint_path, &resolved, config.config_hash())?;
    run_from(config, out_dir, ensemble)
}

fn run_from(config: &RunConfig, out_dir: &Path, mut ensemble: Ensemble) -> Result<RunArtifacts> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::create_dir_all(out_dir.join("samples"))?;
    std::fs::create_dir_all(out_dir.join("grids"))?;
    std::fs::create_dir_all(out_dir.join("checkpoints"))?;

    std::fs::write(out_dir.join("config.echo"), config.echo_toml())?;
    write_seed_log(config, out_dir)?;

    let mut metrics_file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(out_dir.join("metrics.jsonl"))?;

    let total = config.run.iterations;
    let mut all_records = Vec::new();
    while ensemble.iteration < total {
        let losses = match ensemble.sgan_iteration() {
            Ok(l) => l,
            Err(e) => {
                write_error(out_dir, &e)?;
                return Err(e);
            }
        };
        let it = ensemble.iteration; // post-increment iteration count

        if it % config.run.eval_every == 0 || it == total {
            let records = evaluate(&ensemble, config, Some(&losses))?;
            for r in &records {
                let line = serde_json::to_string(r)
                    .map_err(|e| SganError::Config(format!("metric serialization: {e}")))?;
                writeln!(metrics_file, "{line}")?;
            }
            all_records.extend(records);
        }

        if config.output.sample_dump_every > 0 && it % config.output.sample_dump_every == 0 {
            dump_samples(&ensemble, config, out_dir, it)?;
            dump_grids(&ensemble, config, out_dir, it)?;
        }

        if config.output.checkpoint_every > 0 && it % config.output.checkpoint_every == 0 && it != total {
            let path = out_dir.join(format!("checkpoints/iter_{it:05}.ckpt"));
            checkpoint::save(&ensemble, config.config_hash(), &path)?;
        }
    }
    metrics_file.flush()?;

    let final_checkpoint = out_dir.join(format!("checkpoints/iter_{total:05}.ckpt"));
    checkpoint::save(&ensemble, config.config_hash(), &final_checkpoint)?;
    write_summary(config, out_dir, &ensemble, &all_records)?;

    Ok(RunArtifacts {
        records: all_records,
        final_checkpoint,
        ensemble,
    })
}

/// All generators evaluated at one point: id 0 is the global generator,
/// 1..=N the local ones, N+1 the paired-baseline standard pair.
fn generators(ensemble: &Ensemble) -> Vec<(usize, &Network)> {
    let mut out = vec![(0usize, &ensemble.global_pair.generator)];
    for (i, pair) in ensemble.locals.iter().enumerate() {
        out.push((i + 1, &pair.generator));
    }
    if let Some(pair) = &ensemble.baseline_pair {
        out.push((ensemble.locals.len() + 1, &pair.generator));
    }
    out
}

/// Compute one [`MetricRecord`] per generator at the ensemble's current
/// iteration. Deterministic in (master seed, iteration, generator id).
pub fn evaluate(
    ensemble: &Ensemble,
    config: &RunConfig,
    losses: Option<&IterationLosses>,
) -> Result<Vec<MetricRecord>> {
    let it = ensemble.iteration;
    let master = config.run.master_seed;
    let dataset = config.dataset_spec();
    let centers = dataset.mode_centers().ok();
    let eps = config.assignment_eps();
    let threshold = config.coverage_threshold();

    // One shared held-out real batch per eval point.
    let held_out = {
        let seed = derive_seed_pair(master, SeedRole::Eval, it, EVAL_HELD_OUT_INDEX);
        let mut stream = SampleStream::new(dataset.clone(), seed)?;
        stream.next_batch(config.metrics.held_out_samples)
    };
    let sigma = if dataset.component_std > 0.0 {
        dataset.component_std
    } else {
        0.1
    };
    let grid = default_bandwidth_grid(sigma, config.metrics.bandwidth_grid_points);

    let mut records = Vec::new();
    for (gen_id, net) in generators(ensemble) {
        let seed = derive_seed_pair(master, SeedRole::Eval, it, gen_id as u64);
        let samples = generate(net, seed, config.metrics.eval_samples)?;

        let (coverage_fraction, entropy_nats, tv) = match &centers {
            Some(centers) => {
                let assignment = assign_modes(&samples, centers, eps)?;
                let (_, fraction) = mode_coverage(&assignment, threshold);
                (
                    Some(fraction),
                    mode_entropy(&assignment),
                    total_variation(&assignment),
                )
            }
            None => (None, None, None),
        };

        let (kde_ll, bandwidth, cov_c) = if config.metrics.kde_enabled {
            let subset = take_rows(&samples, config.metrics.kde_samples.min(samples.rows()))?;
            let result = kde_loglik(&subset, &held_out, &grid)?;
            let (gen_kde, _) = fit_cv(&subset, &grid, 5)?;
            // t: 5th percentile of the generator's own density, so 95% of
            // generated mass lies in the region counted as covered.
            let t = density_percentile(&gen_kde, &subset, 0.05).max(f64::MIN_POSITIVE);
            let c = coverage_c(&gen_kde, t, &held_out)?;
            (result.mean_loglik, result.bandwidth, c)
        } else {
            (0.0, 0.0, 0.0)
        };

        let (d_loss, g_loss) = losses_for(losses, gen_id);
        records.push(MetricRecord {
            iteration: it,
            generator_id: gen_id,
            coverage_fraction,
            coverage_c: cov_c,
            kde_loglik: kde_ll,
            kde_bandwidth: bandwidth,
            entropy_nats,
            tv,
            d_loss,
            g_loss,
        });
    }
    Ok(records)
}

fn losses_for(losses: Option<&IterationLosses>, gen_id: usize) -> (f64, f64) {
    let Some(l) = losses else { return (0.0, 0.0) };
    if gen_id == 0 {
        (l.global_d, l.global_g)
    } else if gen_id <= l.local_d.len() {
        (l.local_d[gen_id - 1], l.local_g[gen_id - 1])
    } else if let Some(p) = &l.paired {
        (p.standard_d_loss, p.standard_g_loss)
    } else {
        (0.0, 0.0)
    }
}

/// Generate `count` samples from a generator, seeded for reproducibility.
pub fn generate(net: &Network, seed: u64, count: usize) -> Result<Matrix> {
    let z = noise_batch(seed, count, net.spec.input_dim())?;
    forward_plain(&net.params, &net.spec, &z)
}

fn take_rows(m: &Matrix, n: usize) -> Result<Matrix> {
    let n = n.max(1).min(m.rows());
    let cols = m.cols();
    Matrix::from_vec(n, cols, m.data()[..n * cols].to_vec())
}

fn dump_samples(ensemble: &Ensemble, config: &RunConfig, out_dir: &Path, it: u64) -> Result<()> {
    for (gen_id, net) in generators(ensemble) {
        let seed = derive_seed_pair(config.run.master_seed, SeedRole::Eval, it, gen_id as u64);
        let samples = generate(net, seed, config.metrics.eval_samples)?;
        let mut text = String::from("x,y\n");
        for i in 0..samples.rows() {
            text.push_str(&format!("{},{}\n", samples.get(i, 0), samples.get(i, 1)));
        }
        std::fs::write(
            out_dir.join(format!("samples/iter_{it:05}_gen{gen_id}.csv")),
            text,
        )?;
    }
    Ok(())
}

/// Write level-set grids for the ensemble's current iteration.
pub fn emit_grids(ensemble: &Ensemble, config: &RunConfig, out_dir: &Path) -> Result<()> {
    dump_grids(ensemble, config, out_dir, ensemble.iteration)
}

fn dump_grids(ensemble: &Ensemble, config: &RunConfig, out_dir: &Path, it: u64) -> Result<()> {
    let bounds = config.dataset_spec().bounding_box();
    let resolution = config.output.grid_resolution;
    let mut discriminators = vec![(0usize, &ensemble.global_pair.discriminator)];
    for (i, pair) in ensemble.locals.iter().enumerate() {
        discriminators.push((i + 1, &pair.discriminator));
    }
    for (id, net) in discriminators {
        let grid = level_set_grid(&net.params, &net.spec, bounds, resolution)?;
        let mut text = String::new();
        for i in 0..resolution {
            let row: Vec<String> = (0..resolution)
                .map(|j| format!("{}", grid.values.get(i, j)))
                .collect();
            text.push_str(&row.join(","));
            text.push('\n');
        }
        std::fs::write(out_dir.join(format!("grids/iter_{it:05}_d{id}.csv")), text)?;
    }
    Ok(())
}

fn write_seed_log(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let mut text = String::new();
    for (name, seed) in seed_table(config.run.master_seed, config.run.n) {
        text.push_str(&format!("{name} = {seed}\n"));
    }
    std::fs::write(out_dir.join("seeds.log"), text)?;
    Ok(())
}

fn write_error(out_dir: &Path, e: &SganError) -> Result<()> {
    let body = match e {
        SganError::Training {
            iteration,
            pair_index,
            message,
        } => serde_json::json!({
            "status": "diverged",
            "iteration": iteration,
            "pair_index": pair_index,
            "message": message,
        }),
        other => serde_json::json!({ "status": "failed", "message": other.to_string() }),
    };
    std::fs::write(out_dir.join("error.json"), serde_json::to_string_pretty(&body).unwrap())?;
    Ok(())
}

fn write_summary(
    config: &RunConfig,
    out_dir: &Path,
    ensemble: &Ensemble,
    records: &[MetricRecord],
) -> Result<()> {
    let last_iter = records.iter().map(|r| r.iteration).max().unwrap_or(0);
    let final_records: Vec<&MetricRecord> =
        records.iter().filter(|r| r.iteration == last_iter).collect();
    let body = serde_json::json!({
        "status": "ok",
        "mode": format!("{:?}", config.run.mode),
        "iterations": ensemble.iteration,
        "n": ensemble.locals.len(),
        "final": final_records,
    });
    std::fs::write(out_dir.join("summary.json"), serde_json::to_string_pretty(&body).unwrap())?;
    Ok(())
}

/// Uncovered fractions of the full ensemble (union over local generators,
/// or the global generator alone when there are no locals) at the current
/// iteration. Used by the curve harness.
pub fn ensemble_uncovered_fraction(ensemble: &Ensemble, config: &RunConfig) -> Result<f64> {
    let dataset = config.dataset_spec();
    let centers = dataset.mode_centers()?;
    let eps = config.assignment_eps();
    let threshold = config.coverage_threshold();
    let master = config.run.master_seed;
    let it = ensemble.iteration;
    let sources: Vec<(usize, &Network)> = if ensemble.locals.is_empty() {
        vec![(0, &ensemble.global_pair.generator)]
    } else {
        ensemble
            .locals
            .iter()
            .enumerate()
            .map(|(i, p)| (i + 1, &p.generator))
            .collect()
    };
    let mut sample_sets = Vec::new();
    for (id, net) in sources {
        let seed = derive_seed_pair(master, SeedRole::Eval, it, id as u64);
        sample_sets.push(generate(net, seed, config.metrics.eval_samples)?);
    }
    crate::metrics::union_uncovered_fraction(&sample_sets, &centers, eps, threshold)
}

/// True when this mode trains local pairs.
pub fn has_locals(mode: RunMode) -> bool {
    mode != RunMode::SinglePair
}
