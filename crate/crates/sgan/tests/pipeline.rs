//! End-to-end checks of the run pipeline: artifact layout, checkpoint
//! round-trips, deterministic replay, and the sweep harness.

use sgan::cli::{checkpoint, runner, sweep, RunConfig};

fn tiny_toml(mode: &str, iterations: u64, extra: &str) -> String {
    format!(
        r#"
[run]
n = 2
iterations = {iterations}
batch_size = 16
z_dim = 4
mode = "{mode}"
master_seed = 7
eval_every = 10
{extra}

[network]
hidden_units = 8
hidden_layers = 2

[optimizer]
lr = 1e-4

[metrics]
eval_samples = 64
kde_samples = 48
held_out_samples = 32
bandwidth_grid_points = 5
"#
    )
}

#[test]
fn run_writes_expected_artifacts_and_record_counts() {
    let dir = tempfile::tempdir().unwrap();
    let config = RunConfig::from_toml(&tiny_toml("full", 20, "")).unwrap();
    let artifacts = runner::run(&config, dir.path()).unwrap();

    // eval at iterations 10 and 20, one record per generator (global + 2 locals)
    assert_eq!(artifacts.records.len(), 2 * 3);
    for r in &artifacts.records {
        assert!(r.iteration == 10 || r.iteration == 20);
        assert!(r.generator_id <= 2);
        assert!(r.kde_loglik.is_finite());
    }

    assert!(dir.path().join("config.echo").exists());
    assert!(dir.path().join("seeds.log").exists());
    assert!(dir.path().join("metrics.jsonl").exists());
    assert!(dir.path().join("summary.json").exists());
    assert!(artifacts.final_checkpoint.exists());
    assert!(!dir.path().join("error.json").exists());

    let jsonl = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), 6);
}

#[test]
fn checkpoint_round_trip_restores_exact_state() {
    let dir = tempfile::tempdir().unwrap();
    let config = RunConfig::from_toml(&tiny_toml("full", 10, "")).unwrap();
    let artifacts = runner::run(&config, dir.path()).unwrap();

    let resolved = config.resolve().unwrap();
    let restored =
        checkpoint::load(&artifacts.final_checkpoint, &resolved, config.config_hash()).unwrap();

    assert_eq!(restored.iteration, artifacts.ensemble.iteration);
    assert_eq!(
        restored.global_pair.checksum(),
        artifacts.ensemble.global_pair.checksum()
    );
    for (a, b) in restored.locals.iter().zip(artifacts.ensemble.locals.iter()) {
        assert_eq!(a.checksum(), b.checksum());
    }
}

#[test]
fn checkpoint_refuses_corruption_and_foreign_configs() {
    let dir = tempfile::tempdir().unwrap();
    let config = RunConfig::from_toml(&tiny_toml("full", 10, "")).unwrap();
    let artifacts = runner::run(&config, dir.path()).unwrap();
    let resolved = config.resolve().unwrap();

    // flip one byte in the middle of the file
    let mut bytes = std::fs::read(&artifacts.final_checkpoint).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x01;
    let corrupt = dir.path().join("corrupt.ckpt");
    std::fs::write(&corrupt, &bytes).unwrap();
    let err = checkpoint::load(&corrupt, &resolved, config.config_hash()).unwrap_err();
    assert!(err.to_string().contains("integrity"), "{err}");

    // a different configuration must be refused before any state is read
    let mut other = RunConfig::from_toml(&tiny_toml("full", 10, "")).unwrap();
    other.run.master_seed = 8;
    let err = checkpoint::load(
        &artifacts.final_checkpoint,
        &other.resolve().unwrap(),
        other.config_hash(),
    )
    .unwrap_err();
    assert!(err.to_string().contains("configuration"), "{err}");
}

#[test]
fn straight_run_and_checkpoint_resume_emit_identical_metrics() {
    let toml_full = tiny_toml("full", 40, "check_isolation = true");
    let toml_half = tiny_toml("full", 20, "check_isolation = true");

    let dir_a = tempfile::tempdir().unwrap();
    let config_a = RunConfig::from_toml(&toml_full).unwrap();
    runner::run(&config_a, dir_a.path()).unwrap();

    let dir_b = tempfile::tempdir().unwrap();
    let config_half = RunConfig::from_toml(&toml_half).unwrap();
    let first = runner::run(&config_half, dir_b.path()).unwrap();
    let config_rest = RunConfig::from_toml(&toml_full).unwrap();
    runner::resume(&config_rest, dir_b.path(), &first.final_checkpoint).unwrap();

    let a = std::fs::read(dir_a.path().join("metrics.jsonl")).unwrap();
    let b = std::fs::read(dir_b.path().join("metrics.jsonl")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn rerunning_the_same_config_is_byte_identical() {
    let toml = tiny_toml("full", 20, "");
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let config = RunConfig::from_toml(&toml).unwrap();
    runner::run(&config, dir_a.path()).unwrap();
    runner::run(&config, dir_b.path()).unwrap();
    let a = std::fs::read(dir_a.path().join("metrics.jsonl")).unwrap();
    let b = std::fs::read(dir_b.path().join("metrics.jsonl")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn eval_iterations_cover_the_post_burn_in_range() {
    let its = sweep::eval_iterations(100, 0.2, 5);
    assert_eq!(its, vec![36, 52, 68, 84, 100]);
    for w in its.windows(2) {
        assert!(w[1] > w[0]);
    }
    // degenerate settings still yield at least the final iteration
    let its = sweep::eval_iterations(3, 0.9, 5);
    assert!(!its.is_empty());
    assert_eq!(*its.last().unwrap(), 3);
}

#[test]
fn stub_sweep_rows_and_csv_layout() {
    let n_values = [1usize, 2, 3];
    let seeds: Vec<u64> = (0..20).collect();
    let rows = sweep::stub_sweep(0.5, 8, &n_values, &seeds);
    assert_eq!(rows.len(), 3);
    for (row, &n) in rows.iter().zip(n_values.iter()) {
        assert_eq!(row.n, n);
        assert_eq!(row.failed_seeds, 0);
        assert!(row.mean >= 0.0 && row.mean <= 1.0);
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("curve.csv");
    sweep::write_curve_csv(&rows, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("n,mean,stderr,failed_seeds\n"));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn trained_run_reports_one_fraction_per_eval_point() {
    let toml = format!(
        "{}\n{}",
        tiny_toml("single_pair", 20, ""),
        "" // metrics defaults for curve points come from the section above
    );
    let mut config = RunConfig::from_toml(&toml).unwrap();
    config.metrics.curve_eval_points = 3;
    config.metrics.burn_in_fraction = 0.2;
    let fractions = sweep::trained_run(&config, 1, 3).unwrap();
    assert_eq!(fractions.len(), 3);
    for f in fractions {
        assert!((0.0..=1.0).contains(&f));
    }
}
