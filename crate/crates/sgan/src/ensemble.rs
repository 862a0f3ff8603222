//! Training orchestrator: N local adversarial pairs trained independently,
//! per-iteration messenger clones of the local discriminators refined
//! against the global generator, and global generator/discriminator updates
//! against the ensemble. Also the simplified (messenger-free) variant, the
//! single-pair baseline and the paired-baseline experiment.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cli::seeds::{derive_seed, SeedRole};
use crate::data::{DatasetSpec, NoiseStream, SampleStream};
use crate::nn::{MlpSpec, Network, OptimizerKind, OutputHead};
use crate::objectives::{
    d_loss_and_grads, d_update, g_loss_and_grads, g_update, generate_detached, ObjectiveSpec,
};
use crate::tensor::Matrix;
use crate::{Result, SganError};

pub const DATA_DIM: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Full,
    Simplified,
    PairedBaseline,
    SinglePair,
}

/// How multi-opponent gradients are combined in the global updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradAggregate {
    /// Arithmetic mean over the N opponents; keeps the effective learning
    /// rate independent of N.
    Mean,
    Sum,
}

/// Full training configuration for one ensemble run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SganConfig {
    /// Number of local pairs.
    pub n: usize,
    /// Outer iterations (I).
    pub iterations: u64,
    pub batch_size: usize,
    pub z_dim: usize,
    pub hidden_units: usize,
    /// Number of hidden layers (3 gives the 4-layer MLP used throughout).
    pub hidden_layers: usize,
    pub activation_slope: f64,
    pub mode: RunMode,
    pub master_seed: u64,
    pub eval_every: u64,
    pub objective: ObjectiveSpec,
    pub dataset: DatasetSpec,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub aggregate: GradAggregate,
    /// Clone the local optimizer state into messengers (true) or start the
    /// messenger optimizer cold (false).
    pub clone_messenger_opt_state: bool,
    /// Run local-pair and messenger phases on a worker pool. Disjoint
    /// per-pair state and streams keep this equal to the sequential order.
    pub parallel: bool,
    /// Verify every iteration that the global phase left the local pairs
    /// bitwise untouched.
    pub check_isolation: bool,
    /// Seed the global pair identically to local pair 1 and replay its
    /// batches for the global updates (the single-pair reduction harness).
    pub shared_streams: bool,
}

impl SganConfig {
    pub fn toy_defaults() -> SganConfig {
        SganConfig {
            n: 5,
            iterations: 1000,
            batch_size: 64,
            z_dim: 100,
            hidden_units: 512,
            hidden_layers: 3,
            activation_slope: 0.01,
            mode: RunMode::Full,
            master_seed: 0,
            eval_every: 10,
            objective: ObjectiveSpec::gan(),
            dataset: DatasetSpec::circle(8),
            optimizer: OptimizerKind::default_adam(),
            lr: 1e-5,
            aggregate: GradAggregate::Mean,
            clone_messenger_opt_state: true,
            parallel: false,
            check_isolation: false,
            shared_streams: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 && self.mode != RunMode::SinglePair {
            return Err(SganError::Config("n must be >= 1".into()));
        }
        if self.batch_size == 0 || self.z_dim == 0 || self.hidden_units == 0 {
            return Err(SganError::Config(
                "batch_size, z_dim and hidden_units must be >= 1".into(),
            ));
        }
        if self.eval_every == 0 {
            return Err(SganError::Config("eval_every must be >= 1".into()));
        }
        if self.mode == RunMode::PairedBaseline && self.objective.d_steps != 1 {
            return Err(SganError::Config(
                "paired_baseline requires d_steps = 1 so both pairs consume identical batches".into(),
            ));
        }
        if self.shared_streams && (self.n != 1 || self.objective.d_steps != 1) {
            return Err(SganError::Config(
                "shared_streams requires n = 1 and d_steps = 1 (the single-pair reduction)".into(),
            ));
        }
        self.objective.validate()?;
        self.dataset.validate()?;
        self.generator_spec().validate()?;
        self.discriminator_spec().validate()
    }

    pub fn generator_spec(&self) -> MlpSpec {
        let mut sizes = vec![self.z_dim];
        sizes.extend(std::iter::repeat(self.hidden_units).take(self.hidden_layers));
        sizes.push(DATA_DIM);
        MlpSpec::new(sizes, self.activation_slope, OutputHead::Linear)
    }

    pub fn discriminator_spec(&self) -> MlpSpec {
        let mut sizes = vec![DATA_DIM];
        sizes.extend(std::iter::repeat(self.hidden_units).take(self.hidden_layers));
        sizes.push(1);
        MlpSpec::new(sizes, self.activation_slope, self.objective.discriminator_head())
    }
}

/// A generator and a discriminator with their optimizer states and the
/// objective they are trained under. `pair_index` 0 is the global pair,
/// 1..=N the local pairs.
#[derive(Clone, Debug)]
pub struct AdversarialPair {
    pub generator: Network,
    pub discriminator: Network,
    pub objective: ObjectiveSpec,
    pub pair_index: usize,
}

impl AdversarialPair {
    fn init(config: &SganConfig, pair_index: usize, seed_index: u64) -> Result<AdversarialPair> {
        Ok(AdversarialPair {
            generator: Network::init(
                config.generator_spec(),
                derive_seed(config.master_seed, SeedRole::GeneratorInit, seed_index),
                config.optimizer,
                config.lr,
            )?,
            discriminator: Network::init(
                config.discriminator_spec(),
                derive_seed(config.master_seed, SeedRole::DiscriminatorInit, seed_index),
                config.optimizer,
                config.lr,
            )?,
            objective: config.objective,
            pair_index,
        })
    }

    /// Combined checksum of both networks' parameters and optimizer moments.
    pub fn checksum(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.generator.checksum());
        h.update(self.discriminator.checksum());
        h.finalize().into()
    }
}

/// The seeded sampling state owned by one training participant.
#[derive(Clone, Debug)]
pub struct PairStreams {
    pub data: SampleStream,
    pub noise: NoiseStream,
    pub aux_seed: u64,
    pub aux: ChaCha8Rng,
}

impl PairStreams {
    fn new(config: &SganConfig, data_role: SeedRole, noise_role: SeedRole, aux_role: SeedRole, index: u64) -> Result<PairStreams> {
        let aux_seed = derive_seed(config.master_seed, aux_role, index);
        Ok(PairStreams {
            data: SampleStream::new(
                config.dataset.clone(),
                derive_seed(config.master_seed, data_role, index),
            )?,
            noise: NoiseStream::new(
                config.z_dim,
                derive_seed(config.master_seed, noise_role, index),
            )?,
            aux_seed,
            aux: ChaCha8Rng::seed_from_u64(aux_seed),
        })
    }

    fn local(config: &SganConfig, index: u64) -> Result<PairStreams> {
        PairStreams::new(config, SeedRole::DataStream, SeedRole::NoiseStream, SeedRole::AuxStream, index)
    }

    fn messenger(config: &SganConfig, index: u64) -> Result<PairStreams> {
        PairStreams::new(
            config,
            SeedRole::MessengerData,
            SeedRole::MessengerNoise,
            SeedRole::MessengerAux,
            index,
        )
    }
}

/// Batches consumed by one local-pair update, retained for replay in
/// shared-streams mode.
#[derive(Clone, Debug)]
struct CapturedBatches {
    d_real: Vec<Matrix>,
    d_noise: Vec<Matrix>,
    /// The fakes the local discriminator actually saw; replay must use these
    /// because the local generator has already stepped by the global phase.
    d_fake: Vec<Matrix>,
    g_noise: Matrix,
}

/// Losses and bookkeeping of one outer iteration.
#[derive(Clone, Debug)]
pub struct IterationLosses {
    pub iteration: u64,
    /// Last discriminator loss of each local pair's inner loop.
    pub local_d: Vec<f64>,
    pub local_g: Vec<f64>,
    pub global_d: f64,
    pub global_g: f64,
    pub paired: Option<PairedRecord>,
}

/// Per-iteration record of the paired-baseline experiment.
#[derive(Clone, Debug)]
pub struct PairedRecord {
    pub global_real_checksum: [u8; 32],
    pub global_noise_checksum: [u8; 32],
    pub standard_real_checksum: [u8; 32],
    pub standard_noise_checksum: [u8; 32],
    pub standard_d_loss: f64,
    pub standard_g_loss: f64,
}

/// N local pairs plus the global pair (G0, D0). Messenger clones exist only
/// within one call to [`Ensemble::sgan_iteration`]; none of their parameter
/// blocks survives the call.
#[derive(Clone, Debug)]
pub struct Ensemble {
    pub config: SganConfig,
    pub locals: Vec<AdversarialPair>,
    pub global_pair: AdversarialPair,
    pub iteration: u64,
    pub local_streams: Vec<PairStreams>,
    pub messenger_streams: Vec<PairStreams>,
    /// Streams consumed by the global pair's own updates.
    pub global_streams: PairStreams,
    /// The extra, conventionally trained pair of the paired-baseline mode.
    pub baseline_pair: Option<AdversarialPair>,
    /// Shared batch source of the paired-baseline mode.
    pub shared: Option<PairStreams>,
}

impl Ensemble {
    /// Initialize all networks and streams from the config. Deterministic in
    /// the master seed.
    pub fn init(config: &SganConfig) -> Result<Ensemble> {
        config.validate()?;
        let n = if config.mode == RunMode::SinglePair {
            0
        } else {
            config.n
        };
        let locals = (1..=n)
            .map(|i| AdversarialPair::init(config, i, i as u64))
            .collect::<Result<Vec<_>>>()?;
        let local_streams = (1..=n)
            .map(|i| PairStreams::local(config, i as u64))
            .collect::<Result<Vec<_>>>()?;
        let messenger_streams = (1..=n)
            .map(|i| PairStreams::messenger(config, i as u64))
            .collect::<Result<Vec<_>>>()?;

        // In shared-streams and single-pair modes the global pair reuses
        // local pair 1's seeds so the reduction comparison is exact.
        let global_seed_index = if config.shared_streams || config.mode == RunMode::SinglePair {
            1
        } else {
            0
        };
        let global_pair = AdversarialPair::init(config, 0, global_seed_index)?;
        let global_streams = PairStreams::local(config, global_seed_index)?;

        let (baseline_pair, shared) = if config.mode == RunMode::PairedBaseline {
            let pair = AdversarialPair::init(config, n + 1, (n + 1) as u64)?;
            let shared = PairStreams::new(
                config,
                SeedRole::SharedData,
                SeedRole::SharedNoise,
                SeedRole::SharedAux,
                0,
            )?;
            (Some(pair), Some(shared))
        } else {
            (None, None)
        };

        Ok(Ensemble {
            config: config.clone(),
            locals,
            global_pair,
            iteration: 0,
            local_streams,
            messenger_streams,
            global_streams,
            baseline_pair,
            shared,
        })
    }

    /// Checksums of all local pairs, in pair order.
    pub fn local_checksums(&self) -> Vec<[u8; 32]> {
        self.locals.iter().map(|p| p.checksum()).collect()
    }

    /// Clone every local discriminator together with its optimizer state.
    /// The clones share no storage with their sources.
    pub fn spawn_messengers(&self) -> Vec<Network> {
        self.locals
            .iter()
            .map(|p| {
                let mut m = p.discriminator.clone();
                if !self.config.clone_messenger_opt_state {
                    m.opt = crate::nn::OptimizerState::new(m.opt.kind, m.opt.lr, &m.params);
                }
                m
            })
            .collect()
    }

    /// One full outer iteration: local phase, messenger phase (full mode),
    /// global generator update, global discriminator update. The global
    /// phase never touches the local pairs; with `check_isolation` this is
    /// verified by checksums every iteration.
    pub fn sgan_iteration(&mut self) -> Result<IterationLosses> {
        let it = self.iteration;
        let batch = self.config.batch_size;

        if self.config.mode == RunMode::SinglePair {
            let (d_losses, g_loss, _) = train_local_pair(
                &mut self.global_pair,
                &mut self.global_streams,
                batch,
                false,
            )
            .map_err(|e| tag_training(e, it, 0))?;
            self.iteration += 1;
            return Ok(IterationLosses {
                iteration: it,
                local_d: Vec::new(),
                local_g: Vec::new(),
                global_d: *d_losses.last().unwrap(),
                global_g: g_loss,
                paired: None,
            });
        }

        // Local phase: the N pairs are mutually independent and may run in
        // parallel on disjoint state.
        let capture = self.config.shared_streams;
        let local_results: Vec<(Vec<f64>, f64, Option<CapturedBatches>)> = if self.config.parallel {
            self.locals
                .par_iter_mut()
                .zip(self.local_streams.par_iter_mut())
                .map(|(pair, streams)| {
                    let idx = pair.pair_index;
                    train_local_pair(pair, streams, batch, capture)
                        .map_err(|e| tag_training(e, it, idx))
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            self.locals
                .iter_mut()
                .zip(self.local_streams.iter_mut())
                .map(|(pair, streams)| {
                    let idx = pair.pair_index;
                    train_local_pair(pair, streams, batch, capture)
                        .map_err(|e| tag_training(e, it, idx))
                })
                .collect::<Result<Vec<_>>>()?
        };
        let local_d: Vec<f64> = local_results
            .iter()
            .map(|(d, _, _)| *d.last().unwrap())
            .collect();
        let local_g: Vec<f64> = local_results.iter().map(|(_, g, _)| *g).collect();
        let replay = local_results.into_iter().next().and_then(|(_, _, c)| c);

        let post_local = if self.config.check_isolation {
            Some(self.local_checksums())
        } else {
            None
        };

        // Paired-baseline shared batches for this iteration.
        let paired_batches = if let Some(shared) = self.shared.as_mut() {
            let real = shared.data.next_batch(batch);
            let noise_d = shared.noise.next_batch(batch);
            let noise_g = shared.noise.next_batch(batch);
            Some((real, noise_d, noise_g))
        } else {
            None
        };

        // Messenger phase (skipped by the simplified variant).
        let messengers: Option<Vec<Network>> = if self.config.mode == RunMode::Simplified {
            None
        } else {
            let mut msgs = self.spawn_messengers();
            let obj = self.config.objective;
            let g0 = &self.global_pair.generator;
            let train_one = |(m, streams): (&mut Network, &mut PairStreams)| -> Result<()> {
                for _ in 0..obj.d_steps {
                    let real = streams.data.next_batch(batch);
                    let z = streams.noise.next_batch(batch);
                    let fake = generate_detached(g0, &z)?;
                    d_update(&obj, m, &real, &fake, &mut streams.aux)?;
                }
                Ok(())
            };
            if self.config.parallel {
                msgs.par_iter_mut()
                    .zip(self.messenger_streams.par_iter_mut())
                    .map(train_one)
                    .collect::<Result<Vec<_>>>()?;
            } else {
                msgs.iter_mut()
                    .zip(self.messenger_streams.iter_mut())
                    .map(train_one)
                    .collect::<Result<Vec<_>>>()?;
            }
            Some(msgs)
        };

        // Batches actually consumed by the global pair, kept for the
        // paired-baseline checksum log.
        let mut global_consumed_real: Option<Matrix> = None;
        let mut global_consumed_noise: Vec<Matrix> = Vec::new();

        // Global generator update: accumulate g-loss gradients against every
        // opponent, aggregate, then apply exactly one optimizer step.
        let global_g = {
            let obj = self.config.objective;
            let g0 = &self.global_pair.generator;
            let mut acc = g0.params.zeros_like();
            let mut loss_sum = 0.0;
            let n_opp = self.locals.len();
            for i in 0..n_opp {
                let opponent = match &messengers {
                    Some(msgs) => &msgs[i],
                    None => &self.locals[i].discriminator,
                };
                let z = match (&paired_batches, &replay) {
                    (Some((_, _, zg)), _) => zg.clone(),
                    (None, Some(r)) => r.g_noise.clone(),
                    (None, None) => self.global_streams.noise.next_batch(batch),
                };
                let (l, grads) = g_loss_and_grads(&obj, g0, opponent, &z)
                    .map_err(|e| tag_training(e, it, 0))?;
                if paired_batches.is_some() && i == 0 {
                    global_consumed_noise.push(z);
                }
                loss_sum += l;
                acc.add_assign(&grads);
            }
            if self.config.aggregate == GradAggregate::Mean {
                acc.scale_assign(1.0 / n_opp as f64);
            }
            if !acc.is_finite() {
                return Err(SganError::Training {
                    iteration: it,
                    pair_index: 0,
                    message: "non-finite accumulated generator gradient".into(),
                });
            }
            let g0 = &mut self.global_pair.generator;
            g0.opt.step(&mut g0.params, &acc).map_err(|e| tag_training(e, it, 0))?;
            loss_sum / n_opp as f64
        };
        drop(messengers); // messenger lifetime ends with the iteration

        // Global discriminator update: accumulated d-loss gradients over
        // fakes from each local generator, fresh real batch per term.
        let global_d = {
            let obj = self.config.objective;
            let d0 = &self.global_pair.discriminator;
            let mut acc = d0.params.zeros_like();
            let mut loss_sum = 0.0;
            let n_opp = self.locals.len();
            for i in 0..n_opp {
                let (real, z, replayed_fake) = match (&paired_batches, &replay) {
                    (Some((r, zd, _)), _) => (r.clone(), zd.clone(), None),
                    (None, Some(rp)) => (
                        rp.d_real[0].clone(),
                        rp.d_noise[0].clone(),
                        // The local generator already stepped this iteration;
                        // only the captured fakes reproduce the local update.
                        Some(rp.d_fake[0].clone()),
                    ),
                    (None, None) => (
                        self.global_streams.data.next_batch(batch),
                        self.global_streams.noise.next_batch(batch),
                        None,
                    ),
                };
                let fake = match replayed_fake {
                    Some(f) => f,
                    None => generate_detached(&self.locals[i].generator, &z)
                        .map_err(|e| tag_training(e, it, 0))?,
                };
                let (l, grads) =
                    d_loss_and_grads(&obj, d0, &real, &fake, &mut self.global_streams.aux)
                        .map_err(|e| tag_training(e, it, 0))?;
                if paired_batches.is_some() && i == 0 {
                    global_consumed_real = Some(real);
                    global_consumed_noise.insert(0, z);
                }
                loss_sum += l;
                acc.add_assign(&grads);
            }
            if self.config.aggregate == GradAggregate::Mean {
                acc.scale_assign(1.0 / n_opp as f64);
            }
            if !acc.is_finite() {
                return Err(SganError::Training {
                    iteration: it,
                    pair_index: 0,
                    message: "non-finite accumulated discriminator gradient".into(),
                });
            }
            let d0 = &mut self.global_pair.discriminator;
            d0.opt.step(&mut d0.params, &acc).map_err(|e| tag_training(e, it, 0))?;
            loss_sum / n_opp as f64
        };

        // Paired baseline: the standard pair consumes the same batches the
        // global pair just used.
        let paired = if let Some((real, noise_d, noise_g)) = paired_batches {
            let pair = self.baseline_pair.as_mut().unwrap();
            let obj = self.config.objective;
            let shared = self.shared.as_mut().unwrap();
            let fake = generate_detached(&pair.generator, &noise_d)
                .map_err(|e| tag_training(e, it, pair.pair_index))?;
            let d_loss = d_update(&obj, &mut pair.discriminator, &real, &fake, &mut shared.aux)
                .map_err(|e| tag_training(e, it, pair.pair_index))?;
            let g_loss = g_update(&obj, &mut pair.generator, &pair.discriminator, &noise_g)
                .map_err(|e| tag_training(e, it, pair.pair_index))?;
            // Checksums are taken from the batches each consumer actually
            // received, not from the shared source.
            let global_real = global_consumed_real.expect("paired mode records global real batch");
            let noise_refs: Vec<&Matrix> = global_consumed_noise.iter().collect();
            Some(PairedRecord {
                global_real_checksum: matrix_checksum(&global_real),
                global_noise_checksum: batches_checksum(&noise_refs),
                standard_real_checksum: matrix_checksum(&real),
                standard_noise_checksum: batches_checksum(&[&noise_d, &noise_g]),
                standard_d_loss: d_loss,
                standard_g_loss: g_loss,
            })
        } else {
            None
        };

        if let Some(before) = post_local {
            let after = self.local_checksums();
            if before != after {
                return Err(SganError::Training {
                    iteration: it,
                    pair_index: 0,
                    message: "global phase modified a local pair".into(),
                });
            }
        }

        self.iteration += 1;
        Ok(IterationLosses {
            iteration: it,
            local_d,
            local_g,
            global_d,
            global_g,
            paired,
        })
    }
}

/// Standard adversarial training of one pair: exactly I_D discriminator
/// updates (fresh real and fake batches each) followed by exactly one
/// generator update.
fn train_local_pair(
    pair: &mut AdversarialPair,
    streams: &mut PairStreams,
    batch: usize,
    capture: bool,
) -> Result<(Vec<f64>, f64, Option<CapturedBatches>)> {
    let obj = pair.objective;
    let mut d_losses = Vec::with_capacity(obj.d_steps);
    let mut captured = capture.then(|| CapturedBatches {
        d_real: Vec::new(),
        d_noise: Vec::new(),
        d_fake: Vec::new(),
        g_noise: Matrix::zeros(0, 0),
    });
    for _ in 0..obj.d_steps {
        let real = streams.data.next_batch(batch);
        let z = streams.noise.next_batch(batch);
        let fake = generate_detached(&pair.generator, &z)?;
        let loss = d_update(&obj, &mut pair.discriminator, &real, &fake, &mut streams.aux)?;
        d_losses.push(loss);
        if let Some(c) = captured.as_mut() {
            c.d_real.push(real);
            c.d_noise.push(z);
            c.d_fake.push(fake);
        }
    }
    let z = streams.noise.next_batch(batch);
    let g_loss = g_update(&obj, &mut pair.generator, &pair.discriminator, &z)?;
    if let Some(c) = captured.as_mut() {
        c.g_noise = z;
    }
    Ok((d_losses, g_loss, captured))
}

/// Run one pair through `d_steps` discriminator updates and one generator
/// update, exposed for the local-pair contract tests.
pub fn train_pair_step(
    pair: &mut AdversarialPair,
    streams: &mut PairStreams,
    batch: usize,
) -> Result<(Vec<f64>, f64)> {
    let (d, g, _) = train_local_pair(pair, streams, batch, false)?;
    Ok((d, g))
}

/// Streams for a standalone pair, seeded like local pair `index`.
pub fn standalone_streams(config: &SganConfig, index: u64) -> Result<PairStreams> {
    PairStreams::local(config, index)
}

/// A standalone pair initialized with local pair `index` seeds.
pub fn standalone_pair(config: &SganConfig, index: u64) -> Result<AdversarialPair> {
    AdversarialPair::init(config, index as usize, index)
}

fn tag_training(e: SganError, iteration: u64, pair_index: usize) -> SganError {
    match e {
        SganError::Training { .. } => e,
        other => SganError::Training {
            iteration,
            pair_index,
            message: other.to_string(),
        },
    }
}

pub fn matrix_checksum(m: &Matrix) -> [u8; 32] {
    let mut h = Sha256::new();
    for v in m.data() {
        h.update(v.to_le_bytes());
    }
    h.finalize().into()
}

fn batches_checksum(ms: &[&Matrix]) -> [u8; 32] {
    let mut h = Sha256::new();
    for m in ms {
        h.update(matrix_checksum(m));
    }
    h.finalize().into()
}
