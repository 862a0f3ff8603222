//! Analytic toy distributions and seeded sampling streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::tensor::Matrix;
use crate::{Result, SganError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    GmmCircle,
    GmmGrid,
    SwissRoll,
}

/// Analytic description of a 2-D toy distribution. Mode centers are a
/// deterministic function of these fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    /// Mixture size (circle/grid only). Grid requires a perfect square.
    pub m: usize,
    /// Circle radius.
    pub radius: f64,
    /// Grid half-width: the lattice spans [-grid_extent, grid_extent]^2.
    pub grid_extent: f64,
    /// Per-component standard deviation.
    pub component_std: f64,
    /// Additive noise of the Swiss Roll.
    pub swiss_noise: f64,
}

impl DatasetSpec {
    /// Circle of 8 Gaussians, radius 2, sigma 0.02.
    pub fn circle(m: usize) -> DatasetSpec {
        DatasetSpec {
            kind: DatasetKind::GmmCircle,
            m,
            radius: 2.0,
            grid_extent: 4.0,
            component_std: 0.02,
            swiss_noise: 0.0,
        }
    }

    /// Grid of m Gaussians on [-4, 4]^2, sigma 0.05.
    pub fn grid(m: usize) -> DatasetSpec {
        DatasetSpec {
            kind: DatasetKind::GmmGrid,
            m,
            radius: 2.0,
            grid_extent: 4.0,
            component_std: 0.05,
            swiss_noise: 0.0,
        }
    }

    pub fn swiss_roll(noise: f64) -> DatasetSpec {
        DatasetSpec {
            kind: DatasetKind::SwissRoll,
            m: 0,
            radius: 2.0,
            grid_extent: 4.0,
            component_std: 0.0,
            swiss_noise: noise,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            DatasetKind::GmmCircle => {
                if self.m == 0 || self.radius <= 0.0 || self.component_std <= 0.0 {
                    return Err(SganError::Config("gmm_circle requires m >= 1, radius > 0, component_std > 0".into()));
                }
            }
            DatasetKind::GmmGrid => {
                let side = (self.m as f64).sqrt().round() as usize;
                if side * side != self.m || self.m == 0 {
                    return Err(SganError::Config(format!(
                        "gmm_grid requires a perfect-square mixture size, got {}",
                        self.m
                    )));
                }
                if self.grid_extent <= 0.0 || self.component_std <= 0.0 {
                    return Err(SganError::Config("gmm_grid requires grid_extent > 0, component_std > 0".into()));
                }
            }
            DatasetKind::SwissRoll => {
                if self.swiss_noise < 0.0 {
                    return Err(SganError::Config("swiss_noise must be >= 0".into()));
                }
            }
        }
        Ok(())
    }

    /// Mixture mode centers. Circle: radius * (cos 2 pi k / M, sin 2 pi k / M).
    /// Grid: sqrt(M) x sqrt(M) lattice spanning [-grid_extent, grid_extent]^2.
    pub fn mode_centers(&self) -> Result<Vec<[f64; 2]>> {
        self.validate()?;
        match self.kind {
            DatasetKind::GmmCircle => Ok((0..self.m)
                .map(|k| {
                    let a = 2.0 * std::f64::consts::PI * k as f64 / self.m as f64;
                    [self.radius * a.cos(), self.radius * a.sin()]
                })
                .collect()),
            DatasetKind::GmmGrid => {
                let side = (self.m as f64).sqrt().round() as usize;
                let step = if side > 1 {
                    2.0 * self.grid_extent / (side - 1) as f64
                } else {
                    0.0
                };
                let mut centers = Vec::with_capacity(self.m);
                for r in 0..side {
                    for c in 0..side {
                        centers.push([
                            -self.grid_extent + step * c as f64,
                            -self.grid_extent + step * r as f64,
                        ]);
                    }
                }
                Ok(centers)
            }
            DatasetKind::SwissRoll => Err(SganError::Unsupported(
                "swiss_roll has no mixture mode centers".into(),
            )),
        }
    }

    /// Bounding box used by the level-set grids, (xmin, xmax, ymin, ymax).
    pub fn bounding_box(&self) -> (f64, f64, f64, f64) {
        match self.kind {
            DatasetKind::GmmCircle => {
                let r = self.radius + 6.0 * self.component_std;
                (-r, r, -r, r)
            }
            DatasetKind::GmmGrid => {
                let r = self.grid_extent + 6.0 * self.component_std;
                (-r, r, -r, r)
            }
            DatasetKind::SwissRoll => {
                let r = 3.0 + 6.0 * self.swiss_noise;
                (-r, r, -r, r)
            }
        }
    }
}

/// Seeded i.i.d. minibatch stream over a dataset. Replaying from the same
/// seed reproduces the identical sequence; the RNG word position is exposed
/// for checkpointing.
#[derive(Clone, Debug)]
pub struct SampleStream {
    spec: DatasetSpec,
    seed: u64,
    rng: ChaCha8Rng,
    centers: Vec<[f64; 2]>,
}

impl SampleStream {
    pub fn new(spec: DatasetSpec, seed: u64) -> Result<SampleStream> {
        spec.validate()?;
        let centers = match spec.kind {
            DatasetKind::SwissRoll => Vec::new(),
            _ => spec.mode_centers()?,
        };
        Ok(SampleStream {
            spec,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            centers,
        })
    }

    pub fn spec(&self) -> &DatasetSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn set_word_pos(&mut self, pos: u128) {
        self.rng.set_word_pos(pos);
    }

    /// Draw a B x 2 batch of i.i.d. samples.
    pub fn next_batch(&mut self, batch: usize) -> Matrix {
        let mut out = Matrix::zeros(batch, 2);
        for i in 0..batch {
            let [x, y] = self.sample_point();
            out.set(i, 0, x);
            out.set(i, 1, y);
        }
        out
    }

    fn sample_point(&mut self) -> [f64; 2] {
        match self.spec.kind {
            DatasetKind::GmmCircle | DatasetKind::GmmGrid => {
                let k = self.rng.gen_range(0..self.spec.m);
                let nx: f64 = self.rng.sample(StandardNormal);
                let ny: f64 = self.rng.sample(StandardNormal);
                let c = self.centers[k];
                [
                    c[0] + self.spec.component_std * nx,
                    c[1] + self.spec.component_std * ny,
                ]
            }
            DatasetKind::SwissRoll => {
                // t ~ U(1.5 pi, 4.5 pi), point = (t cos t, t sin t) / (4.5 pi) * 3,
                // plus isotropic Gaussian noise; data lands in about [-3, 3]^2.
                let t = self
                    .rng
                    .gen_range(1.5 * std::f64::consts::PI..4.5 * std::f64::consts::PI);
                let scale = 3.0 / (4.5 * std::f64::consts::PI);
                let nx: f64 = self.rng.sample(StandardNormal);
                let ny: f64 = self.rng.sample(StandardNormal);
                [
                    t * t.cos() * scale + self.spec.swiss_noise * nx,
                    t * t.sin() * scale + self.spec.swiss_noise * ny,
                ]
            }
        }
    }
}

/// Seeded stream of standard-normal latent noise batches.
#[derive(Clone, Debug)]
pub struct NoiseStream {
    z_dim: usize,
    seed: u64,
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(z_dim: usize, seed: u64) -> Result<NoiseStream> {
        if z_dim == 0 {
            return Err(SganError::Config("z_dim must be >= 1".into()));
        }
        Ok(NoiseStream {
            z_dim,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn z_dim(&self) -> usize {
        self.z_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn set_word_pos(&mut self, pos: u128) {
        self.rng.set_word_pos(pos);
    }

    /// Draw a B x z_dim batch of i.i.d. standard normal noise.
    pub fn next_batch(&mut self, batch: usize) -> Matrix {
        let mut out = Matrix::zeros(batch, self.z_dim);
        for v in out.data_mut() {
            *v = self.rng.sample(StandardNormal);
        }
        out
    }
}

/// One-shot noise batch, reproducible from the seed.
pub fn noise_batch(seed: u64, batch: usize, z_dim: usize) -> Result<Matrix> {
    let mut s = NoiseStream::new(z_dim, seed)?;
    Ok(s.next_batch(batch))
}
