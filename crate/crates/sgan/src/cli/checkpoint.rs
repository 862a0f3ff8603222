//! Versioned binary checkpoints. A checkpoint captures everything needed to
//! resume a run bit-for-bit: all parameters, optimizer moments, and the
//! (seed, word position) of every RNG stream. A trailing SHA-256 detects
//! truncation or corruption, and the embedded config hash refuses resumes
//! under a different configuration.

use sha2::{Digest, Sha256};

use crate::ensemble::Ensemble;
use crate::nn::{Network, OptimizerState, ParamStore};
use crate::tensor::Matrix;
use crate::{Result, SganError};

const MAGIC: &[u8; 4] = b"SGCK";
const VERSION: u32 = 1;

/// Serialize the full training state of an ensemble.
pub fn save(ensemble: &Ensemble, config_hash: [u8; 32], path: &std::path::Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&config_hash);
    buf.extend_from_slice(&ensemble.iteration.to_le_bytes());

    let mut networks: Vec<&Network> = vec![
        &ensemble.global_pair.generator,
        &ensemble.global_pair.discriminator,
    ];
    for pair in &ensemble.locals {
        networks.push(&pair.generator);
        networks.push(&pair.discriminator);
    }
    if let Some(pair) = &ensemble.baseline_pair {
        networks.push(&pair.generator);
        networks.push(&pair.discriminator);
    }
    buf.extend_from_slice(&(networks.len() as u32).to_le_bytes());
    for net in networks {
        write_params(&mut buf, &net.params);
        write_opt(&mut buf, &net.opt);
    }

    let mut streams: Vec<(u64, u128, u64, u128, u64, u128)> = Vec::new();
    let mut push = |s: &crate::ensemble::PairStreams| {
        streams.push((
            s.data.seed(),
            s.data.word_pos(),
            s.noise.seed(),
            s.noise.word_pos(),
            s.aux_seed,
            s.aux.get_word_pos(),
        ));
    };
    push(&ensemble.global_streams);
    for s in &ensemble.local_streams {
        push(s);
    }
    for s in &ensemble.messenger_streams {
        push(s);
    }
    if let Some(s) = &ensemble.shared {
        push(s);
    }
    buf.extend_from_slice(&(streams.len() as u32).to_le_bytes());
    for (ds, dp, ns, np, as_, ap) in streams {
        buf.extend_from_slice(&ds.to_le_bytes());
        buf.extend_from_slice(&dp.to_le_bytes());
        buf.extend_from_slice(&ns.to_le_bytes());
        buf.extend_from_slice(&np.to_le_bytes());
        buf.extend_from_slice(&as_.to_le_bytes());
        buf.extend_from_slice(&ap.to_le_bytes());
    }

    let digest: [u8; 32] = Sha256::digest(&buf).into();
    buf.extend_from_slice(&digest);
    std::fs::write(path, buf)?;
    Ok(())
}

/// Restore an ensemble. `config` must be the configuration that produced
/// the checkpoint; `config_hash` is compared against the embedded hash.
pub fn load(
    path: &std::path::Path,
    config: &crate::ensemble::SganConfig,
    config_hash: [u8; 32],
) -> Result<Ensemble> {
    let buf = std::fs::read(path)?;
    if buf.len() < 4 + 4 + 32 + 8 + 32 {
        return Err(SganError::Checkpoint("checkpoint file too short".into()));
    }
    let (body, trailer) = buf.split_at(buf.len() - 32);
    let digest: [u8; 32] = Sha256::digest(body).into();
    if digest != trailer {
        return Err(SganError::Checkpoint("checkpoint integrity check failed".into()));
    }

    let mut r = Reader { buf: body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(SganError::Checkpoint("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(SganError::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let stored_hash = r.take(32)?.to_vec();
    if stored_hash != config_hash {
        return Err(SganError::Checkpoint(
            "checkpoint was produced by a different configuration".into(),
        ));
    }
    let iteration = r.u64()?;

    let mut ensemble = Ensemble::init(config)?;
    ensemble.iteration = iteration;

    let n_networks = r.u32()? as usize;
    {
        let mut networks: Vec<&mut Network> = vec![
            &mut ensemble.global_pair.generator,
            &mut ensemble.global_pair.discriminator,
        ];
        for pair in ensemble.locals.iter_mut() {
            networks.push(&mut pair.generator);
            networks.push(&mut pair.discriminator);
        }
        if let Some(pair) = ensemble.baseline_pair.as_mut() {
            networks.push(&mut pair.generator);
            networks.push(&mut pair.discriminator);
        }
        if n_networks != networks.len() {
            return Err(SganError::Checkpoint(format!(
                "checkpoint holds {} networks, configuration expects {}",
                n_networks,
                networks.len()
            )));
        }
        for net in networks {
            read_params(&mut r, &mut net.params)?;
            read_opt(&mut r, &mut net.opt)?;
        }
    }

    let n_streams = r.u32()? as usize;
    {
        let mut streams: Vec<&mut crate::ensemble::PairStreams> = vec![&mut ensemble.global_streams];
        for s in ensemble.local_streams.iter_mut() {
            streams.push(s);
        }
        for s in ensemble.messenger_streams.iter_mut() {
            streams.push(s);
        }
        if let Some(s) = ensemble.shared.as_mut() {
            streams.push(s);
        }
        if n_streams != streams.len() {
            return Err(SganError::Checkpoint(format!(
                "checkpoint holds {} stream blocks, configuration expects {}",
                n_streams,
                streams.len()
            )));
        }
        for s in streams {
            restore_stream_block(&mut r, s)?;
        }
    }

    if r.pos != r.buf.len() {
        return Err(SganError::Checkpoint("trailing bytes in checkpoint body".into()));
    }
    Ok(ensemble)
}

fn restore_stream_block(r: &mut Reader, s: &mut crate::ensemble::PairStreams) -> Result<()> {
    let data_seed = r.u64()?;
    let data_pos = r.u128()?;
    let noise_seed = r.u64()?;
    let noise_pos = r.u128()?;
    let aux_seed = r.u64()?;
    let aux_pos = r.u128()?;
    if data_seed != s.data.seed() || noise_seed != s.noise.seed() || aux_seed != s.aux_seed {
        return Err(SganError::Checkpoint(
            "stream seeds in checkpoint do not match the configuration".into(),
        ));
    }
    s.data.set_word_pos(data_pos);
    s.noise.set_word_pos(noise_pos);
    s.aux.set_word_pos(aux_pos);
    Ok(())
}

fn write_params(buf: &mut Vec<u8>, params: &ParamStore) {
    buf.extend_from_slice(&(params.layers.len() as u32).to_le_bytes());
    for layer in &params.layers {
        buf.extend_from_slice(&(layer.weight.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(layer.weight.cols() as u32).to_le_bytes());
        for v in layer.weight.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&(layer.bias.len() as u32).to_le_bytes());
        for v in &layer.bias {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn read_params(r: &mut Reader, into: &mut ParamStore) -> Result<()> {
    let n_layers = r.u32()? as usize;
    if n_layers != into.layers.len() {
        return Err(SganError::Checkpoint(format!(
            "checkpoint layer count {} does not match expected {}",
            n_layers,
            into.layers.len()
        )));
    }
    for layer in into.layers.iter_mut() {
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        if rows != layer.weight.rows() || cols != layer.weight.cols() {
            return Err(SganError::Checkpoint(format!(
                "checkpoint weight shape {rows}x{cols} does not match expected {}x{}",
                layer.weight.rows(),
                layer.weight.cols()
            )));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(r.f64()?);
        }
        layer.weight = Matrix::from_vec(rows, cols, data)?;
        let bias_len = r.u32()? as usize;
        if bias_len != layer.bias.len() {
            return Err(SganError::Checkpoint("checkpoint bias length mismatch".into()));
        }
        for b in layer.bias.iter_mut() {
            *b = r.f64()?;
        }
    }
    Ok(())
}

fn write_opt(buf: &mut Vec<u8>, opt: &OptimizerState) {
    buf.extend_from_slice(&opt.step_count.to_le_bytes());
    write_params(buf, &opt.first_moment);
    write_params(buf, &opt.second_moment);
}

fn read_opt(r: &mut Reader, into: &mut OptimizerState) -> Result<()> {
    into.step_count = r.u64()?;
    read_params(r, &mut into.first_moment)?;
    read_params(r, &mut into.second_moment)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(SganError::Checkpoint("unexpected end of checkpoint".into()));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
