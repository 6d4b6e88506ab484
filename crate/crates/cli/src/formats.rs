//! Binary file formats.
//!
//! Checkpoint (`.tdac`): magic `TDAC`, version u32, store count u32, then per
//! store a kind byte, param count u32, and per parameter name_len u32 + utf8
//! name + ndim u32 + dims (u32 each) + f32 little-endian payload. Optimizer
//! states follow in the same store layout (first- and second-moment blocks
//! per optimizer, each prefixed by the optimizer id byte and step u64), then
//! the iteration u64 and round u32 counters.
//!
//! Dataset (`.tdad`): magic `TDAD`, version u32, n u32, h u32, w u32,
//! k_total u32, then n images as 3*h*w f32 little-endian, then n masks as
//! h*w u8.

use std::fs;
use std::path::Path;

use mtseg_core::autodiff::{NetworkKind, OptimizerState, ParameterStore, Tensor};
use mtseg_core::synthdata::{Domain, SceneSample};
use mtseg_core::trainer::{init_state, ExperimentConfig, TrainState};

use crate::{CliError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TDAC";
pub const DATASET_MAGIC: &[u8; 4] = b"TDAD";
pub const FORMAT_VERSION: u32 = 1;

// Store role bytes inside a checkpoint.
const ROLE_F_LIVE: u8 = 0;
const ROLE_C_LIVE: u8 = 1;
const ROLE_D: u8 = 2;
const ROLE_S: u8 = 3;
const ROLE_F_SNAPSHOT: u8 = 4;
const ROLE_C_SNAPSHOT: u8 = 5;
const ROLE_F_EMA: u8 = 6;
const ROLE_C_EMA: u8 = 7;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Self { buf: Vec::new() }
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn f32s(&mut self, vals: &[f32]) {
        for v in vals {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(CliError::BadFile {
                path: self.path.clone(),
                reason: format!("truncated at byte {}", self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(4 * n)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn write_store_block(w: &mut Writer, role: u8, store: &ParameterStore<f32>) {
    w.u8(role);
    w.u32(store.len() as u32);
    for (name, t) in store.iter() {
        w.u32(name.len() as u32);
        w.bytes(name.as_bytes());
        w.u32(t.shape().len() as u32);
        for &d in t.shape() {
            w.u32(d as u32);
        }
        w.f32s(t.values());
    }
}

fn write_moment_block(w: &mut Writer, role: u8, store: &ParameterStore<f32>, moments: &[Vec<f32>]) {
    w.u8(role);
    w.u32(store.len() as u32);
    for ((name, t), m) in store.iter().zip(moments) {
        w.u32(name.len() as u32);
        w.bytes(name.as_bytes());
        w.u32(t.shape().len() as u32);
        for &d in t.shape() {
            w.u32(d as u32);
        }
        w.f32s(m);
    }
}

fn read_store_block(r: &mut Reader<'_>, kind: NetworkKind) -> Result<(u8, ParameterStore<f32>)> {
    let role = r.u8()?;
    let count = r.u32()? as usize;
    let mut store = ParameterStore::new(kind);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| CliError::BadFile {
            path: r.path.clone(),
            reason: "parameter name is not utf8".into(),
        })?;
        let ndim = r.u32()? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.u32()? as usize);
        }
        let n: usize = dims.iter().product();
        let vals = r.f32s(n)?;
        store
            .insert(&name, Tensor::new(&dims, vals).map_err(CliError::Core)?)
            .map_err(CliError::Core)?;
    }
    Ok((role, store))
}

fn role_kind(role: u8) -> NetworkKind {
    match role {
        ROLE_F_LIVE | ROLE_F_SNAPSHOT | ROLE_F_EMA => NetworkKind::Extractor,
        ROLE_C_LIVE | ROLE_C_SNAPSHOT | ROLE_C_EMA => NetworkKind::Classifier,
        ROLE_D => NetworkKind::Discriminator,
        _ => NetworkKind::Similarity,
    }
}

/// Serializes a full training state.
pub fn encode_checkpoint(state: &TrainState) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(CHECKPOINT_MAGIC);
    w.u32(FORMAT_VERSION);

    let mut stores: Vec<(u8, &ParameterStore<f32>)> = vec![
        (ROLE_F_LIVE, &state.f_live),
        (ROLE_C_LIVE, &state.c_live),
        (ROLE_F_SNAPSHOT, &state.snapshot_f),
        (ROLE_C_SNAPSHOT, &state.snapshot_c),
    ];
    if let Some(d) = &state.d {
        stores.push((ROLE_D, d));
    }
    if let Some(s) = &state.s {
        stores.push((ROLE_S, s));
    }
    if let Some(p) = &state.pair_f {
        stores.push((ROLE_F_EMA, p.target()));
    }
    if let Some(p) = &state.pair_c {
        stores.push((ROLE_C_EMA, p.target()));
    }
    w.u32(stores.len() as u32);
    for (role, store) in stores {
        write_store_block(&mut w, role, store);
    }

    let mut opts: Vec<(u8, &ParameterStore<f32>, &OptimizerState<f32>)> = vec![
        (ROLE_F_LIVE, &state.f_live, &state.opt_f),
        (ROLE_C_LIVE, &state.c_live, &state.opt_c),
    ];
    if let (Some(d), Some(o)) = (&state.d, &state.opt_d) {
        opts.push((ROLE_D, d, o));
    }
    if let (Some(s), Some(o)) = (&state.s, &state.opt_s) {
        opts.push((ROLE_S, s, o));
    }
    w.u32(opts.len() as u32);
    for (role, store, opt) in opts {
        let (first, second) = opt.moments();
        w.u8(role);
        w.u64(opt.step_count());
        write_moment_block(&mut w, role, store, first);
        write_moment_block(&mut w, role, store, second);
    }

    w.u64(state.iter);
    w.u32(state.round);
    w.buf
}

fn store_values(store: &ParameterStore<f32>) -> Vec<Vec<f32>> {
    store.iter().map(|(_, t)| t.values().to_vec()).collect()
}

/// Rebuilds a training state from checkpoint bytes; the config must describe
/// the same architecture the checkpoint was written from.
pub fn decode_checkpoint(bytes: &[u8], cfg: &ExperimentConfig, path: &str) -> Result<TrainState> {
    let mut r = Reader {
        buf: bytes,
        pos: 0,
        path: path.to_string(),
    };
    let magic = r.take(4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(CliError::BadFile {
            path: path.to_string(),
            reason: format!("bad magic {magic:?}, expected TDAC"),
        });
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CliError::BadFile {
            path: path.to_string(),
            reason: format!("unsupported version {version}"),
        });
    }
    let mut state = init_state(cfg)?;
    let store_count = r.u32()? as usize;
    for _ in 0..store_count {
        // Peek the role byte to pick the right network kind.
        let role = bytes[r.pos];
        let (role, loaded) = read_store_block(&mut r, role_kind(role))?;
        let apply = |target: &mut ParameterStore<f32>| -> Result<()> {
            target.copy_values_from(&loaded).map_err(|e| CliError::BadFile {
                path: path.to_string(),
                reason: format!("store {role} does not match config layout: {e}"),
            })
        };
        match role {
            ROLE_F_LIVE => apply(&mut state.f_live)?,
            ROLE_C_LIVE => apply(&mut state.c_live)?,
            ROLE_F_SNAPSHOT => apply(&mut state.snapshot_f)?,
            ROLE_C_SNAPSHOT => apply(&mut state.snapshot_c)?,
            ROLE_D => apply(state.d.as_mut().ok_or_else(|| CliError::BadFile {
                path: path.to_string(),
                reason: "checkpoint has a discriminator, config does not".into(),
            })?)?,
            ROLE_S => apply(state.s.as_mut().ok_or_else(|| CliError::BadFile {
                path: path.to_string(),
                reason: "checkpoint has a similarity net, config does not".into(),
            })?)?,
            ROLE_F_EMA => state
                .pair_f
                .as_mut()
                .ok_or_else(|| CliError::BadFile {
                    path: path.to_string(),
                    reason: "checkpoint has an EMA extractor, config smoothing is off".into(),
                })?
                .restore_target(loaded),
            ROLE_C_EMA => state
                .pair_c
                .as_mut()
                .ok_or_else(|| CliError::BadFile {
                    path: path.to_string(),
                    reason: "checkpoint has an EMA classifier, config mo_pl is off".into(),
                })?
                .restore_target(loaded),
            other => {
                return Err(CliError::BadFile {
                    path: path.to_string(),
                    reason: format!("unknown store role {other}"),
                })
            }
        }
    }
    let opt_count = r.u32()? as usize;
    for _ in 0..opt_count {
        let role = r.u8()?;
        let step = r.u64()?;
        let (_, first) = read_store_block(&mut r, role_kind(role))?;
        let (_, second) = read_store_block(&mut r, role_kind(role))?;
        let opt = match role {
            ROLE_F_LIVE => &mut state.opt_f,
            ROLE_C_LIVE => &mut state.opt_c,
            ROLE_D => state.opt_d.as_mut().ok_or_else(|| CliError::BadFile {
                path: path.to_string(),
                reason: "optimizer for absent discriminator".into(),
            })?,
            ROLE_S => state.opt_s.as_mut().ok_or_else(|| CliError::BadFile {
                path: path.to_string(),
                reason: "optimizer for absent similarity net".into(),
            })?,
            other => {
                return Err(CliError::BadFile {
                    path: path.to_string(),
                    reason: format!("unknown optimizer id {other}"),
                })
            }
        };
        opt.restore(store_values(&first), store_values(&second), step)
            .map_err(CliError::Core)?;
    }
    state.iter = r.u64()?;
    state.round = r.u32()?;
    if !r.done() {
        return Err(CliError::BadFile {
            path: path.to_string(),
            reason: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    Ok(state)
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(state)).map_err(|e| CliError::io(path.display().to_string(), e))
}

pub fn load_checkpoint(path: &Path, cfg: &ExperimentConfig) -> Result<TrainState> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
    decode_checkpoint(&bytes, cfg, &path.display().to_string())
}

/// Serializes one dataset split.
pub fn encode_dataset(samples: &[SceneSample<f32>], k_total: usize) -> Result<Vec<u8>> {
    let first = samples.first().ok_or_else(|| CliError::BadFile {
        path: "<dataset>".into(),
        reason: "empty split".into(),
    })?;
    let shape = first.image.shape();
    let (h, w) = (shape[1], shape[2]);
    let mut wtr = Writer::new();
    wtr.bytes(DATASET_MAGIC);
    wtr.u32(FORMAT_VERSION);
    wtr.u32(samples.len() as u32);
    wtr.u32(h as u32);
    wtr.u32(w as u32);
    wtr.u32(k_total as u32);
    for s in samples {
        wtr.f32s(s.image.values());
    }
    for s in samples {
        wtr.bytes(&s.mask);
    }
    Ok(wtr.buf)
}

/// Reads a dataset split back; `domain` tags the samples (the file stores
/// one split, by convention one domain).
pub fn decode_dataset(bytes: &[u8], domain: Domain, path: &str) -> Result<Vec<SceneSample<f32>>> {
    let mut r = Reader {
        buf: bytes,
        pos: 0,
        path: path.to_string(),
    };
    let magic = r.take(4)?;
    if magic != DATASET_MAGIC {
        return Err(CliError::BadFile {
            path: path.to_string(),
            reason: format!("bad magic {magic:?}, expected TDAD"),
        });
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CliError::BadFile {
            path: path.to_string(),
            reason: format!("unsupported version {version}"),
        });
    }
    let n = r.u32()? as usize;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let _k_total = r.u32()? as usize;
    let mut images = Vec::with_capacity(n);
    for _ in 0..n {
        images.push(r.f32s(3 * h * w)?);
    }
    let mut out = Vec::with_capacity(n);
    for (i, img) in images.into_iter().enumerate() {
        let mask = r.take(h * w)?.to_vec();
        out.push(SceneSample {
            image: Tensor::new(&[3, h, w], img).map_err(CliError::Core)?,
            mask,
            domain,
            sample_seed: i as u64,
        });
    }
    if !r.done() {
        return Err(CliError::BadFile {
            path: path.to_string(),
            reason: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    Ok(out)
}

pub fn save_dataset(samples: &[SceneSample<f32>], k_total: usize, path: &Path) -> Result<()> {
    fs::write(path, encode_dataset(samples, k_total)?)
        .map_err(|e| CliError::io(path.display().to_string(), e))
}

pub fn load_dataset(path: &Path, domain: Domain) -> Result<Vec<SceneSample<f32>>> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
    decode_dataset(&bytes, domain, &path.display().to_string())
}
