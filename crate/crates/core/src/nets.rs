//! The micro network zoo: a shifted-window local-attention extractor, a
//! residual-conv baseline at matched capacity, a per-pixel classifier head,
//! binary / class-level domain discriminators, and the domain-similarity
//! network (same three-conv trunk as the binary discriminator).

use alloc::format;
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::ops;
use crate::autodiff::params::{NetworkKind, ParamSource, ParameterStore};
use crate::autodiff::scalar::Real;
use crate::autodiff::tape::Var;
use crate::autodiff::tensor::Tensor;
use crate::error::{CoreError, Result};

pub const LN_EPS: f64 = 1e-5;
pub const LEAKY_SLOPE: f64 = 0.2;
const MLP_RATIO: usize = 4;
const DISC_HIDDEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorKind {
    LocalVit,
    Cnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractorConfig {
    pub kind: ExtractorKind,
    pub image_size: (usize, usize),
    pub patch_size: usize,
    pub window_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
}

impl ExtractorConfig {
    /// Desk-scale default for the local-attention backbone.
    pub fn local_vit_default() -> Self {
        Self {
            kind: ExtractorKind::LocalVit,
            image_size: (64, 64),
            patch_size: 4,
            window_size: 4,
            embed_dim: 64,
            depth: 4,
            heads: 4,
        }
    }

    /// Conv baseline sized to land within 20% of the default ViT's
    /// parameter count (one 3x3 conv per residual block, depth 5).
    pub fn cnn_default() -> Self {
        Self {
            kind: ExtractorKind::Cnn,
            depth: 5,
            ..Self::local_vit_default()
        }
    }

    /// Feature-map spatial extent (H/patch, W/patch).
    pub fn grid(&self) -> (usize, usize) {
        (
            self.image_size.0 / self.patch_size,
            self.image_size.1 / self.patch_size,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image_size;
        if self.patch_size == 0 || h % self.patch_size != 0 || w % self.patch_size != 0 {
            return Err(CoreError::Config(format!(
                "image size {h}x{w} not divisible by patch size {}",
                self.patch_size
            )));
        }
        if self.embed_dim == 0 || self.depth == 0 {
            return Err(CoreError::Config(String::from(
                "embed_dim and depth must be positive",
            )));
        }
        if self.kind == ExtractorKind::LocalVit {
            let (gh, gw) = self.grid();
            if self.window_size == 0 || gh % self.window_size != 0 || gw % self.window_size != 0 {
                return Err(CoreError::Config(format!(
                    "token grid {gh}x{gw} not divisible by window size {}",
                    self.window_size
                )));
            }
            if self.heads == 0 || self.embed_dim % self.heads != 0 {
                return Err(CoreError::Config(format!(
                    "embed_dim {} not divisible by heads {}",
                    self.embed_dim, self.heads
                )));
            }
        }
        Ok(())
    }
}

/// Xavier-uniform sample with the given fan extents.
fn xavier<F: Real>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor<F> {
    let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    let n: usize = shape.iter().product();
    let vals: Vec<F> = (0..n)
        .map(|_| F::c((rng.random::<f64>() * 2.0 - 1.0) * limit))
        .collect();
    Tensor::new(shape, vals).expect("shape/len consistent")
}

fn conv_init<F: Real>(
    rng: &mut ChaCha8Rng,
    cout: usize,
    cin: usize,
    k: usize,
) -> (Tensor<F>, Tensor<F>) {
    let w = xavier(rng, &[cout, cin, k, k], cin * k * k, cout * k * k);
    (w, Tensor::zeros(&[cout]))
}

fn linear_init<F: Real>(rng: &mut ChaCha8Rng, din: usize, dout: usize) -> (Tensor<F>, Tensor<F>) {
    let w = xavier(rng, &[din, dout], din, dout);
    (w, Tensor::zeros(&[dout]))
}

fn push<F: Real>(store: &mut ParameterStore<F>, name: &str, mut t: Tensor<F>) -> Result<()> {
    t.set_requires_grad(true);
    store.insert(name, t)
}

/// Builds the extractor parameter store for `cfg` from a seeded stream.
pub fn init_extractor<F: Real>(cfg: &ExtractorConfig, rng: &mut ChaCha8Rng) -> Result<ParameterStore<F>> {
    cfg.validate()?;
    let mut s = ParameterStore::new(NetworkKind::Extractor);
    let c = cfg.embed_dim;
    let p = cfg.patch_size;
    let (w, b) = conv_init(rng, c, 3, p);
    push(&mut s, "patch_embed.weight", w)?;
    push(&mut s, "patch_embed.bias", b)?;
    push(&mut s, "patch_embed.norm.gamma", Tensor::full(&[c], F::one()))?;
    push(&mut s, "patch_embed.norm.beta", Tensor::zeros(&[c]))?;
    match cfg.kind {
        ExtractorKind::LocalVit => {
            let ws = cfg.window_size;
            let table = (2 * ws - 1) * (2 * ws - 1);
            for i in 0..cfg.depth {
                let pre = format!("blocks.{i}");
                push(&mut s, &format!("{pre}.norm1.gamma"), Tensor::full(&[c], F::one()))?;
                push(&mut s, &format!("{pre}.norm1.beta"), Tensor::zeros(&[c]))?;
                let (w, b) = linear_init(rng, c, 3 * c);
                push(&mut s, &format!("{pre}.attn.qkv.weight"), w)?;
                push(&mut s, &format!("{pre}.attn.qkv.bias"), b)?;
                // Zero-initialized relative position bias per window pair.
                push(
                    &mut s,
                    &format!("{pre}.attn.rel_bias"),
                    Tensor::zeros(&[cfg.heads, table]),
                )?;
                let (w, b) = linear_init(rng, c, c);
                push(&mut s, &format!("{pre}.attn.proj.weight"), w)?;
                push(&mut s, &format!("{pre}.attn.proj.bias"), b)?;
                push(&mut s, &format!("{pre}.norm2.gamma"), Tensor::full(&[c], F::one()))?;
                push(&mut s, &format!("{pre}.norm2.beta"), Tensor::zeros(&[c]))?;
                let (w, b) = linear_init(rng, c, MLP_RATIO * c);
                push(&mut s, &format!("{pre}.mlp.fc1.weight"), w)?;
                push(&mut s, &format!("{pre}.mlp.fc1.bias"), b)?;
                let (w, b) = linear_init(rng, MLP_RATIO * c, c);
                push(&mut s, &format!("{pre}.mlp.fc2.weight"), w)?;
                push(&mut s, &format!("{pre}.mlp.fc2.bias"), b)?;
            }
        }
        ExtractorKind::Cnn => {
            for i in 0..cfg.depth {
                let pre = format!("blocks.{i}");
                push(&mut s, &format!("{pre}.norm.gamma"), Tensor::full(&[c], F::one()))?;
                push(&mut s, &format!("{pre}.norm.beta"), Tensor::zeros(&[c]))?;
                let (w, b) = conv_init(rng, c, c, 3);
                push(&mut s, &format!("{pre}.conv.weight"), w)?;
                push(&mut s, &format!("{pre}.conv.bias"), b)?;
            }
        }
    }
    push(&mut s, "norm.gamma", Tensor::full(&[c], F::one()))?;
    push(&mut s, "norm.beta", Tensor::zeros(&[c]))?;
    Ok(s)
}

pub fn init_classifier<F: Real>(
    embed_dim: usize,
    num_classes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ParameterStore<F>> {
    let mut s = ParameterStore::new(NetworkKind::Classifier);
    let (w, b) = conv_init(rng, num_classes, embed_dim, 1);
    push(&mut s, "head.weight", w)?;
    push(&mut s, "head.bias", b)?;
    Ok(s)
}

fn init_three_conv<F: Real>(
    kind: NetworkKind,
    embed_dim: usize,
    out_channels: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ParameterStore<F>> {
    let mut s = ParameterStore::new(kind);
    let (w, b) = conv_init(rng, DISC_HIDDEN, embed_dim, 3);
    push(&mut s, "conv1.weight", w)?;
    push(&mut s, "conv1.bias", b)?;
    let (w, b) = conv_init(rng, DISC_HIDDEN, DISC_HIDDEN, 3);
    push(&mut s, "conv2.weight", w)?;
    push(&mut s, "conv2.bias", b)?;
    let (w, b) = conv_init(rng, out_channels, DISC_HIDDEN, 3);
    push(&mut s, "conv3.weight", w)?;
    push(&mut s, "conv3.bias", b)?;
    Ok(s)
}

/// Discriminator: 3 convs, sigmoid output; `out_channels` is 1 (binary) or
/// the class count (class-level, one channel per class).
pub fn init_discriminator<F: Real>(
    embed_dim: usize,
    out_channels: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ParameterStore<F>> {
    init_three_conv(NetworkKind::Discriminator, embed_dim, out_channels, rng)
}

pub fn init_similarity<F: Real>(embed_dim: usize, rng: &mut ChaCha8Rng) -> Result<ParameterStore<F>> {
    init_three_conv(NetworkKind::Similarity, embed_dim, 1, rng)
}

/// Relative-coordinate pair index for a `ws x ws` window: entry `(i, j)` maps
/// to the (2ws-1)^2 table slot for the offset between tokens i and j.
pub fn rel_pair_index(ws: usize) -> Vec<usize> {
    let t = ws * ws;
    let span = 2 * ws - 1;
    let mut out = Vec::with_capacity(t * t);
    for i in 0..t {
        let (iy, ix) = (i / ws, i % ws);
        for j in 0..t {
            let (jy, jx) = (j / ws, j % ws);
            let dy = iy as isize - jy as isize + (ws as isize - 1);
            let dx = ix as isize - jx as isize + (ws as isize - 1);
            out.push(dy as usize * span + dx as usize);
        }
    }
    out
}

/// Linear layer on `(N, T, C)` tokens: flattens, applies `x @ w + b`, restores.
fn token_linear<'t, F: Real, P: ParamSource<'t, F>>(
    params: &P,
    prefix: &str,
    x: Var<'t, F>,
) -> Result<Var<'t, F>> {
    let xs = x.shape();
    let (n, t, c) = (xs[0], xs[1], xs[2]);
    let w = params.var(&format!("{prefix}.weight"))?;
    let b = params.var(&format!("{prefix}.bias"))?;
    let dout = w.shape()[1];
    let flat = ops::reshape(x, &[n * t, c])?;
    let y = ops::linear(flat, w, b)?;
    ops::reshape(y, &[n, t, dout])
}

/// Index maps shared by every block of one ViT forward pass.
struct VitMaps {
    partition_shape: Vec<usize>,
    partition: Rc<Vec<u32>>,
    merge_shape: Vec<usize>,
    merge: Rc<Vec<u32>>,
    shift_fwd: Rc<Vec<u32>>,
    shift_back: Rc<Vec<u32>>,
    qkv_shape: Vec<usize>,
    qkv: [Rc<Vec<u32>>; 3],
    heads_shape: Vec<usize>,
    heads_merge: Rc<Vec<u32>>,
    pair_idx: Vec<usize>,
}

impl VitMaps {
    fn build(cfg: &ExtractorConfig, b: usize) -> Self {
        use crate::autodiff::ops::shape_maps as sm;
        let (gh, gw) = cfg.grid();
        let (c, ws, heads) = (cfg.embed_dim, cfg.window_size, cfg.heads);
        let shift = (ws / 2) as isize;
        let n = b * (gh / ws) * (gw / ws);
        let t = ws * ws;
        let (partition_shape, partition) = sm::window_partition_map(b, c, gh, gw, ws);
        let (merge_shape, merge) = sm::window_merge_map(b, c, gh, gw, ws);
        let (qkv_shape, q) = sm::qkv_head_map(n, t, c, heads, 0);
        let (_, k) = sm::qkv_head_map(n, t, c, heads, 1);
        let (_, v) = sm::qkv_head_map(n, t, c, heads, 2);
        let (heads_shape, heads_merge) = sm::merge_heads_map(n, t, c / heads, heads);
        Self {
            partition_shape,
            partition: Rc::new(partition),
            merge_shape,
            merge: Rc::new(merge),
            shift_fwd: Rc::new(sm::cyclic_shift_map(b, c, gh, gw, shift, shift)),
            shift_back: Rc::new(sm::cyclic_shift_map(b, c, gh, gw, -shift, -shift)),
            qkv_shape,
            qkv: [Rc::new(q), Rc::new(k), Rc::new(v)],
            heads_shape,
            heads_merge: Rc::new(heads_merge),
            pair_idx: rel_pair_index(ws),
        }
    }
}

fn token_layernorm<'t, F: Real, P: ParamSource<'t, F>>(
    params: &P,
    prefix: &str,
    x: Var<'t, F>,
) -> Result<Var<'t, F>> {
    let g = params.var(&format!("{prefix}.gamma"))?;
    let b = params.var(&format!("{prefix}.beta"))?;
    ops::layernorm(x, g, b, F::c(LN_EPS))
}

fn chan_layernorm<'t, F: Real, P: ParamSource<'t, F>>(
    params: &P,
    prefix: &str,
    x: Var<'t, F>,
) -> Result<Var<'t, F>> {
    let g = params.var(&format!("{prefix}.gamma"))?;
    let b = params.var(&format!("{prefix}.beta"))?;
    ops::layernorm_chan(x, g, b, F::c(LN_EPS))
}

/// One window-attention + MLP block on tokens `(N, T, C)`.
fn vit_block<'t, F: Real, P: ParamSource<'t, F>>(
    cfg: &ExtractorConfig,
    params: &P,
    idx: usize,
    tokens: Var<'t, F>,
    maps: &VitMaps,
) -> Result<Var<'t, F>> {
    use crate::autodiff::ops::shape_maps::gather_shared;
    let pre = format!("blocks.{idx}");
    let xs = tokens.shape();
    let (n, t, c) = (xs[0], xs[1], xs[2]);
    let heads = cfg.heads;
    let d = c / heads;

    let h = token_layernorm(params, &format!("{pre}.norm1"), tokens)?;
    let qkv = token_linear(params, &format!("{pre}.attn.qkv"), h)?;
    let q = gather_shared("split_heads", qkv, maps.qkv_shape.clone(), &maps.qkv[0])?;
    let k = gather_shared("split_heads", qkv, maps.qkv_shape.clone(), &maps.qkv[1])?;
    let v = gather_shared("split_heads", qkv, maps.qkv_shape.clone(), &maps.qkv[2])?;
    let scale = F::one() / F::from_usize_(d).sqrt();
    let logits = ops::scalar_mul(ops::bmm_nt(q, k)?, scale)?;
    let table = params.var(&format!("{pre}.attn.rel_bias"))?;
    let bias = ops::bias_lookup(table, &maps.pair_idx, t)?;
    let logits = ops::reshape(logits, &[n, heads, t, t])?;
    let logits = ops::add_bcast(logits, bias)?;
    let logits = ops::reshape(logits, &[n * heads, t, t])?;
    let attn = ops::softmax(logits, 2)?;
    let ctx = gather_shared(
        "merge_heads",
        ops::bmm(attn, v)?,
        maps.heads_shape.clone(),
        &maps.heads_merge,
    )?;
    let proj = token_linear(params, &format!("{pre}.attn.proj"), ctx)?;
    let tokens = ops::add(tokens, proj)?;

    let h = token_layernorm(params, &format!("{pre}.norm2"), tokens)?;
    let h = token_linear(params, &format!("{pre}.mlp.fc1"), h)?;
    let h = ops::gelu(h)?;
    let h = token_linear(params, &format!("{pre}.mlp.fc2"), h)?;
    ops::add(tokens, h)
}

/// Runs the extractor: `(B, 3, H, W)` images in `[0,1]` to a feature map
/// `(B, embed_dim, H/patch, W/patch)`. Alternating ViT blocks use regular and
/// cyclically shifted window partitions (shift = window_size / 2).
pub fn extractor_forward<'t, F: Real, P: ParamSource<'t, F>>(
    cfg: &ExtractorConfig,
    params: &P,
    images: Var<'t, F>,
) -> Result<Var<'t, F>> {
    let xs = images.shape();
    let (_gh, _gw) = cfg.grid();
    if xs.len() != 4 || xs[1] != 3 || xs[2] != cfg.image_size.0 || xs[3] != cfg.image_size.1 {
        return Err(CoreError::ShapeMismatch {
            op: "extractor_forward",
            lhs: xs,
            rhs: vec![0, 3, cfg.image_size.0, cfg.image_size.1],
        });
    }
    let b = xs[0];
    let w = params.var("patch_embed.weight")?;
    let bias = params.var("patch_embed.bias")?;
    let mut x = ops::add_chan(ops::conv2d(images, w, cfg.patch_size, 0)?, bias)?;
    x = chan_layernorm(params, "patch_embed.norm", x)?;
    match cfg.kind {
        ExtractorKind::LocalVit => {
            use crate::autodiff::ops::shape_maps::gather_shared;
            let ws = cfg.window_size;
            let shift = (ws / 2) as isize;
            let maps = VitMaps::build(cfg, b);
            for i in 0..cfg.depth {
                let shifted = i % 2 == 1 && shift > 0;
                if shifted {
                    x = gather_shared("cyclic_shift", x, x.shape(), &maps.shift_fwd)?;
                }
                let tokens =
                    gather_shared("window_partition", x, maps.partition_shape.clone(), &maps.partition)?;
                let tokens = vit_block(cfg, params, i, tokens, &maps)?;
                x = gather_shared("window_merge", tokens, maps.merge_shape.clone(), &maps.merge)?;
                if shifted {
                    x = gather_shared("cyclic_shift", x, x.shape(), &maps.shift_back)?;
                }
            }
        }
        ExtractorKind::Cnn => {
            for i in 0..cfg.depth {
                let pre = format!("blocks.{i}");
                let h = chan_layernorm(params, &format!("{pre}.norm"), x)?;
                let h = ops::relu(h)?;
                let w = params.var(&format!("{pre}.conv.weight"))?;
                let bias = params.var(&format!("{pre}.conv.bias"))?;
                let h = ops::add_chan(ops::conv2d(h, w, 1, 1)?, bias)?;
                x = ops::add(x, h)?;
            }
        }
    }
    chan_layernorm(params, "norm", x)
}

/// Per-pixel class posterior: 1x1 projection, bilinear upsample back to image
/// resolution, softmax over channels.
pub fn classifier_forward<'t, F: Real, P: ParamSource<'t, F>>(
    params: &P,
    feat: Var<'t, F>,
    upsample: usize,
) -> Result<Var<'t, F>> {
    let w = params.var("head.weight")?;
    let b = params.var("head.bias")?;
    let logits = ops::add_chan(ops::conv2d(feat, w, 1, 0)?, b)?;
    let logits = ops::upsample_bilinear(logits, upsample)?;
    ops::softmax(logits, 1)
}

/// Three 3x3 convs with leaky activations, sigmoid per output channel.
/// Shared by the discriminator (1 or K channels) and the similarity network.
pub fn discriminator_forward<'t, F: Real, P: ParamSource<'t, F>>(
    params: &P,
    feat: Var<'t, F>,
) -> Result<Var<'t, F>> {
    let slope = F::c(LEAKY_SLOPE);
    let mut x = feat;
    for (i, last) in [(1, false), (2, false), (3, true)] {
        let w = params.var(&format!("conv{i}.weight"))?;
        let b = params.var(&format!("conv{i}.bias"))?;
        x = ops::add_chan(ops::conv2d(x, w, 1, 1)?, b)?;
        if !last {
            x = ops::leaky_relu(x, slope)?;
        }
    }
    ops::sigmoid(x)
}

/// Similarity network forward: identical trunk, single sigmoid channel.
pub fn similarity_forward<'t, F: Real, P: ParamSource<'t, F>>(
    params: &P,
    feat: Var<'t, F>,
) -> Result<Var<'t, F>> {
    discriminator_forward(params, feat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::tape::Tape;
    use crate::rng;

    fn tiny_cfg(kind: ExtractorKind) -> ExtractorConfig {
        ExtractorConfig {
            kind,
            image_size: (16, 16),
            patch_size: 2,
            window_size: 2,
            embed_dim: 8,
            depth: 2,
            heads: 2,
        }
    }

    fn rand_images(n: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut r = rng::stream(seed, &[99]);
        let vals = (0..n * 3 * h * w).map(|_| r.random::<f64>()).collect();
        Tensor::new(&[n, 3, h, w], vals).unwrap()
    }

    #[test]
    fn identical_images_give_identical_features() {
        let cfg = tiny_cfg(ExtractorKind::LocalVit);
        let mut r = rng::stream(0, &[rng::purpose::INIT_EXTRACTOR]);
        let store = init_extractor::<f64>(&cfg, &mut r).unwrap();
        let one = rand_images(1, 16, 16, 5);
        let mut two = Tensor::zeros(&[2, 3, 16, 16]);
        two.values_mut()[..one.len()].copy_from_slice(one.values());
        two.values_mut()[one.len()..].copy_from_slice(one.values());
        let tape = Tape::eval();
        let leased = store.lease(&tape, false);
        let x = tape.leaf(&two);
        let f = extractor_forward(&cfg, &leased, x).unwrap();
        let d = f.data();
        let half = d.len() / 2;
        assert_eq!(&d[..half], &d[half..]);
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = tiny_cfg(ExtractorKind::Cnn);
        let mut r = rng::stream(1, &[rng::purpose::INIT_EXTRACTOR]);
        let store = init_extractor::<f64>(&cfg, &mut r).unwrap();
        let img = rand_images(1, 16, 16, 6);
        let run = || {
            let tape = Tape::eval();
            let leased = store.lease(&tape, false);
            let x = tape.leaf(&img);
            extractor_forward(&cfg, &leased, x).unwrap().data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zeroed_classifier_is_uniform() {
        let mut r = rng::stream(2, &[rng::purpose::INIT_CLASSIFIER]);
        let mut store = init_classifier::<f64>(8, 5, &mut r).unwrap();
        for (_, t) in store.iter_mut() {
            t.values_mut().fill(0.0);
        }
        let tape = Tape::eval();
        let leased = store.lease(&tape, false);
        let feat = tape.constant(&[1, 8, 4, 4], alloc::vec![0.3; 128]).unwrap();
        let p = classifier_forward(&leased, feat, 2).unwrap();
        assert_eq!(p.shape(), alloc::vec![1, 5, 8, 8]);
        assert!(p.data().iter().all(|&v| (v - 0.2f64).abs() < 1e-12));
    }

    #[test]
    fn zeroed_discriminator_outputs_half() {
        let mut r = rng::stream(3, &[rng::purpose::INIT_DISCRIMINATOR]);
        let mut store = init_discriminator::<f64>(8, 1, &mut r).unwrap();
        for (_, t) in store.iter_mut() {
            t.values_mut().fill(0.0);
        }
        let tape = Tape::eval();
        let leased = store.lease(&tape, false);
        let feat = tape.constant(&[2, 8, 4, 4], alloc::vec![0.7; 256]).unwrap();
        let d = discriminator_forward(&leased, feat).unwrap();
        assert_eq!(d.shape(), alloc::vec![2, 1, 4, 4]);
        assert!(d.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn discriminator_outputs_in_unit_interval() {
        let mut r = rng::stream(4, &[rng::purpose::INIT_DISCRIMINATOR]);
        let store = init_discriminator::<f64>(8, 3, &mut r).unwrap();
        let tape = Tape::eval();
        let leased = store.lease(&tape, false);
        let mut rr = rng::stream(4, &[77]);
        let vals = (0..256).map(|_| rr.random::<f64>() * 4.0 - 2.0).collect();
        let feat = tape.constant(&[2, 8, 4, 4], vals).unwrap();
        let d = discriminator_forward(&leased, feat).unwrap();
        assert_eq!(d.shape(), alloc::vec![2, 3, 4, 4]);
        assert!(d.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn every_vit_parameter_receives_gradient() {
        let cfg = tiny_cfg(ExtractorKind::LocalVit);
        for seed in 0..5u64 {
            let mut r = rng::stream(seed, &[rng::purpose::INIT_EXTRACTOR]);
            let mut store = init_extractor::<f64>(&cfg, &mut r).unwrap();
            let img = rand_images(2, 16, 16, seed + 10);
            let tape = Tape::new();
            let leased = store.lease(&tape, true);
            let x = tape.leaf(&img);
            let f = extractor_forward(&cfg, &leased, x).unwrap();
            let loss = crate::autodiff::ops::sum_all(f).unwrap();
            tape.backward(loss).unwrap();
            store.absorb_grads(&tape, &leased).unwrap();
            for (name, t) in store.iter() {
                let g = t.grad().unwrap_or_else(|| panic!("no grad for {name}"));
                assert!(
                    g.iter().any(|&v| v != 0.0),
                    "all-zero grad for {name} at seed {seed}"
                );
            }
        }
    }

    #[test]
    fn default_configs_have_comparable_capacity() {
        let mut r = rng::stream(0, &[rng::purpose::INIT_EXTRACTOR]);
        let vit = init_extractor::<f32>(&ExtractorConfig::local_vit_default(), &mut r).unwrap();
        let cnn = init_extractor::<f32>(&ExtractorConfig::cnn_default(), &mut r).unwrap();
        let (nv, nc) = (vit.num_scalars() as f64, cnn.num_scalars() as f64);
        let ratio = (nv - nc).abs() / nv;
        assert!(ratio < 0.2, "vit {nv} vs cnn {nc}: {ratio}");
    }
}
