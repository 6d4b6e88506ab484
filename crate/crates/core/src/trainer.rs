//! Training orchestration: the warm-up phase, the multi-round train phase
//! with per-round student re-initialization, and the per-iteration
//! alternating update of the discriminator, the similarity network, and the
//! live extractor + classifier, with EMA teacher updates.
//!
//! Per-iteration update order: features forward; discriminator step (weighted
//! adversarial loss when dynamic weighting is on, with weights from the
//! not-yet-updated similarity network); similarity step; dynamic weights from
//! the updated similarity network; pseudo labels from the teacher branch;
//! main step on extractor + classifier (source CE + target CE + fooling
//! loss against the freshly updated, frozen discriminator); EMA update.
//!
//! All stochasticity at iteration `i` derives from `(seed, i)`, so resuming
//! from a checkpoint replays the exact batch stream.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::ops;
use crate::autodiff::optim::{adam_step, adamw_step, lr_at, OptimizerState, Schedule};
use crate::autodiff::params::ParameterStore;
use crate::autodiff::tape::{Tape, Var};
use crate::autodiff::tensor::Tensor;
use crate::diagnostics::DynamicsTrace;
use crate::error::{CoreError, Result};
use crate::metrics::ConfusionMatrix;
use crate::momentum::{ema_update, init_momentum, teacher_branches, MomentumPair, SmoothingConfig};
use crate::nets::{
    classifier_forward, discriminator_forward, extractor_forward, init_classifier,
    init_discriminator, init_extractor, init_similarity, similarity_forward, ExtractorConfig,
};
use crate::objectives::{
    adv_bin, adv_cls, adv_wbin, adv_wcls, ce_source, ce_target, dynamic_weights,
    generator_adv_bin, generator_adv_cls, pseudo_label,
};
use crate::rng::{self, purpose};
use crate::synthdata::{
    augment, generate, AugmentConfig, Domain, DomainSpec, SceneSample, IGNORE_INDEX,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscriminatorMode {
    None,
    Binary,
    Class,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    /// AdamW learning rate for the extractor and classifier.
    pub lr_fc: f64,
    pub weight_decay: f64,
    /// Adam learning rate for the discriminator and similarity network.
    pub lr_ds: f64,
    /// Linear warm-up extent of the extractor/classifier schedule.
    pub lr_warmup_steps: u64,
    pub poly_power: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr_fc: 6e-5,
            weight_decay: 0.01,
            lr_ds: 1e-4,
            lr_warmup_steps: 250,
            poly_power: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub warmup_iters: u64,
    pub iters_per_round: u64,
    pub rounds: u32,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            warmup_iters: 1000,
            iters_per_round: 2000,
            rounds: 3,
        }
    }
}

impl ScheduleConfig {
    pub fn total_iters(&self) -> u64 {
        self.warmup_iters + self.rounds as u64 * self.iters_per_round
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train_size: usize,
    pub eval_size: usize,
    pub domain: DomainSpec,
    /// Optional pre-exported dataset files replacing the generated train
    /// splits (loaded by the CLI layer).
    pub import_source: Option<String>,
    pub import_target: Option<String>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_size: 128,
            eval_size: 64,
            domain: DomainSpec::default(),
            import_source: None,
            import_target: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    pub enabled: bool,
    pub probe_size: usize,
    pub stride: u64,
    /// Snapshots retained in each trace's ring buffer.
    pub ring_capacity: usize,
    /// High-frequency band boundary for spectra, in bins; `None` means T/4.
    pub high_band_min: Option<usize>,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            probe_size: 8,
            stride: 1,
            ring_capacity: 2,
            high_band_min: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: Option<String>,
    pub extractor: ExtractorConfig,
    pub discriminator: DiscriminatorMode,
    pub dynamic_weights: bool,
    pub smoothing: SmoothingConfig,
    /// Use the saturating fooling loss (negated discriminator loss) instead
    /// of the default flipped-target form.
    pub generator_saturating: bool,
    pub optim: OptimConfig,
    pub schedule: ScheduleConfig,
    pub batch_size: usize,
    pub data: DataConfig,
    pub augment: AugmentConfig,
    pub diagnostics: DiagnosticsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: None,
            extractor: ExtractorConfig::local_vit_default(),
            discriminator: DiscriminatorMode::Binary,
            dynamic_weights: false,
            smoothing: SmoothingConfig::default(),
            generator_saturating: false,
            optim: OptimConfig::default(),
            schedule: ScheduleConfig::default(),
            batch_size: 4,
            data: DataConfig::default(),
            augment: AugmentConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn num_classes(&self) -> usize {
        self.data.domain.common_classes
    }

    pub fn validate(&self) -> Result<()> {
        self.extractor.validate()?;
        self.smoothing.validate()?;
        self.data.domain.validate()?;
        if self.schedule.rounds < 1 {
            return Err(CoreError::Config(String::from("rounds must be >= 1")));
        }
        if self.batch_size == 0 {
            return Err(CoreError::Config(String::from("batch_size must be >= 1")));
        }
        if self.discriminator == DiscriminatorMode::None {
            if self.dynamic_weights {
                return Err(CoreError::Config(String::from(
                    "discriminator_mode=none forbids dynamic_weights (nothing to weight)",
                )));
            }
            if self.smoothing.mo_fa {
                return Err(CoreError::Config(String::from(
                    "discriminator_mode=none forbids mo_fa (no feature consumer to smooth)",
                )));
            }
        }
        if self.extractor.image_size != self.data.domain.image_size {
            return Err(CoreError::Config(alloc::format!(
                "extractor image size {:?} != data image size {:?}",
                self.extractor.image_size,
                self.data.domain.image_size
            )));
        }
        if self.data.train_size < self.batch_size || self.data.eval_size == 0 {
            return Err(CoreError::Config(String::from(
                "dataset sizes must cover at least one batch",
            )));
        }
        if self.diagnostics.enabled && self.diagnostics.probe_size == 0 {
            return Err(CoreError::Config(String::from("probe_size must be >= 1")));
        }
        Ok(())
    }

    pub fn uses_adversarial(&self) -> bool {
        self.discriminator != DiscriminatorMode::None
    }

    fn fc_schedule(&self) -> Schedule {
        Schedule::LinearWarmupLinear {
            base: self.optim.lr_fc,
            warmup_steps: self.optim.lr_warmup_steps,
            total_steps: self.schedule.total_iters(),
        }
    }

    fn ds_schedule(&self) -> Schedule {
        Schedule::Poly {
            base: self.optim.lr_ds,
            power: self.optim.poly_power,
            total_steps: self.schedule.total_iters(),
        }
    }

    /// (extractor/classifier lr, discriminator/similarity lr) at `iter`.
    pub fn lrs_at(&self, iter: u64) -> (f64, f64) {
        (
            lr_at(&self.fc_schedule(), iter),
            lr_at(&self.ds_schedule(), iter),
        )
    }
}

/// Adversarial-loss variant actually in effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvVariant {
    None,
    Bin,
    WBin,
    Cls,
    WCls,
}

impl AdvVariant {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        match (cfg.discriminator, cfg.dynamic_weights) {
            (DiscriminatorMode::None, _) => AdvVariant::None,
            (DiscriminatorMode::Binary, false) => AdvVariant::Bin,
            (DiscriminatorMode::Binary, true) => AdvVariant::WBin,
            (DiscriminatorMode::Class, false) => AdvVariant::Cls,
            (DiscriminatorMode::Class, true) => AdvVariant::WCls,
        }
    }
}

/// Scalar losses observed in one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBundle {
    pub ce_source: f32,
    pub ce_target: Option<f32>,
    pub adv: Option<f32>,
    pub sim: Option<f32>,
    /// Generator fooling loss (not part of the CSV schema; kept for abort
    /// diagnostics).
    pub gen_adv: Option<f32>,
    pub variant: AdvVariant,
}

/// One iteration's inputs: paired source images + masks and target images.
/// Target masks never enter here.
pub struct DomainBatch {
    pub src_images: Tensor<f32>,
    /// `(B, H, W)` labels with private ids already mapped to ignore.
    pub src_labels: Vec<u8>,
    pub tgt_images: Tensor<f32>,
}

/// Generated datasets plus the fixed probe batch.
pub struct TrainData {
    pub source: Vec<SceneSample<f32>>,
    pub target: Vec<SceneSample<f32>>,
    pub source_eval: Vec<SceneSample<f32>>,
    pub target_eval: Vec<SceneSample<f32>>,
    pub probe: Tensor<f32>,
}

fn stack_images(samples: &[&SceneSample<f32>]) -> Tensor<f32> {
    let shape = samples[0].image.shape();
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let mut vals = Vec::with_capacity(samples.len() * c * h * w);
    for s in samples {
        vals.extend_from_slice(s.image.values());
    }
    Tensor::new(&[samples.len(), c, h, w], vals).expect("uniform sample shapes")
}

/// Maps ids outside the common label set to the ignore index (private
/// classes are not classifier targets).
pub fn sanitize_labels(mask: &[u8], k_common: usize) -> Vec<u8> {
    mask.iter()
        .map(|&m| if (m as usize) < k_common { m } else { IGNORE_INDEX })
        .collect()
}

/// Generates all splits and the probe batch from the experiment seed.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<TrainData> {
    let spec = &cfg.data.domain;
    let source = generate(spec, Domain::Source, cfg.data.train_size, rng::mix(cfg.seed, &[purpose::SOURCE_TRAIN]))?;
    let target = generate(spec, Domain::Target, cfg.data.train_size, rng::mix(cfg.seed, &[purpose::TARGET_TRAIN]))?;
    let source_eval = generate(spec, Domain::Source, cfg.data.eval_size, rng::mix(cfg.seed, &[purpose::SOURCE_EVAL]))?;
    let target_eval = generate(spec, Domain::Target, cfg.data.eval_size, rng::mix(cfg.seed, &[purpose::TARGET_EVAL]))?;
    let probe_samples = generate::<f32>(
        spec,
        Domain::Target,
        cfg.diagnostics.probe_size.max(1),
        rng::mix(cfg.seed, &[purpose::PROBE]),
    )?;
    let probe = stack_images(&probe_samples.iter().collect::<Vec<_>>());
    Ok(TrainData {
        source,
        target,
        source_eval,
        target_eval,
        probe,
    })
}

/// Draws and augments one batch; a pure function of `(seed, iter)`.
pub fn sample_batch(cfg: &ExperimentConfig, data: &TrainData, iter: u64) -> DomainBatch {
    let mut r = rng::stream(cfg.seed, &[purpose::BATCH, iter]);
    let k = cfg.num_classes();
    let mut src = Vec::with_capacity(cfg.batch_size);
    let mut labels = Vec::new();
    for _ in 0..cfg.batch_size {
        let idx = rand::Rng::random_range(&mut r, 0..data.source.len());
        let s = augment(&data.source[idx], &cfg.augment, &mut r);
        labels.extend(sanitize_labels(&s.mask, k));
        src.push(s);
    }
    let mut tgt = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.batch_size {
        let idx = rand::Rng::random_range(&mut r, 0..data.target.len());
        tgt.push(augment(&data.target[idx], &cfg.augment, &mut r));
    }
    DomainBatch {
        src_images: stack_images(&src.iter().collect::<Vec<_>>()),
        src_labels: labels,
        tgt_images: stack_images(&tgt.iter().collect::<Vec<_>>()),
    }
}

/// Everything mutable across a run.
pub struct TrainState {
    pub f_live: ParameterStore<f32>,
    pub c_live: ParameterStore<f32>,
    pub d: Option<ParameterStore<f32>>,
    pub s: Option<ParameterStore<f32>>,
    pub pair_f: Option<MomentumPair<f32>>,
    pub pair_c: Option<MomentumPair<f32>>,
    pub opt_f: OptimizerState<f32>,
    pub opt_c: OptimizerState<f32>,
    pub opt_d: Option<OptimizerState<f32>>,
    pub opt_s: Option<OptimizerState<f32>>,
    /// Fixed seeded initialization snapshot; the per-round student reset
    /// target. Immutable after creation.
    pub snapshot_f: ParameterStore<f32>,
    pub snapshot_c: ParameterStore<f32>,
    pub iter: u64,
    pub round: u32,
}

/// Fresh state from the config seed. The momentum pair (when smoothing is
/// active) initializes from the live weights at creation.
pub fn init_state(cfg: &ExperimentConfig) -> Result<TrainState> {
    cfg.validate()?;
    let k = cfg.num_classes();
    let emb = cfg.extractor.embed_dim;
    let f_live = init_extractor::<f32>(
        &cfg.extractor,
        &mut rng::stream(cfg.seed, &[purpose::INIT_EXTRACTOR]),
    )?;
    let c_live = init_classifier::<f32>(
        emb,
        k,
        &mut rng::stream(cfg.seed, &[purpose::INIT_CLASSIFIER]),
    )?;
    let (d, s) = if cfg.uses_adversarial() {
        let out = match cfg.discriminator {
            DiscriminatorMode::Class => k,
            _ => 1,
        };
        (
            Some(init_discriminator::<f32>(
                emb,
                out,
                &mut rng::stream(cfg.seed, &[purpose::INIT_DISCRIMINATOR]),
            )?),
            Some(init_similarity::<f32>(
                emb,
                &mut rng::stream(cfg.seed, &[purpose::INIT_SIMILARITY]),
            )?),
        )
    } else {
        (None, None)
    };
    let m = cfg.smoothing.m as f32;
    let pair_f = cfg.smoothing.active().then(|| init_momentum(&f_live, m));
    let pair_c = cfg.smoothing.mo_pl.then(|| init_momentum(&c_live, m));
    let wd = cfg.optim.weight_decay as f32;
    let opt_f = OptimizerState::new(&f_live, wd, cfg.fc_schedule());
    let opt_c = OptimizerState::new(&c_live, wd, cfg.fc_schedule());
    let opt_d = d.as_ref().map(|st| OptimizerState::new(st, 0.0, cfg.ds_schedule()));
    let opt_s = s.as_ref().map(|st| OptimizerState::new(st, 0.0, cfg.ds_schedule()));
    let snapshot_f = f_live.detached_copy();
    let snapshot_c = c_live.detached_copy();
    Ok(TrainState {
        f_live,
        c_live,
        d,
        s,
        pair_f,
        pair_c,
        opt_f,
        opt_c,
        opt_d,
        opt_s,
        snapshot_f,
        snapshot_c,
        iter: 0,
        round: 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Warmup,
    Train,
}

/// Average-pools a probability map down by `factor` (identity at 1).
fn pool_probs(p: &Tensor<f32>, factor: usize) -> Result<Tensor<f32>> {
    if factor <= 1 {
        return Ok(p.clone());
    }
    let tape = Tape::eval();
    let v = tape.leaf(p);
    Ok(ops::avg_pool2d(v, factor)?.to_tensor())
}

/// Evaluation-only forward of extractor (+ classifier) on plain tensors.
fn eval_prediction(
    cfg: &ExperimentConfig,
    f: &ParameterStore<f32>,
    c: &ParameterStore<f32>,
    images: &Tensor<f32>,
) -> Result<Tensor<f32>> {
    let tape = Tape::eval();
    let lf = f.lease(&tape, false);
    let lc = c.lease(&tape, false);
    let x = tape.leaf(images);
    let feat = extractor_forward(&cfg.extractor, &lf, x)?;
    Ok(classifier_forward(&lc, feat, cfg.extractor.patch_size)?.to_tensor())
}

fn eval_features(
    cfg: &ExperimentConfig,
    f: &ParameterStore<f32>,
    images: &Tensor<f32>,
) -> Result<Tensor<f32>> {
    let tape = Tape::eval();
    let lf = f.lease(&tape, false);
    let x = tape.leaf(images);
    Ok(extractor_forward(&cfg.extractor, &lf, x)?.to_tensor())
}

fn eval_three_conv(net: &ParameterStore<f32>, feat: &Tensor<f32>) -> Result<Tensor<f32>> {
    let tape = Tape::eval();
    let l = net.lease(&tape, false);
    let x = tape.leaf(feat);
    Ok(discriminator_forward(&l, x)?.to_tensor())
}

struct StepOutcome {
    bundle: LossBundle,
}

fn run_step(
    cfg: &ExperimentConfig,
    state: &mut TrainState,
    batch: &DomainBatch,
    phase: Phase,
) -> Result<StepOutcome> {
    let variant = AdvVariant::from_config(cfg);
    let patch = cfg.extractor.patch_size;
    let (lr_fc, lr_ds) = cfg.lrs_at(state.iter);
    let branches = teacher_branches(
        &cfg.smoothing,
        &state.f_live,
        &state.c_live,
        state.pair_f.as_ref(),
        state.pair_c.as_ref(),
    )?;

    // Sub-step 1: live forwards on the main graph.
    let tape_main = Tape::new();
    let leased_f = state.f_live.lease(&tape_main, true);
    let leased_c = state.c_live.lease(&tape_main, true);
    let x_src = tape_main.leaf(&batch.src_images);
    let feat_src = extractor_forward(&cfg.extractor, &leased_f, x_src)?;
    let p_src = classifier_forward(&leased_c, feat_src, patch)?;
    let p_src_vals = p_src.to_tensor();

    // The live target forward exists whenever something consumes it: target
    // CE in the train phase, or any adversarial/similarity/weight consumer
    // when the feature branch is not smoothed.
    let need_teacher_pred =
        phase == Phase::Train || cfg.dynamic_weights || cfg.discriminator == DiscriminatorMode::Class;
    let need_live_tgt = phase == Phase::Train
        || (!cfg.smoothing.mo_fa && cfg.uses_adversarial())
        || (need_teacher_pred && !cfg.smoothing.mo_pl);
    let (feat_tgt_live, p_tgt_live) = if need_live_tgt {
        let x_tgt = tape_main.leaf(&batch.tgt_images);
        let feat = extractor_forward(&cfg.extractor, &leased_f, x_tgt)?;
        let p = classifier_forward(&leased_c, feat, patch)?;
        (Some(feat), Some(p))
    } else {
        (None, None)
    };

    // Feature-alignment branch values (detached by construction).
    let feat_tgt_fa: Option<Tensor<f32>> = if cfg.uses_adversarial() {
        Some(if branches.fa_is_ema {
            eval_features(cfg, branches.fa_extractor, &batch.tgt_images)?
        } else {
            feat_tgt_live.as_ref().expect("live branch present").to_tensor()
        })
    } else {
        None
    };
    let feat_src_vals = feat_src.to_tensor();

    // Teacher prediction on the pseudo-label branch.
    let p_teacher: Option<Tensor<f32>> = if need_teacher_pred {
        Some(if branches.pl_is_ema {
            let tape = Tape::eval();
            let lf = branches.pl_extractor.lease(&tape, false);
            let lc = branches.pl_classifier.lease(&tape, false);
            let x = tape.leaf(&batch.tgt_images);
            let feat = extractor_forward(&cfg.extractor, &lf, x)?;
            classifier_forward(&lc, feat, patch)?.to_tensor()
        } else {
            p_tgt_live.as_ref().expect("live branch present").to_tensor()
        })
    } else {
        None
    };

    let mut adv_loss = None;
    let mut sim_loss_val = None;
    let mut w_maps: Option<(Tensor<f32>, Tensor<f32>)> = None;
    if cfg.uses_adversarial() {
        let d_store = state.d.as_mut().expect("adversarial mode has D");
        let s_store = state.s.as_mut().expect("adversarial mode has S");
        let feat_tgt_fa = feat_tgt_fa.as_ref().unwrap();

        // Pre-update similarity scores feed the discriminator's weights.
        let weights_pre = if cfg.dynamic_weights {
            let s_src = eval_three_conv(s_store, &feat_src_vals)?;
            let s_tgt = eval_three_conv(s_store, feat_tgt_fa)?;
            Some(dynamic_weights(
                &p_src_vals,
                p_teacher.as_ref().unwrap(),
                &s_src,
                &s_tgt,
            )?)
        } else {
            None
        };

        // Sub-step 2: discriminator update on detached features.
        let tape_d = Tape::new();
        let ld = d_store.lease(&tape_d, true);
        let fs = tape_d.leaf(&feat_src_vals);
        let ft = tape_d.leaf(feat_tgt_fa);
        let d_src = discriminator_forward(&ld, fs)?;
        let d_tgt = discriminator_forward(&ld, ft)?;
        let loss_d = match variant {
            AdvVariant::Bin => adv_bin(d_src, d_tgt)?,
            AdvVariant::WBin => {
                let (ws, wt) = weights_pre.as_ref().unwrap();
                adv_wbin(d_src, d_tgt, tape_d.leaf(ws), tape_d.leaf(wt))?
            }
            AdvVariant::Cls | AdvVariant::WCls => {
                let k = cfg.num_classes();
                let ps = pool_probs(&p_src_vals, patch)?;
                let pt = pool_probs(p_teacher.as_ref().unwrap(), patch)?;
                let psv = tape_d.leaf(&ps);
                let ptv = tape_d.leaf(&pt);
                if variant == AdvVariant::Cls {
                    adv_cls(psv, ptv, d_src, d_tgt)?
                } else {
                    let (ws, wt) = weights_pre.as_ref().unwrap();
                    let _ = k;
                    adv_wcls(psv, ptv, d_src, d_tgt, tape_d.leaf(ws), tape_d.leaf(wt))?
                }
            }
            AdvVariant::None => unreachable!(),
        };
        adv_loss = Some(loss_d.item()?);
        tape_d.backward(loss_d)?;
        d_store.absorb_grads(&tape_d, &ld)?;
        adam_step(d_store, state.opt_d.as_mut().unwrap(), lr_ds as f32)?;
        d_store.zero_grads();

        // Sub-step 3: similarity update on the same detached features.
        let tape_s = Tape::new();
        let ls = s_store.lease(&tape_s, true);
        let fs = tape_s.leaf(&feat_src_vals);
        let ft = tape_s.leaf(feat_tgt_fa);
        let s_src = similarity_forward(&ls, fs)?;
        let s_tgt = similarity_forward(&ls, ft)?;
        let loss_s = crate::objectives::sim_loss(s_src, s_tgt)?;
        sim_loss_val = Some(loss_s.item()?);
        tape_s.backward(loss_s)?;
        s_store.absorb_grads(&tape_s, &ls)?;
        adam_step(s_store, state.opt_s.as_mut().unwrap(), lr_ds as f32)?;
        s_store.zero_grads();

        // Sub-step 4: weights from the updated similarity network.
        if cfg.dynamic_weights {
            let s_src = eval_three_conv(state.s.as_ref().unwrap(), &feat_src_vals)?;
            let s_tgt = eval_three_conv(state.s.as_ref().unwrap(), feat_tgt_fa)?;
            w_maps = Some(dynamic_weights(
                &p_src_vals,
                p_teacher.as_ref().unwrap(),
                &s_src,
                &s_tgt,
            )?);
        }
    }

    // Sub-step 5: pseudo labels from the teacher branch.
    let pseudo = if phase == Phase::Train {
        Some(pseudo_label(p_teacher.as_ref().expect("train phase has teacher"))?)
    } else {
        None
    };

    // Sub-step 6: main update.
    let mut total = ce_source(p_src, &batch.src_labels, IGNORE_INDEX)?;
    let ce_src_val = total.item()?;
    let mut ce_tgt_val = None;
    if let Some(pseudo) = &pseudo {
        let loss_t = ce_target(p_tgt_live.expect("train phase"), &pseudo.onehot)?;
        ce_tgt_val = Some(loss_t.item()?);
        total = ops::add(total, loss_t)?;
    }
    let mut gen_val = None;
    if cfg.uses_adversarial() {
        let d_store = state.d.as_ref().unwrap();
        let ld = d_store.lease(&tape_main, false);
        let d_src_main = discriminator_forward(&ld, feat_src)?;
        let disc_hw = d_src_main.shape();
        let ones = Tensor::full(&[disc_hw[0], 1, disc_hw[2], disc_hw[3]], 1.0f32);
        let (w_s, w_t) = match &w_maps {
            Some((a, b)) => (a.clone(), b.clone()),
            None => (ones.clone(), ones),
        };
        let ws_var = tape_main.leaf(&w_s);
        // Target fooling branch only when the feature branch is live; its
        // features are detached either way (fooling trains through the
        // source branch), which keeps m = 0 smoothing exactly equal to the
        // no-smoothing path.
        let target_branch: Option<Var<'_, f32>> = if !cfg.smoothing.mo_fa {
            let ft = ops::stop_gradient(feat_tgt_live.expect("live branch present"));
            Some(discriminator_forward(&ld, ft)?)
        } else {
            None
        };
        let gen = match variant {
            AdvVariant::Bin | AdvVariant::WBin => {
                let tgt = match target_branch {
                    Some(dt) => Some((dt, tape_main.leaf(&w_t))),
                    None => None,
                };
                generator_adv_bin(d_src_main, ws_var, tgt, cfg.generator_saturating)?
            }
            AdvVariant::Cls | AdvVariant::WCls => {
                let ps = pool_probs(&p_src_vals, patch)?;
                let psv = tape_main.leaf(&ps);
                let tgt = match target_branch {
                    Some(dt) => {
                        let pt = pool_probs(p_teacher.as_ref().unwrap(), patch)?;
                        Some((dt, tape_main.leaf(&pt), tape_main.leaf(&w_t)))
                    }
                    None => None,
                };
                generator_adv_cls(d_src_main, psv, ws_var, tgt, cfg.generator_saturating)?
            }
            AdvVariant::None => unreachable!(),
        };
        gen_val = Some(gen.item()?);
        total = ops::add(total, gen)?;
    }
    tape_main.backward(total)?;
    state.f_live.absorb_grads(&tape_main, &leased_f)?;
    state.c_live.absorb_grads(&tape_main, &leased_c)?;
    adamw_step(&mut state.f_live, &mut state.opt_f, lr_fc as f32)?;
    adamw_step(&mut state.c_live, &mut state.opt_c, lr_fc as f32)?;
    state.f_live.zero_grads();
    state.c_live.zero_grads();

    // Sub-step 7: EMA updates, once per optimizer step on the live network.
    if let Some(pair) = state.pair_f.as_mut() {
        ema_update(pair, &state.f_live)?;
    }
    if let Some(pair) = state.pair_c.as_mut() {
        ema_update(pair, &state.c_live)?;
    }

    Ok(StepOutcome {
        bundle: LossBundle {
            ce_source: ce_src_val,
            ce_target: ce_tgt_val,
            adv: adv_loss,
            sim: sim_loss_val,
            gen_adv: gen_val,
            variant,
        },
    })
}

/// One training iteration. Non-finite anywhere aborts with a diagnostic
/// snapshot of the iteration, loss values, and gradient norms.
pub fn step(
    cfg: &ExperimentConfig,
    state: &mut TrainState,
    batch: &DomainBatch,
    phase: Phase,
) -> Result<LossBundle> {
    match run_step(cfg, state, batch, phase) {
        Ok(out) => Ok(out.bundle),
        Err(CoreError::NonFinite { op }) => {
            let mut details = alloc::format!("op `{op}` produced a non-finite value; grad norms:");
            for (name, store) in [("F", &state.f_live), ("C", &state.c_live)] {
                let worst = store
                    .grad_norms()
                    .into_iter()
                    .fold(0.0f32, |a, (_, n)| a.max(n));
                details.push_str(&alloc::format!(" {name}={worst:.3e}"));
            }
            Err(CoreError::NonFiniteLoss {
                iter: state.iter,
                details,
            })
        }
        Err(e) => Err(e),
    }
}

/// Traces recorded on the fixed probe set.
pub struct Recorder {
    pub classifier: DynamicsTrace<f32>,
    pub discriminator: Option<DynamicsTrace<f32>>,
    stride: u64,
}

impl Recorder {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        let cap = cfg.diagnostics.ring_capacity.max(1);
        Self {
            classifier: DynamicsTrace::new("classifier_target").with_capacity(cap),
            discriminator: cfg
                .uses_adversarial()
                .then(|| DynamicsTrace::new("discriminator_target").with_capacity(cap)),
            stride: cfg.diagnostics.stride.max(1),
        }
    }

    /// Snapshots the pseudo-label branch prediction (and the discriminator's
    /// view of the feature branch) on the probe batch. Pure evaluation: no
    /// RNG, no parameter mutation.
    pub fn observe(
        &mut self,
        cfg: &ExperimentConfig,
        state: &TrainState,
        probe: &Tensor<f32>,
        iter: u64,
    ) -> Result<()> {
        if iter % self.stride != 0 {
            return Ok(());
        }
        let branches = teacher_branches(
            &cfg.smoothing,
            &state.f_live,
            &state.c_live,
            state.pair_f.as_ref(),
            state.pair_c.as_ref(),
        )?;
        let feat_pl = eval_features(cfg, branches.pl_extractor, probe)?;
        let pred = {
            let tape = Tape::eval();
            let lc = branches.pl_classifier.lease(&tape, false);
            let f = tape.leaf(&feat_pl);
            classifier_forward(&lc, f, cfg.extractor.patch_size)?.to_tensor()
        };
        self.classifier.track(iter, pred)?;
        if let (Some(trace), Some(d_store)) = (self.discriminator.as_mut(), state.d.as_ref()) {
            let feat_fa = if branches.fa_is_ema == branches.pl_is_ema {
                feat_pl
            } else {
                eval_features(cfg, branches.fa_extractor, probe)?
            };
            let d_out = eval_three_conv(d_store, &feat_fa)?;
            trace.track(iter, d_out)?;
        }
        Ok(())
    }
}

/// Runs the warm-up phase: `warmup_iters` iterations with target CE disabled.
pub fn warmup_phase(
    cfg: &ExperimentConfig,
    state: &mut TrainState,
    data: &TrainData,
    recorder: Option<&mut Recorder>,
) -> Result<Vec<(u64, LossBundle)>> {
    let mut log = Vec::new();
    let mut recorder = recorder;
    for _ in 0..cfg.schedule.warmup_iters {
        let batch = sample_batch(cfg, data, state.iter);
        let bundle = step(cfg, state, &batch, Phase::Warmup)?;
        log.push((state.iter, bundle));
        if let Some(r) = recorder.as_deref_mut() {
            r.observe(cfg, state, &data.probe, state.iter)?;
        }
        state.iter += 1;
    }
    Ok(log)
}

/// Runs the train phase: per round, the momentum teacher re-initializes from
/// the finishing (pre-reset) weights, the student resets to the pretrained
/// snapshot with fresh optimizer moments, and `iters_per_round` full steps
/// follow.
pub fn train_phase(
    cfg: &ExperimentConfig,
    state: &mut TrainState,
    data: &TrainData,
    recorder: Option<&mut Recorder>,
) -> Result<Vec<(u64, LossBundle)>> {
    let mut log = Vec::new();
    let mut recorder = recorder;
    for round in 0..cfg.schedule.rounds {
        if cfg.smoothing.active() {
            if let Some(pair) = state.pair_f.as_mut() {
                pair.reinit_from(&state.f_live);
            }
            if let Some(pair) = state.pair_c.as_mut() {
                pair.reinit_from(&state.c_live);
            }
        }
        state.f_live.copy_values_from(&state.snapshot_f)?;
        state.c_live.copy_values_from(&state.snapshot_c)?;
        state.f_live.zero_grads();
        state.c_live.zero_grads();
        state.opt_f = OptimizerState::new(&state.f_live, cfg.optim.weight_decay as f32, cfg.fc_schedule());
        state.opt_c = OptimizerState::new(&state.c_live, cfg.optim.weight_decay as f32, cfg.fc_schedule());
        state.round = round + 1;
        for _ in 0..cfg.schedule.iters_per_round {
            let batch = sample_batch(cfg, data, state.iter);
            let bundle = step(cfg, state, &batch, Phase::Train)?;
            log.push((state.iter, bundle));
            if let Some(r) = recorder.as_deref_mut() {
                r.observe(cfg, state, &data.probe, state.iter)?;
            }
            state.iter += 1;
        }
    }
    Ok(log)
}

/// Confusion matrix of argmax predictions over a sample set, evaluated with
/// the given extractor/classifier (common classes only; private ids ignore).
pub fn evaluate(
    cfg: &ExperimentConfig,
    f: &ParameterStore<f32>,
    c: &ParameterStore<f32>,
    samples: &[SceneSample<f32>],
) -> Result<ConfusionMatrix> {
    let k = cfg.num_classes();
    let mut cm = ConfusionMatrix::new(k);
    let chunk = 8usize;
    for group in samples.chunks(chunk) {
        let images = stack_images(&group.iter().collect::<Vec<_>>());
        let pred = eval_prediction(cfg, f, c, &images)?;
        let pl = pseudo_label(&pred)?;
        let hw = group[0].mask.len();
        for (i, sample) in group.iter().enumerate() {
            let gt = sanitize_labels(&sample.mask, k);
            cm.accumulate(&pl.classes[i * hw..(i + 1) * hw], &gt, IGNORE_INDEX)?;
        }
    }
    Ok(cm)
}

/// Target-domain mIoU of the live student.
pub fn eval_target_miou(cfg: &ExperimentConfig, state: &TrainState, data: &TrainData) -> Result<f64> {
    evaluate(cfg, &state.f_live, &state.c_live, &data.target_eval)?.miou(None)
}

/// Source-domain mIoU of the live student.
pub fn eval_source_miou(cfg: &ExperimentConfig, state: &TrainState, data: &TrainData) -> Result<f64> {
    evaluate(cfg, &state.f_live, &state.c_live, &data.source_eval)?.miou(None)
}
