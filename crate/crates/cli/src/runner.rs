//! Experiment execution: single runs with full artifact emission, the
//! ablation matrix, the momentum-coefficient grid, the toy spectral report,
//! checkpoint evaluation, and dataset export.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use mtseg_core::diagnostics::{dft, ordering_fraction, toy_gaussian_experiment, DynamicsTrace};
use mtseg_core::momentum::SmoothingConfig;
use mtseg_core::synthdata::Domain;
use mtseg_core::trainer::{
    self, init_state, prepare_data, DiscriminatorMode,
    ExperimentConfig, Recorder, TrainData,
};

use crate::config::{config_hash, config_json};
use crate::manifest::{FinalMetrics, RunManifest};
use crate::{config, formats, outputs, svg, CliError, Result};

/// Generates datasets, honoring optional imported train splits.
pub fn load_data(cfg: &ExperimentConfig) -> Result<TrainData> {
    let mut data = prepare_data(cfg)?;
    if let Some(path) = &cfg.data.import_source {
        data.source = formats::load_dataset(Path::new(path), Domain::Source)?;
    }
    if let Some(path) = &cfg.data.import_target {
        data.target = formats::load_dataset(Path::new(path), Domain::Target)?;
    }
    if data.source.len() < cfg.batch_size || data.target.len() < cfg.batch_size {
        return Err(CliError::Config(
            "imported dataset smaller than one batch".into(),
        ));
    }
    Ok(data)
}

fn mean_of(series: &[f32]) -> Option<f64> {
    (!series.is_empty()).then(|| series.iter().map(|&v| v as f64).sum::<f64>() / series.len() as f64)
}

fn trace_outputs(
    dir: &Path,
    trace: &DynamicsTrace<f32>,
    files: &mut Vec<String>,
) -> Result<Option<f64>> {
    let Ok(changes) = trace.change_series() else {
        return Ok(None);
    };
    let name = trace.tag.clone();
    let csv = outputs::trace_csv(trace.iterations(), changes);
    let csv_path = dir.join(format!("trace_{name}.csv"));
    outputs::write_text(&csv_path, &csv)?;
    files.push(format!("trace_{name}.csv"));

    let series: Vec<f64> = changes.iter().map(|&c| c as f64).collect();
    if series.len() >= 2 {
        let sp = dft(&series).map_err(CliError::Core)?;
        let sp_csv = outputs::spectrum_csv(&[(name.clone(), &sp)]);
        outputs::write_text(&dir.join(format!("spectrum_{name}.csv")), &sp_csv)?;
        files.push(format!("spectrum_{name}.csv"));
    }

    let pts: Vec<(f64, f64)> = trace.iterations()[1..]
        .iter()
        .zip(changes)
        .map(|(&i, &c)| (i as f64, c as f64))
        .collect();
    let chart = svg::line_chart(
        &format!("change of predictions: {name}"),
        "iteration",
        "L1 change",
        &[svg::Series {
            label: &name,
            points: &pts,
        }],
    );
    outputs::write_text(&dir.join(format!("change_{name}.svg")), &chart)?;
    files.push(format!("change_{name}.svg"));
    Ok(mean_of(changes))
}

/// Executes one full experiment into `out_dir`, writing every artifact and
/// the manifest. A directory holding a completed manifest for the same
/// config hash is returned as-is without recomputation.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<FinalMetrics> {
    cfg.validate()?;
    let hash = config_hash(cfg);
    if let Some(m) = RunManifest::completed(out_dir, &hash) {
        if let Some(metrics) = m.final_metrics {
            return Ok(metrics);
        }
    }
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir.display().to_string(), e))?;
    let mut manifest = RunManifest::stub(&hash, cfg.seed);
    manifest.save(out_dir)?;

    let started = Instant::now();
    let attempt = || -> Result<(FinalMetrics, Vec<String>)> {
        let mut files = vec!["config.json".to_string()];
        outputs::write_text(&out_dir.join("config.json"), &config_json(cfg))?;

        let data = load_data(cfg)?;
        let mut state = init_state(cfg)?;
        let mut recorder = cfg.diagnostics.enabled.then(|| Recorder::new(cfg));

        let mut log = trainer::warmup_phase(cfg, &mut state, &data, recorder.as_mut())?;
        formats::save_checkpoint(&state, &out_dir.join("checkpoint_warmup.tdac"))?;
        files.push("checkpoint_warmup.tdac".to_string());
        log.extend(trainer::train_phase(cfg, &mut state, &data, recorder.as_mut())?);
        formats::save_checkpoint(&state, &out_dir.join("checkpoint_final.tdac"))?;
        files.push("checkpoint_final.tdac".to_string());

        outputs::write_text(
            &out_dir.join("loss.csv"),
            &outputs::loss_csv(&log, |i| cfg.lrs_at(i)),
        )?;
        files.push("loss.csv".to_string());

        // Loss curves.
        let curve = |f: &dyn Fn(&trainer::LossBundle) -> Option<f32>| -> Vec<(f64, f64)> {
            log.iter()
                .filter_map(|(i, b)| f(b).map(|v| (*i as f64, v as f64)))
                .collect()
        };
        let ce_s = curve(&|b| Some(b.ce_source));
        let ce_t = curve(&|b| b.ce_target);
        let adv = curve(&|b| b.adv);
        let sim = curve(&|b| b.sim);
        let mut series = vec![svg::Series { label: "ce_source", points: &ce_s }];
        if !ce_t.is_empty() {
            series.push(svg::Series { label: "ce_target", points: &ce_t });
        }
        if !adv.is_empty() {
            series.push(svg::Series { label: "adv", points: &adv });
        }
        if !sim.is_empty() {
            series.push(svg::Series { label: "sim", points: &sim });
        }
        outputs::write_text(
            &out_dir.join("loss.svg"),
            &svg::line_chart("training losses", "iteration", "loss", &series),
        )?;
        files.push("loss.svg".to_string());

        let target_cm = trainer::evaluate(cfg, &state.f_live, &state.c_live, &data.target_eval)?;
        outputs::write_text(&out_dir.join("metrics.csv"), &outputs::metrics_csv(&target_cm))?;
        files.push("metrics.csv".to_string());
        let source_cm = trainer::evaluate(cfg, &state.f_live, &state.c_live, &data.source_eval)?;
        outputs::write_text(
            &out_dir.join("metrics_source.csv"),
            &outputs::metrics_csv(&source_cm),
        )?;
        files.push("metrics_source.csv".to_string());

        let mut metrics = FinalMetrics {
            target_miou: target_cm.miou(None).map_err(CliError::Core)?,
            source_miou: source_cm.miou(None).map_err(CliError::Core)?,
            mean_change_classifier: None,
            mean_change_discriminator: None,
        };
        if let Some(rec) = &recorder {
            metrics.mean_change_classifier = trace_outputs(out_dir, &rec.classifier, &mut files)?;
            if let Some(t) = &rec.discriminator {
                metrics.mean_change_discriminator = trace_outputs(out_dir, t, &mut files)?;
            }
        }
        Ok((metrics, files))
    };

    match attempt() {
        Ok((metrics, mut files)) => {
            files.push("manifest.json".to_string());
            manifest.finalize(files, metrics.clone(), started.elapsed().as_secs_f64());
            manifest.save(out_dir)?;
            Ok(metrics)
        }
        Err(e) => {
            manifest.fail(e.to_string());
            manifest.save(out_dir)?;
            Err(e)
        }
    }
}

/// One ablation-matrix cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Variant {
    pub discriminator: DiscriminatorMode,
    pub dynamic: bool,
    pub mo_pl: bool,
    pub mo_fa: bool,
}

impl Variant {
    pub fn slug(&self) -> String {
        let disc = match self.discriminator {
            DiscriminatorMode::None => "none",
            DiscriminatorMode::Binary => "binary",
            DiscriminatorMode::Class => "class",
        };
        let mut s = disc.to_string();
        if self.dynamic {
            s.push_str("_dyn");
        }
        if self.mo_pl {
            s.push_str("_mopl");
        }
        if self.mo_fa {
            s.push_str("_mofa");
        }
        if !self.dynamic && !self.mo_pl && !self.mo_fa {
            s.push_str("_base");
        }
        s
    }

    pub fn apply(&self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut cfg = base.clone();
        cfg.discriminator = self.discriminator;
        cfg.dynamic_weights = self.dynamic;
        cfg.smoothing = SmoothingConfig {
            mo_pl: self.mo_pl,
            mo_fa: self.mo_fa,
            m: base.smoothing.m,
        };
        cfg
    }
}

/// The 18 legal ablation rows: without a discriminator only the base and
/// pseudo-label-smoothing variants exist; binary and class modes sweep all
/// eight combinations of dynamic weighting and the two smoothing branches.
pub fn table_variants() -> Vec<Variant> {
    let mut out = vec![
        Variant { discriminator: DiscriminatorMode::None, dynamic: false, mo_pl: false, mo_fa: false },
        Variant { discriminator: DiscriminatorMode::None, dynamic: false, mo_pl: true, mo_fa: false },
    ];
    for disc in [DiscriminatorMode::Binary, DiscriminatorMode::Class] {
        for dynamic in [false, true] {
            for mo_pl in [false, true] {
                for mo_fa in [false, true] {
                    out.push(Variant { discriminator: disc, dynamic, mo_pl, mo_fa });
                }
            }
        }
    }
    out
}

/// Population mean and standard deviation.
pub fn mean_std(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn fmt_agg(vals: &[f64]) -> String {
    if vals.is_empty() {
        return String::new();
    }
    let (m, s) = mean_std(vals);
    format!("{m:.6}±{s:.6}")
}

struct MatrixRow {
    variant: Variant,
    backbone: String,
    seed: u64,
    metrics: Option<FinalMetrics>,
}

/// Runs `tasks` with up to `jobs` worker threads; each task runs
/// single-threaded internally.
fn run_pool<T: Send, R: Send>(
    tasks: Vec<T>,
    jobs: usize,
    f: impl Fn(T) -> R + Sync,
) -> Vec<R> {
    let n = tasks.len();
    let queue = Mutex::new(tasks.into_iter().enumerate().collect::<VecDeque<_>>());
    let results: Mutex<Vec<Option<R>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.max(1).min(n.max(1)) {
            scope.spawn(|| loop {
                let next = queue.lock().unwrap().pop_front();
                let Some((idx, task)) = next else { break };
                let r = f(task);
                results.lock().unwrap()[idx] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("worker filled every slot"))
        .collect()
}

fn backbone_name(cfg: &ExperimentConfig) -> String {
    match cfg.extractor.kind {
        mtseg_core::nets::ExtractorKind::LocalVit => "local_vit".to_string(),
        mtseg_core::nets::ExtractorKind::Cnn => "cnn".to_string(),
    }
}

fn matrix_summary(rows: &[MatrixRow], variants: &[Variant]) -> String {
    let mut out = String::from(
        "discriminator,dynamic,mo_pl,mo_fa,backbone,seed,target_miou,mean_change_classifier,mean_change_discriminator\n",
    );
    let cells = |v: &Variant| {
        let disc = match v.discriminator {
            DiscriminatorMode::None => "none",
            DiscriminatorMode::Binary => "binary",
            DiscriminatorMode::Class => "class",
        };
        format!("{},{},{},{}", disc, v.dynamic, v.mo_pl, v.mo_fa)
    };
    for r in rows {
        let m = r.metrics.as_ref();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            cells(&r.variant),
            r.backbone,
            r.seed,
            fmt_opt(m.map(|m| m.target_miou)),
            fmt_opt(m.and_then(|m| m.mean_change_classifier)),
            fmt_opt(m.and_then(|m| m.mean_change_discriminator)),
        ));
    }
    for v in variants {
        let done: Vec<&FinalMetrics> = rows
            .iter()
            .filter(|r| r.variant == *v)
            .filter_map(|r| r.metrics.as_ref())
            .collect();
        let backbone = rows
            .iter()
            .find(|r| r.variant == *v)
            .map(|r| r.backbone.clone())
            .unwrap_or_default();
        let col = |f: &dyn Fn(&FinalMetrics) -> Option<f64>| -> String {
            let vals: Vec<f64> = done.iter().filter_map(|m| f(m)).collect();
            fmt_agg(&vals)
        };
        out.push_str(&format!(
            "{},{},mean±std,{},{},{}\n",
            cells(v),
            backbone,
            col(&|m| Some(m.target_miou)),
            col(&|m| m.mean_change_classifier),
            col(&|m| m.mean_change_discriminator),
        ));
    }
    out
}

/// Runs every legal ablation variant for every seed under `out_root`,
/// resuming completed cells, and writes `summary.csv`. Returns the number of
/// failed runs (the matrix continues past failures).
pub fn ablation_matrix(
    base: &ExperimentConfig,
    seeds: &[u64],
    out_root: &Path,
    jobs: usize,
) -> Result<usize> {
    base.validate()?;
    let variants = table_variants();
    let mut tasks = Vec::new();
    for v in &variants {
        for &seed in seeds {
            let mut cfg = v.apply(base);
            cfg.seed = seed;
            let dir = out_root.join(v.slug()).join(format!("seed{seed}"));
            tasks.push((*v, seed, cfg, dir));
        }
    }
    let results = run_pool(tasks, jobs, |(v, seed, cfg, dir)| {
        let backbone = backbone_name(&cfg);
        let metrics = run_experiment(&cfg, &dir);
        (v, seed, backbone, metrics)
    });
    let mut rows = Vec::new();
    let mut failed = 0usize;
    for (v, seed, backbone, metrics) in results {
        let metrics = match metrics {
            Ok(m) => Some(m),
            Err(e) => {
                eprintln!("ablate: {} seed {} failed: {e}", v.slug(), seed);
                failed += 1;
                None
            }
        };
        rows.push(MatrixRow { variant: v, backbone, seed, metrics });
    }
    outputs::write_text(&out_root.join("summary.csv"), &matrix_summary(&rows, &variants))?;
    Ok(failed)
}

/// Momentum-coefficient sweep with both smoothing branches on; rows sorted
/// by m ascending.
pub fn momentum_grid(
    base: &ExperimentConfig,
    m_values: &[f64],
    seeds: &[u64],
    out_root: &Path,
    jobs: usize,
) -> Result<usize> {
    base.validate()?;
    let mut ms = m_values.to_vec();
    ms.sort_by(|a, b| a.partial_cmp(b).expect("finite m"));
    let mut tasks = Vec::new();
    for &m in &ms {
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.seed = seed;
            cfg.smoothing = SmoothingConfig { mo_pl: true, mo_fa: true, m };
            if cfg.discriminator == DiscriminatorMode::None {
                cfg.smoothing.mo_fa = false;
            }
            let dir = out_root.join(format!("m{m}")).join(format!("seed{seed}"));
            tasks.push((m, seed, cfg, dir));
        }
    }
    let results = run_pool(tasks, jobs, |(m, seed, cfg, dir)| {
        (m, seed, run_experiment(&cfg, &dir))
    });
    let mut failed = 0usize;
    let mut out = String::from("m,seed,target_miou,mean_change_classifier,mean_change_discriminator\n");
    let mut by_m: Vec<(f64, Vec<FinalMetrics>)> = ms.iter().map(|&m| (m, Vec::new())).collect();
    for (m, seed, metrics) in results {
        match metrics {
            Ok(mx) => {
                out.push_str(&format!(
                    "{m},{seed},{},{},{}\n",
                    fmt_opt(Some(mx.target_miou)),
                    fmt_opt(mx.mean_change_classifier),
                    fmt_opt(mx.mean_change_discriminator),
                ));
                by_m
                    .iter_mut()
                    .find(|(mm, _)| *mm == m)
                    .expect("m from task list")
                    .1
                    .push(mx);
            }
            Err(e) => {
                eprintln!("mgrid: m={m} seed {seed} failed: {e}");
                out.push_str(&format!("{m},{seed},,,\n"));
                failed += 1;
            }
        }
    }
    for (m, metrics) in &by_m {
        let miou: Vec<f64> = metrics.iter().map(|x| x.target_miou).collect();
        let chg: Vec<f64> = metrics.iter().filter_map(|x| x.mean_change_classifier).collect();
        let dchg: Vec<f64> = metrics.iter().filter_map(|x| x.mean_change_discriminator).collect();
        out.push_str(&format!(
            "{m},mean±std,{},{},{}\n",
            fmt_agg(&miou),
            fmt_agg(&chg),
            fmt_agg(&dchg)
        ));
    }
    outputs::write_text(&out_root.join("summary.csv"), &out)?;
    Ok(failed)
}

const TOY_SIGMAS: [f64; 3] = [0.5, 1.0, 10.0];
const TOY_LABELS: [&str; 3] = ["small", "medium", "large"];

/// The Gaussian-process toy report: per noise scale, prediction traces, the
/// change series, and per-category spectra (CSV + SVG), plus a summary with
/// per-seed ordering fractions. Returns whether both orderings held in at
/// least 95% of seeds.
pub fn toy_report(out_dir: &Path, seeds: &[u64]) -> Result<bool> {
    let report = toy_gaussian_experiment(&TOY_SIGMAS, 5, 20, seeds, None).map_err(CliError::Core)?;
    for (sr, label) in report.per_sigma.iter().zip(TOY_LABELS) {
        // prediction traces
        let mut csv = String::from("iter,category,p\n");
        let mut series_pts: Vec<Vec<(f64, f64)>> = vec![Vec::new(); report.k];
        for (t, probs) in sr.example_predictions.iter().enumerate() {
            for (k, &p) in probs.iter().enumerate() {
                csv.push_str(&format!("{t},{k},{p:.9e}\n"));
                series_pts[k].push((t as f64, p));
            }
        }
        outputs::write_text(&out_dir.join(format!("predictions_{label}.csv")), &csv)?;
        let labels: Vec<String> = (0..report.k).map(|k| format!("class {k}")).collect();
        let series: Vec<svg::Series<'_>> = labels
            .iter()
            .zip(&series_pts)
            .map(|(l, pts)| svg::Series { label: l, points: pts })
            .collect();
        outputs::write_text(
            &out_dir.join(format!("predictions_{label}.svg")),
            &svg::line_chart(&format!("predictions over time ({label})"), "iteration", "p", &series),
        )?;

        // change series
        let mut csv = String::from("iter,change\n");
        let pts: Vec<(f64, f64)> = sr
            .example_change
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                csv.push_str(&format!("{},{c:.9e}\n", i + 1));
                ((i + 1) as f64, c)
            })
            .collect();
        outputs::write_text(&out_dir.join(format!("change_{label}.csv")), &csv)?;
        outputs::write_text(
            &out_dir.join(format!("change_{label}.svg")),
            &svg::line_chart(
                &format!("change of predictions ({label})"),
                "iteration",
                "L1 change",
                &[svg::Series { label, points: &pts }],
            ),
        )?;

        // spectra (one file per sigma, categories stacked)
        let named: Vec<(String, &mtseg_core::diagnostics::Spectrum)> = sr
            .example_spectra
            .iter()
            .enumerate()
            .map(|(k, sp)| (format!("{k}"), sp))
            .collect();
        outputs::write_text(
            &out_dir.join(format!("spectrum_{label}.csv")),
            &outputs::spectrum_csv(&named),
        )?;
        let spec_pts: Vec<Vec<(f64, f64)>> = sr
            .example_spectra
            .iter()
            .map(|sp| sp.centered().iter().map(|&(f, a)| (f as f64, a)).collect())
            .collect();
        let series: Vec<svg::Series<'_>> = labels
            .iter()
            .zip(&spec_pts)
            .map(|(l, pts)| svg::Series { label: l, points: pts })
            .collect();
        outputs::write_text(
            &out_dir.join(format!("spectrum_{label}.svg")),
            &svg::line_chart(&format!("DFT amplitudes ({label})"), "frequency bin", "|X(f)|", &series),
        )?;
    }

    let change_frac = ordering_fraction(&report, |s| s.mean_change);
    let band_frac = ordering_fraction(&report, |s| s.mean_high_band);
    let mut csv = String::from("sigma,label,mean_change,mean_high_band\n");
    for (sr, label) in report.per_sigma.iter().zip(TOY_LABELS) {
        csv.push_str(&format!(
            "{},{label},{:.9e},{:.9e}\n",
            sr.sigma, sr.mean_change, sr.mean_high_band
        ));
    }
    csv.push_str(&format!("ordering_change_fraction,,{change_frac:.6},\n"));
    csv.push_str(&format!("ordering_high_band_fraction,,{band_frac:.6},\n"));
    outputs::write_text(&out_dir.join("summary.csv"), &csv)?;
    Ok(change_frac >= 0.95 && band_frac >= 0.95)
}

/// Evaluates a checkpoint on freshly generated eval splits.
pub fn eval_checkpoint(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    out_dir: Option<&Path>,
) -> Result<(f64, f64)> {
    let state = formats::load_checkpoint(checkpoint, cfg)?;
    let data = load_data(cfg)?;
    let target_cm = trainer::evaluate(cfg, &state.f_live, &state.c_live, &data.target_eval)?;
    let source_cm = trainer::evaluate(cfg, &state.f_live, &state.c_live, &data.source_eval)?;
    if let Some(dir) = out_dir {
        outputs::write_text(&dir.join("metrics.csv"), &outputs::metrics_csv(&target_cm))?;
        outputs::write_text(&dir.join("metrics_source.csv"), &outputs::metrics_csv(&source_cm))?;
    }
    Ok((
        target_cm.miou(None).map_err(CliError::Core)?,
        source_cm.miou(None).map_err(CliError::Core)?,
    ))
}

/// Writes all four generated splits as dataset files.
pub fn export_data(cfg: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir.display().to_string(), e))?;
    let data = prepare_data(cfg)?;
    let k = cfg.data.domain.total_classes();
    formats::save_dataset(&data.source, k, &out_dir.join("source_train.tdad"))?;
    formats::save_dataset(&data.target, k, &out_dir.join("target_train.tdad"))?;
    formats::save_dataset(&data.source_eval, k, &out_dir.join("source_eval.tdad"))?;
    formats::save_dataset(&data.target_eval, k, &out_dir.join("target_eval.tdad"))?;
    Ok(())
}

/// Resolves the output directory for a single run: explicit flag, then the
/// config's `out_dir`, then `$MTSEG_OUT_ROOT/run-<hash8>-seed<seed>`, then
/// `./runs/run-<hash8>-seed<seed>`.
pub fn resolve_out_dir(cfg: &ExperimentConfig, flag: Option<PathBuf>) -> PathBuf {
    if let Some(p) = flag {
        return p;
    }
    if let Some(p) = &cfg.out_dir {
        return PathBuf::from(p);
    }
    let root = std::env::var("MTSEG_OUT_ROOT").unwrap_or_else(|_| "runs".to_string());
    let hash = config_hash(cfg);
    PathBuf::from(root).join(format!("run-{}-seed{}", &hash[..8], cfg.seed))
}

/// Parses a comma-separated list of u64 seeds.
pub fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    spec.split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| CliError::Config(format!("bad seed `{s}`")))
        })
        .collect()
}

/// Parses a comma-separated list of momentum coefficients.
pub fn parse_m_values(spec: &str) -> Result<Vec<f64>> {
    spec.split(',')
        .map(|s| {
            let v = s
                .trim()
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("bad m value `{s}`")))?;
            if !(0.0..1.0).contains(&v) {
                return Err(CliError::Config(format!("m value {v} outside [0, 1)")));
            }
            Ok(v)
        })
        .collect()
}

pub use config::load_config;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eighteen_table_variants() {
        let vs = table_variants();
        assert_eq!(vs.len(), 18);
        // all slugs unique
        let mut slugs: Vec<String> = vs.iter().map(|v| v.slug()).collect();
        slugs.sort();
        slugs.dedup();
        assert_eq!(slugs.len(), 18);
        // every variant is a legal config
        let base = ExperimentConfig::default();
        for v in &vs {
            v.apply(&base).validate().unwrap();
        }
    }

    #[test]
    fn illegal_combo_is_not_enumerated() {
        for v in table_variants() {
            if v.discriminator == DiscriminatorMode::None {
                assert!(!v.dynamic && !v.mo_fa);
            }
        }
    }

    #[test]
    fn mean_std_matches_hand_computation() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert!((m - 2.5).abs() < 1e-12);
        assert!((s - (1.25f64).sqrt()).abs() < 1e-12);
    }
}
