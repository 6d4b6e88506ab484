//! Learning-dynamics instrumentation: per-iteration prediction snapshots on a
//! fixed probe set, L1 change-of-prediction series, DFT spectra, and the
//! Gaussian-process toy experiment.

use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::scalar::Real;
use crate::autodiff::tensor::Tensor;
use crate::error::{CoreError, Result};
use crate::rng;

/// Prediction snapshots over training, with the L1-change series maintained
/// incrementally so a bounded ring buffer can drop old snapshots without
/// losing the series.
#[derive(Debug, Clone)]
pub struct DynamicsTrace<F: Real> {
    pub tag: String,
    snapshots: VecDeque<Tensor<F>>,
    iterations: Vec<u64>,
    changes: Vec<F>,
    shape: Option<Vec<usize>>,
    capacity: Option<usize>,
}

impl<F: Real> DynamicsTrace<F> {
    pub fn new(tag: &str) -> Self {
        Self {
            tag: String::from(tag),
            snapshots: VecDeque::new(),
            iterations: Vec::new(),
            changes: Vec::new(),
            shape: None,
            capacity: None,
        }
    }

    /// Bounds retained snapshots to the last `capacity` (>= 1); the change
    /// series keeps growing regardless.
    pub fn with_capacity(mut self, capacity: usize) -> Self {
        self.capacity = Some(capacity.max(1));
        self
    }

    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }

    pub fn retained_snapshots(&self) -> usize {
        self.snapshots.len()
    }

    pub fn iterations(&self) -> &[u64] {
        &self.iterations
    }

    pub fn snapshots(&self) -> impl Iterator<Item = &Tensor<F>> {
        self.snapshots.iter()
    }

    /// Appends a snapshot. The first call fixes the shape; later shapes must
    /// match and iteration indices must strictly increase.
    pub fn track(&mut self, iteration: u64, predictions: Tensor<F>) -> Result<()> {
        match &self.shape {
            None => self.shape = Some(predictions.shape().to_vec()),
            Some(s) => {
                if s != predictions.shape() {
                    return Err(CoreError::ShapeMismatch {
                        op: "track",
                        lhs: s.clone(),
                        rhs: predictions.shape().to_vec(),
                    });
                }
            }
        }
        if let Some(&last) = self.iterations.last() {
            if iteration <= last {
                return Err(CoreError::invalid(
                    "track",
                    alloc::format!("iteration {iteration} not after {last}"),
                ));
            }
        }
        if let Some(prev) = self.snapshots.back() {
            self.changes.push(l1_change(prev, &predictions));
        }
        self.iterations.push(iteration);
        self.snapshots.push_back(predictions);
        if let Some(cap) = self.capacity {
            while self.snapshots.len() > cap {
                self.snapshots.pop_front();
            }
        }
        Ok(())
    }

    /// The change series accumulated so far (one entry per consecutive
    /// snapshot pair). Errors with fewer than two tracked snapshots.
    pub fn change_series(&self) -> Result<&[F]> {
        if self.len() < 2 {
            return Err(CoreError::invalid(
                "change_series",
                "needs at least 2 snapshots",
            ));
        }
        Ok(&self.changes)
    }
}

/// L1 distance between consecutive prediction snapshots: summed over spatial
/// positions and channels, averaged over the probe (leading) axis.
pub fn l1_change<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> F {
    debug_assert_eq!(a.shape(), b.shape());
    let n_probe = a.shape().first().copied().unwrap_or(1).max(1);
    let sum = a
        .values()
        .iter()
        .zip(b.values())
        .fold(F::zero(), |acc, (&x, &y)| acc + (x - y).abs());
    sum / F::from_usize_(n_probe)
}

/// Amplitude spectrum of a real series. Canonical bins are `0..T-1`;
/// [`Spectrum::centered`] views them on `-floor(T/2)..=floor(T/2)` (for even
/// T both ends alias the same Nyquist bin, so amplitude symmetry holds on the
/// full displayed range).
#[derive(Debug, Clone)]
pub struct Spectrum {
    len: usize,
    amplitudes: Vec<f64>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Amplitude at canonical bin `f mod T`.
    pub fn amplitude(&self, f: i64) -> f64 {
        let t = self.len as i64;
        self.amplitudes[f.rem_euclid(t) as usize]
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    /// `(frequency, amplitude)` pairs on centered bins.
    pub fn centered(&self) -> Vec<(i64, f64)> {
        let half = (self.len / 2) as i64;
        (-half..=half).map(|f| (f, self.amplitude(f))).collect()
    }

    /// Mean amplitude over the high-frequency band `|f| >= min_bin`,
    /// counting each canonical bin once.
    pub fn high_band_mean(&self, min_bin: usize) -> f64 {
        let t = self.len as i64;
        let lo = -(t / 2) + i64::from(t % 2 == 0);
        let mut acc = 0.0;
        let mut n = 0usize;
        for f in lo..=(t / 2) {
            if f.unsigned_abs() as usize >= min_bin {
                acc += self.amplitude(f);
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            acc / n as f64
        }
    }
}

/// Unnormalized DFT: `X(f) = sum_t x_t exp(-2 pi i f t / T)`, amplitudes
/// `|X(f)|` in double precision.
pub fn dft(series: &[f64]) -> Result<Spectrum> {
    let t = series.len();
    if t < 2 {
        return Err(CoreError::invalid("dft", "series must have length >= 2"));
    }
    let mut amplitudes = Vec::with_capacity(t);
    let step = -2.0 * core::f64::consts::PI / t as f64;
    for f in 0..t {
        let mut re = 0.0;
        let mut im = 0.0;
        for (ti, &x) in series.iter().enumerate() {
            let ang = step * (f * ti % t) as f64;
            re += x * libm::cos(ang);
            im += x * libm::sin(ang);
        }
        amplitudes.push(libm::sqrt(re * re + im * im));
    }
    Ok(Spectrum { len: t, amplitudes })
}

/// Per-seed outcome of one Gaussian process in the toy experiment.
#[derive(Debug, Clone, Copy)]
pub struct ToySample {
    pub mean_change: f64,
    pub mean_high_band: f64,
}

/// Full data for one sigma: per-seed summary metrics, plus the first seed's
/// raw prediction series, change series and per-category spectra for
/// plotting.
#[derive(Debug, Clone)]
pub struct SigmaReport {
    pub sigma: f64,
    pub per_seed: Vec<ToySample>,
    pub mean_change: f64,
    pub mean_high_band: f64,
    /// `predictions[t][k]` for the first seed.
    pub example_predictions: Vec<Vec<f64>>,
    pub example_change: Vec<f64>,
    pub example_spectra: Vec<Spectrum>,
}

#[derive(Debug, Clone)]
pub struct ToyReport {
    pub k: usize,
    pub t: usize,
    pub high_band_min: usize,
    pub per_sigma: Vec<SigmaReport>,
}

/// Synthesizes prediction sequences from zero-mean i.i.d. Gaussian logits at
/// each of the given noise scales, softmaxed over the category axis, and
/// measures the change series plus per-category DFT spectra. The
/// high-frequency band is `|f| >= t/4` bins unless overridden.
pub fn toy_gaussian_experiment(
    sigmas: &[f64],
    k: usize,
    t: usize,
    seeds: &[u64],
    high_band_min: Option<usize>,
) -> Result<ToyReport> {
    if seeds.is_empty() {
        return Err(CoreError::invalid("toy", "seeds must be nonempty"));
    }
    if k < 2 || t < 2 {
        return Err(CoreError::invalid("toy", "need k >= 2 and t >= 2"));
    }
    let high_band_min = high_band_min.unwrap_or(t / 4);
    let mut per_sigma = Vec::with_capacity(sigmas.len());
    for (si, &sigma) in sigmas.iter().enumerate() {
        let mut per_seed = Vec::with_capacity(seeds.len());
        let mut example: Option<(Vec<Vec<f64>>, Vec<f64>, Vec<Spectrum>)> = None;
        for (pos, &seed) in seeds.iter().enumerate() {
            let mut r = rng::stream(seed, &[rng::purpose::TOY, si as u64]);
            // t iterations of softmaxed N(0, sigma^2) logits over k classes.
            let mut preds: Vec<Vec<f64>> = Vec::with_capacity(t);
            for _ in 0..t {
                let logits: Vec<f64> = if sigma == 0.0 {
                    vec![0.0; k]
                } else {
                    let normal = Normal::new(0.0, sigma)
                        .map_err(|_| CoreError::invalid("toy", "bad sigma"))?;
                    (0..k).map(|_| normal.sample(&mut r)).collect()
                };
                let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = logits.iter().map(|&x| libm::exp(x - mx)).collect();
                let denom: f64 = exps.iter().sum();
                preds.push(exps.iter().map(|&e| e / denom).collect());
            }
            let changes: Vec<f64> = (0..t - 1)
                .map(|i| {
                    (0..k)
                        .map(|c| (preds[i + 1][c] - preds[i][c]).abs())
                        .sum::<f64>()
                })
                .collect();
            let mean_change = changes.iter().sum::<f64>() / changes.len() as f64;
            let spectra: Vec<Spectrum> = (0..k)
                .map(|c| dft(&preds.iter().map(|p| p[c]).collect::<Vec<_>>()))
                .collect::<Result<_>>()?;
            let mean_high_band = spectra
                .iter()
                .map(|s| s.high_band_mean(high_band_min))
                .sum::<f64>()
                / k as f64;
            per_seed.push(ToySample {
                mean_change,
                mean_high_band,
            });
            if pos == 0 {
                example = Some((preds, changes, spectra));
            }
        }
        let mean_change = per_seed.iter().map(|s| s.mean_change).sum::<f64>() / per_seed.len() as f64;
        let mean_high_band =
            per_seed.iter().map(|s| s.mean_high_band).sum::<f64>() / per_seed.len() as f64;
        let (example_predictions, example_change, example_spectra) = example.unwrap();
        per_sigma.push(SigmaReport {
            sigma,
            per_seed,
            mean_change,
            mean_high_band,
            example_predictions,
            example_change,
            example_spectra,
        });
    }
    Ok(ToyReport {
        k,
        t,
        high_band_min,
        per_sigma,
    })
}

/// Fraction of seeds for which `metric` is strictly increasing across the
/// report's sigmas (assumed sorted ascending).
pub fn ordering_fraction(report: &ToyReport, metric: impl Fn(&ToySample) -> f64) -> f64 {
    let seeds = report.per_sigma[0].per_seed.len();
    let mut ok = 0usize;
    for s in 0..seeds {
        let vals: Vec<f64> = report
            .per_sigma
            .iter()
            .map(|sr| metric(&sr.per_seed[s]))
            .collect();
        if vals.windows(2).all(|w| w[0] < w[1]) {
            ok += 1;
        }
    }
    ok as f64 / seeds as f64
}

/// Draws values uniformly in `[0,1)` into a tensor; test helper shared by the
/// crate's suites.
pub fn random_tensor<F: Real>(shape: &[usize], seed: u64, tags: &[u64]) -> Tensor<F> {
    let mut r = rng::stream(seed, tags);
    let n: usize = shape.iter().product();
    let vals: Vec<F> = (0..n).map(|_| F::c(r.random::<f64>())).collect();
    Tensor::new(shape, vals).expect("consistent shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_track_sets_shape_and_drift_errors() {
        let mut tr = DynamicsTrace::<f32>::new("classifier_target");
        tr.track(0, Tensor::zeros(&[1, 2, 2, 2])).unwrap();
        assert!(tr.track(1, Tensor::zeros(&[1, 2, 2, 3])).is_err());
    }

    #[test]
    fn out_of_order_iteration_errors() {
        let mut tr = DynamicsTrace::<f32>::new("t");
        tr.track(5, Tensor::zeros(&[1, 1, 1, 1])).unwrap();
        assert!(tr.track(5, Tensor::zeros(&[1, 1, 1, 1])).is_err());
        assert!(tr.track(3, Tensor::zeros(&[1, 1, 1, 1])).is_err());
    }

    #[test]
    fn ring_buffer_keeps_last_r_but_full_series() {
        let mut tr = DynamicsTrace::<f64>::new("t").with_capacity(3);
        for i in 0..10u64 {
            let v = Tensor::full(&[1, 1, 1, 1], i as f64);
            tr.track(i, v).unwrap();
        }
        assert_eq!(tr.retained_snapshots(), 3);
        assert_eq!(tr.change_series().unwrap().len(), 9);
        assert!(tr.change_series().unwrap().iter().all(|&c| c == 1.0));
    }

    #[test]
    fn constant_snapshots_give_zero_change() {
        let mut tr = DynamicsTrace::<f64>::new("t");
        for i in 0..4u64 {
            tr.track(i, Tensor::full(&[2, 3, 2, 2], 0.4)).unwrap();
        }
        assert!(tr.change_series().unwrap().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn single_position_change_is_its_magnitude() {
        let mut tr = DynamicsTrace::<f64>::new("t");
        tr.track(0, Tensor::zeros(&[1, 1, 2, 2])).unwrap();
        let mut nxt = Tensor::zeros(&[1, 1, 2, 2]);
        nxt.values_mut()[3] = 0.5;
        tr.track(1, nxt).unwrap();
        assert_eq!(tr.change_series().unwrap(), &[0.5]);
    }

    #[test]
    fn change_series_matches_nested_loop_oracle() {
        let mut tr = DynamicsTrace::<f64>::new("t");
        let shapes = [4usize, 3, 2, 2];
        let mut raw: Vec<Tensor<f64>> = Vec::new();
        for i in 0..5u64 {
            let t = random_tensor(&shapes, i, &[7]);
            tr.track(i, t.clone()).unwrap();
            raw.push(t);
        }
        let got = tr.change_series().unwrap();
        for i in 0..4 {
            let mut acc = 0.0;
            for n in 0..4 {
                for c in 0..3 {
                    for y in 0..2 {
                        for x in 0..2 {
                            let idx = ((n * 3 + c) * 2 + y) * 2 + x;
                            acc += (raw[i + 1].values()[idx] - raw[i].values()[idx]).abs();
                        }
                    }
                }
            }
            acc /= 4.0;
            assert!((got[i] - acc).abs() < 1e-6);
        }
    }

    #[test]
    fn dft_of_constant_is_dc_only() {
        let t = 16;
        let s = dft(&vec![0.7; t]).unwrap();
        assert!((s.amplitude(0) - 0.7 * t as f64).abs() < 1e-9);
        for f in 1..t as i64 {
            assert!(s.amplitude(f).abs() < 1e-9, "bin {f}");
        }
    }

    #[test]
    fn dft_of_alternating_is_nyquist_only() {
        let t = 16usize;
        let series: Vec<f64> = (0..t).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let s = dft(&series).unwrap();
        assert!((s.amplitude((t / 2) as i64) - t as f64).abs() < 1e-9);
        for f in 0..t as i64 {
            if f != (t / 2) as i64 {
                assert!(s.amplitude(f).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn spectrum_symmetry_for_real_series() {
        let series: Vec<f64> = (0..21).map(|i| libm::sin(i as f64 * 0.71) + 0.3).collect();
        let s = dft(&series).unwrap();
        for f in 1..=10i64 {
            assert!((s.amplitude(f) - s.amplitude(-f)).abs() < 1e-9);
        }
    }

    #[test]
    fn toy_zero_sigma_is_degenerate() {
        let r = toy_gaussian_experiment(&[0.0], 5, 20, &[1, 2], None).unwrap();
        let sr = &r.per_sigma[0];
        assert_eq!(sr.mean_change, 0.0);
        for sp in &sr.example_spectra {
            for f in 1..20i64 {
                assert!(sp.amplitude(f).abs() < 1e-9);
            }
        }
    }
}
