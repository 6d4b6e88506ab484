//! EMA teacher machinery: `target <- m * target + (1 - m) * source`, with
//! independent routing of which branch supplies target pseudo labels (MoPL)
//! and target features for the discriminator and similarity network (MoFA).

use serde::{Deserialize, Serialize};

use crate::autodiff::params::ParameterStore;
use crate::autodiff::scalar::Real;
use crate::error::{CoreError, Result};

/// An EMA copy of a live parameter store. The live store stays with its
/// owner; `ema_update` takes it by reference, so the pair can never desync
/// its layout silently (every update re-validates names and shapes).
#[derive(Debug, Clone)]
pub struct MomentumPair<F: Real> {
    target: ParameterStore<F>,
    m: F,
}

/// Which supervision branches the momentum teacher feeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingConfig {
    /// Momentum teacher supplies target pseudo labels.
    pub mo_pl: bool,
    /// Momentum teacher supplies target features for D and S.
    pub mo_fa: bool,
    /// EMA coefficient in `[0, 1)`.
    pub m: f64,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            mo_pl: false,
            mo_fa: false,
            m: 0.999,
        }
    }
}

impl SmoothingConfig {
    pub fn active(&self) -> bool {
        self.mo_pl || self.mo_fa
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.m) {
            return Err(CoreError::Config(alloc::format!(
                "momentum coefficient m={} outside [0, 1)",
                self.m
            )));
        }
        Ok(())
    }
}

/// Deep-copies `source` into a fresh EMA target with gradients cleared.
pub fn init_momentum<F: Real>(source: &ParameterStore<F>, m: F) -> MomentumPair<F> {
    MomentumPair {
        target: source.detached_copy(),
        m,
    }
}

impl<F: Real> MomentumPair<F> {
    pub fn target(&self) -> &ParameterStore<F> {
        &self.target
    }

    pub fn m(&self) -> F {
        self.m
    }

    /// Replaces the target with a fresh copy of `source` (round boundaries).
    pub fn reinit_from(&mut self, source: &ParameterStore<F>) {
        self.target = source.detached_copy();
    }

    /// Restores a previously saved target (checkpoint loading).
    pub fn restore_target(&mut self, target: ParameterStore<F>) {
        self.target = target;
    }
}

/// One EMA step: every target tensor becomes `m * target + (1 - m) * source`.
/// Called exactly once per optimizer step on the source, after the step.
pub fn ema_update<F: Real>(pair: &mut MomentumPair<F>, source: &ParameterStore<F>) -> Result<()> {
    let m = pair.m;
    if pair.target.len() != source.len() {
        return Err(CoreError::invalid("ema_update", "store layout mismatch"));
    }
    for ((tn, tt), (sn, st)) in pair.target.iter_mut().zip(source.iter()) {
        if tn != sn || tt.shape() != st.shape() {
            return Err(CoreError::ShapeMismatch {
                op: "ema_update",
                lhs: tt.shape().to_vec(),
                rhs: st.shape().to_vec(),
            });
        }
        let sv = st.values();
        for (t, &s) in tt.values_mut().iter_mut().zip(sv) {
            *t = m * *t + (F::one() - m) * s;
        }
    }
    Ok(())
}

/// The branch routing resolved from a smoothing config: which parameter
/// stores generate pseudo labels (classifier over extractor) and which
/// extractor feeds the discriminator/similarity target inputs. Both branches
/// are used detached; the live stores only receive gradients through the
/// main-update graph, never through teacher outputs.
pub struct Branches<'a, F: Real> {
    pub pl_extractor: &'a ParameterStore<F>,
    pub pl_classifier: &'a ParameterStore<F>,
    pub fa_extractor: &'a ParameterStore<F>,
    pub pl_is_ema: bool,
    pub fa_is_ema: bool,
}

/// Selects teacher branches. EMA stores where the corresponding flag is set,
/// live stores otherwise. Errors if a flag is set but the pair is absent.
pub fn teacher_branches<'a, F: Real>(
    cfg: &SmoothingConfig,
    live_extractor: &'a ParameterStore<F>,
    live_classifier: &'a ParameterStore<F>,
    pair_extractor: Option<&'a MomentumPair<F>>,
    pair_classifier: Option<&'a MomentumPair<F>>,
) -> Result<Branches<'a, F>> {
    if cfg.mo_fa && pair_extractor.is_none() {
        return Err(CoreError::invalid(
            "teacher_branches",
            "mo_fa set but momentum extractor absent",
        ));
    }
    if cfg.mo_pl && (pair_extractor.is_none() || pair_classifier.is_none()) {
        return Err(CoreError::invalid(
            "teacher_branches",
            "mo_pl set but momentum pair absent",
        ));
    }
    Ok(Branches {
        pl_extractor: if cfg.mo_pl {
            pair_extractor.unwrap().target()
        } else {
            live_extractor
        },
        pl_classifier: if cfg.mo_pl {
            pair_classifier.unwrap().target()
        } else {
            live_classifier
        },
        fa_extractor: if cfg.mo_fa {
            pair_extractor.unwrap().target()
        } else {
            live_extractor
        },
        pl_is_ema: cfg.mo_pl,
        fa_is_ema: cfg.mo_fa,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::params::NetworkKind;
    use crate::autodiff::tensor::Tensor;

    fn store(vals: &[f64]) -> ParameterStore<f64> {
        let mut s = ParameterStore::new(NetworkKind::Extractor);
        s.insert(
            "w",
            Tensor::new(&[vals.len()], vals.to_vec()).unwrap().with_grad(),
        )
        .unwrap();
        s
    }

    #[test]
    fn init_copies_bit_exactly_and_clears_grad() {
        let src = store(&[0.25, -1.5, 3.0]);
        let pair = init_momentum(&src, 0.9);
        let t = pair.target().get("w").unwrap();
        assert_eq!(t.values(), src.get("w").unwrap().values());
        assert!(!t.requires_grad());
        let pair2 = init_momentum(&src, 0.9);
        assert_eq!(
            pair.target().get("w").unwrap().values(),
            pair2.target().get("w").unwrap().values()
        );
    }

    #[test]
    fn fixed_point_when_target_equals_source() {
        let src = store(&[1.0, 2.0]);
        let mut pair = init_momentum(&src, 0.73);
        ema_update(&mut pair, &src).unwrap();
        assert_eq!(pair.target().get("w").unwrap().values(), &[1.0, 2.0]);
    }

    #[test]
    fn m_zero_copies_source() {
        let src = store(&[5.0, -5.0]);
        let mut pair = init_momentum(&store(&[0.0, 0.0]), 0.0);
        ema_update(&mut pair, &src).unwrap();
        assert_eq!(pair.target().get("w").unwrap().values(), &[5.0, -5.0]);
    }

    #[test]
    fn m_near_one_barely_moves() {
        let src = store(&[1.0]);
        let mut pair = init_momentum(&store(&[0.0]), 1.0 - 1e-12);
        ema_update(&mut pair, &src).unwrap();
        let v = pair.target().get("w").unwrap().values()[0];
        assert!(v.abs() < 1e-11, "moved to {v}");
    }

    #[test]
    fn constant_source_matches_geometric_closed_form() {
        // target starts at 0, source fixed at c: after k steps the target is
        // (1 - m^k) * c.
        let c = 0.8;
        for &m in &[0.0, 0.9, 0.99, 0.999, 0.9999] {
            let src = store(&[c]);
            let mut pair = init_momentum(&store(&[0.0]), m);
            for _ in 0..100 {
                ema_update(&mut pair, &src).unwrap();
            }
            let expect = (1.0 - libm::pow(m, 100.0)) * c;
            let got = pair.target().get("w").unwrap().values()[0];
            assert!((got - expect).abs() < 1e-10, "m={m}: {got} vs {expect}");
        }
    }

    #[test]
    fn contraction_under_frozen_source() {
        let src = store(&[1.0, -2.0]);
        let mut pair = init_momentum(&store(&[4.0, 4.0]), 0.9);
        let mut last = f64::INFINITY;
        for _ in 0..20 {
            ema_update(&mut pair, &src).unwrap();
            let dist = pair
                .target()
                .get("w")
                .unwrap()
                .values()
                .iter()
                .zip(src.get("w").unwrap().values())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(dist <= last + 1e-15);
            last = dist;
        }
    }

    #[test]
    fn branch_routing_follows_flags() {
        let live_f = store(&[1.0]);
        let live_c = store(&[2.0]);
        let pf = init_momentum(&store(&[3.0]), 0.9);
        let pc = init_momentum(&store(&[4.0]), 0.9);

        let off = SmoothingConfig { mo_pl: false, mo_fa: false, m: 0.9 };
        let b = teacher_branches(&off, &live_f, &live_c, None, None).unwrap();
        assert!(core::ptr::eq(b.pl_extractor, &live_f));
        assert!(core::ptr::eq(b.fa_extractor, &live_f));

        let pl_only = SmoothingConfig { mo_pl: true, mo_fa: false, m: 0.9 };
        let b = teacher_branches(&pl_only, &live_f, &live_c, Some(&pf), Some(&pc)).unwrap();
        assert!(core::ptr::eq(b.pl_extractor, pf.target()));
        assert!(core::ptr::eq(b.pl_classifier, pc.target()));
        assert!(core::ptr::eq(b.fa_extractor, &live_f));

        let fa_only = SmoothingConfig { mo_pl: false, mo_fa: true, m: 0.9 };
        assert!(teacher_branches(&fa_only, &live_f, &live_c, None, None).is_err());
        let b = teacher_branches(&fa_only, &live_f, &live_c, Some(&pf), None).unwrap();
        assert!(core::ptr::eq(b.fa_extractor, pf.target()));
        assert!(core::ptr::eq(b.pl_extractor, &live_f));
    }

    #[test]
    fn mismatched_layout_is_an_error() {
        let src = store(&[1.0, 2.0]);
        let mut pair = init_momentum(&store(&[1.0]), 0.5);
        assert!(ema_update(&mut pair, &src).is_err());
    }
}
