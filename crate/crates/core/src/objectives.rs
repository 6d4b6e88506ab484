//! Loss functions and the dynamic-weighting machinery: source/target
//! cross-entropy, one-hot pseudo labels, normalized entropy, the similarity
//! loss, binary and class-level adversarial losses (weighted and unweighted),
//! and the generator's fooling loss.
//!
//! Probabilities are clamped at 1e-12 before every log. Pixel means divide by
//! batch * spatial extent; class-level losses sum over channels first, so the
//! K=1 class loss reduces exactly to the binary one.

use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::ops;
use crate::autodiff::scalar::Real;
use crate::autodiff::tape::{Tape, Var};
use crate::autodiff::tensor::Tensor;
use crate::error::{CoreError, Result};

pub const PROB_CLAMP: f64 = 1e-12;

fn clamped_log<'t, F: Real>(x: Var<'t, F>) -> Result<Var<'t, F>> {
    ops::log(ops::clamp_min(x, F::c(PROB_CLAMP))?)
}

fn one_minus<'t, F: Real>(x: Var<'t, F>) -> Result<Var<'t, F>> {
    ops::affine(x, -F::one(), F::one())
}

fn neg<'t, F: Real>(x: Var<'t, F>) -> Result<Var<'t, F>> {
    ops::scalar_mul(x, -F::one())
}

/// Cross-entropy against integer labels, averaged over non-ignored pixels.
/// `labels` is `(B, H, W)` row-major with values in `[0, K)` or
/// `ignore_index`.
pub fn ce_source<'t, F: Real>(
    p: Var<'t, F>,
    labels: &[u8],
    ignore_index: u8,
) -> Result<Var<'t, F>> {
    let ps = p.shape();
    if ps.len() != 4 {
        return Err(CoreError::invalid("ce_source", "expected (B,K,H,W)"));
    }
    let (b, k, h, w) = (ps[0], ps[1], ps[2], ps[3]);
    if labels.len() != b * h * w {
        return Err(CoreError::ShapeMismatch {
            op: "ce_source",
            lhs: ps,
            rhs: vec![labels.len()],
        });
    }
    let mut valid = 0usize;
    for &l in labels {
        if l != ignore_index {
            if l as usize >= k {
                return Err(CoreError::invalid(
                    "ce_source",
                    alloc::format!("label {l} outside [0, {k})"),
                ));
            }
            valid += 1;
        }
    }
    if valid == 0 {
        return Err(CoreError::invalid("ce_source", "all pixels ignored"));
    }
    // Weight mask selecting log p at the true class, normalized so the sum is
    // the mean over non-ignored pixels.
    let inv = F::one() / F::from_usize_(valid);
    let mut mask = vec![F::zero(); b * k * h * w];
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                let l = labels[(bi * h + y) * w + x];
                if l != ignore_index {
                    mask[((bi * k + l as usize) * h + y) * w + x] = inv;
                }
            }
        }
    }
    let mask = p.tape().constant(&ps, mask)?;
    neg(ops::sum_all(ops::mul(mask, clamped_log(p)?)?)?)
}

/// One-hot pseudo labels from a probability map, argmax per pixel with ties
/// broken toward the lowest class index. The result is plain data, detached
/// from any graph.
pub struct PseudoLabels<F: Real> {
    pub onehot: Tensor<F>,
    /// Per-pixel argmax classes, `(B, H, W)` row-major.
    pub classes: Vec<u8>,
}

pub fn pseudo_label<F: Real>(p: &Tensor<F>) -> Result<PseudoLabels<F>> {
    let ps = p.shape();
    if ps.len() != 4 {
        return Err(CoreError::invalid("pseudo_label", "expected (B,K,H,W)"));
    }
    let (b, k, h, w) = (ps[0], ps[1], ps[2], ps[3]);
    let pv = p.values();
    let mut onehot = vec![F::zero(); pv.len()];
    let mut classes = Vec::with_capacity(b * h * w);
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                let mut best = 0usize;
                let mut best_v = pv[((bi * k) * h + y) * w + x];
                for c in 1..k {
                    let v = pv[((bi * k + c) * h + y) * w + x];
                    if v > best_v {
                        best_v = v;
                        best = c;
                    }
                }
                onehot[((bi * k + best) * h + y) * w + x] = F::one();
                classes.push(best as u8);
            }
        }
    }
    Ok(PseudoLabels {
        onehot: Tensor::new(&ps, onehot)?,
        classes,
    })
}

/// Target-domain cross-entropy against one-hot pseudo labels, averaged over
/// all pixels.
pub fn ce_target<'t, F: Real>(p: Var<'t, F>, pseudo: &Tensor<F>) -> Result<Var<'t, F>> {
    let ps = p.shape();
    if ps != pseudo.shape() {
        return Err(CoreError::ShapeMismatch {
            op: "ce_target",
            lhs: ps,
            rhs: pseudo.shape().to_vec(),
        });
    }
    let (b, k, h, w) = (ps[0], ps[1], ps[2], ps[3]);
    // Validate one-hot: exactly one 1 per pixel, zeros elsewhere.
    let pv = pseudo.values();
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                let mut ones = 0usize;
                for c in 0..k {
                    let v = pv[((bi * k + c) * h + y) * w + x];
                    if v == F::one() {
                        ones += 1;
                    } else if v != F::zero() {
                        return Err(CoreError::invalid("ce_target", "labels not one-hot"));
                    }
                }
                if ones != 1 {
                    return Err(CoreError::invalid("ce_target", "labels not one-hot"));
                }
            }
        }
    }
    // Fold the pixel mean into the mask so this bit-matches `ce_source`
    // evaluated at the argmax labels.
    let inv = F::one() / F::from_usize_(b * h * w);
    let mask: Vec<F> = pv.iter().map(|&v| v * inv).collect();
    let mask = p.tape().constant(&ps, mask)?;
    neg(ops::sum_all(ops::mul(mask, clamped_log(p)?)?)?)
}

/// Per-pixel entropy normalized by its maximum `ln K`, in `[0, 1]`:
/// `(B,K,H,W)` probabilities to a `(B,1,H,W)` map.
pub fn entropy_norm<'t, F: Real>(p: Var<'t, F>) -> Result<Var<'t, F>> {
    let ps = p.shape();
    if ps.len() != 4 {
        return Err(CoreError::invalid("entropy_norm", "expected (B,K,H,W)"));
    }
    let k = ps[1];
    if k < 2 {
        return Err(CoreError::invalid("entropy_norm", "needs at least 2 classes"));
    }
    let plogp = ops::mul(p, clamped_log(p)?)?;
    let e = ops::sum_axis(plogp, 1)?;
    let scale = -F::one() / F::c(libm::log(k as f64));
    ops::scalar_mul(e, scale)
}

/// Domain-similarity loss: source scored toward 1, target toward 0.
pub fn sim_loss<'t, F: Real>(s_src: Var<'t, F>, s_tgt: Var<'t, F>) -> Result<Var<'t, F>> {
    let a = neg(ops::mean_all(clamped_log(s_src)?)?)?;
    let b = neg(ops::mean_all(clamped_log(one_minus(s_tgt)?)?)?)?;
    ops::add(a, b)
}

/// In-place min-max normalization to `[0, 1]`. A degenerate span
/// (max == min) maps everything to 1.
pub fn min_max_normalize<F: Real>(vals: &mut [F]) {
    let mut lo = F::infinity();
    let mut hi = F::neg_infinity();
    for &v in vals.iter() {
        if v < lo {
            lo = v;
        }
        if v > hi {
            hi = v;
        }
    }
    if !(hi > lo) {
        for v in vals.iter_mut() {
            *v = F::one();
        }
        return;
    }
    let span = hi - lo;
    for v in vals.iter_mut() {
        *v = (*v - lo) / span;
    }
}

/// Dynamic per-pixel adversarial weights (plain data, never on a graph):
/// raw source weight = normalized entropy of the source prediction minus the
/// source similarity score; raw target weight = target similarity score minus
/// normalized entropy of the teacher's target prediction. Entropy maps are
/// average-pooled from image resolution down to the similarity-map
/// resolution, then each domain is min-max normalized over the whole batch.
pub fn dynamic_weights<F: Real>(
    p_src: &Tensor<F>,
    p_tgt_teacher: &Tensor<F>,
    s_src: &Tensor<F>,
    s_tgt: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>)> {
    let entropy_pooled = |p: &Tensor<F>, s_shape: &[usize]| -> Result<Vec<F>> {
        let ps = p.shape();
        if ps.len() != 4 || s_shape.len() != 4 || s_shape[1] != 1 || ps[0] != s_shape[0] {
            return Err(CoreError::ShapeMismatch {
                op: "dynamic_weights",
                lhs: ps.to_vec(),
                rhs: s_shape.to_vec(),
            });
        }
        if ps[2] % s_shape[2] != 0 || ps[3] % s_shape[3] != 0 || ps[2] / s_shape[2] != ps[3] / s_shape[3]
        {
            return Err(CoreError::ShapeMismatch {
                op: "dynamic_weights",
                lhs: ps.to_vec(),
                rhs: s_shape.to_vec(),
            });
        }
        let factor = ps[2] / s_shape[2];
        let tape = Tape::eval();
        let pv = tape.leaf(p);
        let e = entropy_norm(pv)?;
        let pooled = if factor > 1 { ops::avg_pool2d(e, factor)? } else { e };
        Ok(pooled.data().to_vec())
    };

    let e_src = entropy_pooled(p_src, s_src.shape())?;
    let e_tgt = entropy_pooled(p_tgt_teacher, s_tgt.shape())?;
    let mut w_src: Vec<F> = e_src
        .iter()
        .zip(s_src.values())
        .map(|(&e, &s)| e - s)
        .collect();
    let mut w_tgt: Vec<F> = s_tgt
        .values()
        .iter()
        .zip(&e_tgt)
        .map(|(&s, &e)| s - e)
        .collect();
    min_max_normalize(&mut w_src);
    min_max_normalize(&mut w_tgt);
    Ok((
        Tensor::new(s_src.shape(), w_src)?,
        Tensor::new(s_tgt.shape(), w_tgt)?,
    ))
}

fn check_same<F: Real>(op: &'static str, a: &Var<'_, F>, b: &Var<'_, F>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(CoreError::ShapeMismatch {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    Ok(())
}

/// Binary adversarial loss: source scored toward 1, target toward 0.
pub fn adv_bin<'t, F: Real>(d_src: Var<'t, F>, d_tgt: Var<'t, F>) -> Result<Var<'t, F>> {
    let a = neg(ops::mean_all(clamped_log(d_src)?)?)?;
    let b = neg(ops::mean_all(clamped_log(one_minus(d_tgt)?)?)?)?;
    ops::add(a, b)
}

/// Weighted binary adversarial loss; weights enter as data multipliers.
pub fn adv_wbin<'t, F: Real>(
    d_src: Var<'t, F>,
    d_tgt: Var<'t, F>,
    w_src: Var<'t, F>,
    w_tgt: Var<'t, F>,
) -> Result<Var<'t, F>> {
    check_same("adv_wbin", &d_src, &w_src)?;
    check_same("adv_wbin", &d_tgt, &w_tgt)?;
    let a = neg(ops::mean_all(ops::mul(w_src, clamped_log(d_src)?)?)?)?;
    let b = neg(ops::mean_all(ops::mul(w_tgt, clamped_log(one_minus(d_tgt)?)?)?)?)?;
    ops::add(a, b)
}

/// Replicates a `(B,1,h,w)` weight map across `k` channels (data-side; the
/// weights carry no gradient).
pub fn expand_weight<'t, F: Real>(w: Var<'t, F>, k: usize) -> Result<Var<'t, F>> {
    let ws = w.shape();
    if ws.len() != 4 || ws[1] != 1 {
        return Err(CoreError::invalid("expand_weight", "expected (B,1,h,w)"));
    }
    let (b, h, wd) = (ws[0], ws[2], ws[3]);
    let src = w.data();
    let mut out = Vec::with_capacity(b * k * h * wd);
    for bi in 0..b {
        let plane = &src[bi * h * wd..(bi + 1) * h * wd];
        for _ in 0..k {
            out.extend_from_slice(plane);
        }
    }
    w.tape().constant(&[b, k, h, wd], out)
}

/// Class-level adversarial loss: per-pixel channel sum of class posteriors
/// times per-class discriminator logs, then the pixel mean. `p_*` are
/// detached posteriors pooled to discriminator resolution.
pub fn adv_cls<'t, F: Real>(
    p_src: Var<'t, F>,
    p_tgt: Var<'t, F>,
    d_src: Var<'t, F>,
    d_tgt: Var<'t, F>,
) -> Result<Var<'t, F>> {
    check_same("adv_cls", &p_src, &d_src)?;
    check_same("adv_cls", &p_tgt, &d_tgt)?;
    let ds = d_src.shape();
    let npix = F::from_usize_(ds[0] * ds[2] * ds[3]);
    let a = ops::sum_all(ops::mul(p_src, clamped_log(d_src)?)?)?;
    let b = ops::sum_all(ops::mul(p_tgt, clamped_log(one_minus(d_tgt)?)?)?)?;
    ops::scalar_mul(ops::add(a, b)?, -F::one() / npix)
}

/// Weighted class-level adversarial loss.
pub fn adv_wcls<'t, F: Real>(
    p_src: Var<'t, F>,
    p_tgt: Var<'t, F>,
    d_src: Var<'t, F>,
    d_tgt: Var<'t, F>,
    w_src: Var<'t, F>,
    w_tgt: Var<'t, F>,
) -> Result<Var<'t, F>> {
    check_same("adv_wcls", &p_src, &d_src)?;
    check_same("adv_wcls", &p_tgt, &d_tgt)?;
    let k = d_src.shape()[1];
    let ws = expand_weight(w_src, k)?;
    let wt = expand_weight(w_tgt, k)?;
    let ds = d_src.shape();
    let npix = F::from_usize_(ds[0] * ds[2] * ds[3]);
    let a = ops::sum_all(ops::mul(ws, ops::mul(p_src, clamped_log(d_src)?)?)?)?;
    let b = ops::sum_all(ops::mul(wt, ops::mul(p_tgt, clamped_log(one_minus(d_tgt)?)?)?)?)?;
    ops::scalar_mul(ops::add(a, b)?, -F::one() / npix)
}

/// The extractor's fooling loss on a fresh discriminator forward whose D
/// parameters are constants. The non-saturating form flips the domain
/// targets; the saturating form is the negated discriminator loss.
///
/// The source branch always carries gradient to the live extractor. The
/// target branch enters only when supplied (the feature-smoothing branch is
/// detached by construction, so with MoFA active the caller omits it); its
/// features are detached either way, keeping the m = 0 smoothing
/// degeneration exact.
pub fn generator_adv_bin<'t, F: Real>(
    d_src: Var<'t, F>,
    w_src: Var<'t, F>,
    target: Option<(Var<'t, F>, Var<'t, F>)>,
    saturating: bool,
) -> Result<Var<'t, F>> {
    check_same("generator_adv", &d_src, &w_src)?;
    if saturating {
        let mut loss = neg(neg(ops::mean_all(ops::mul(w_src, clamped_log(d_src)?)?)?)?)?;
        if let Some((d_tgt, w_tgt)) = target {
            check_same("generator_adv", &d_tgt, &w_tgt)?;
            let t = neg(neg(ops::mean_all(ops::mul(
                w_tgt,
                clamped_log(one_minus(d_tgt)?)?,
            )?)?)?)?;
            loss = ops::add(loss, t)?;
        }
        return Ok(loss);
    }
    // Flipped targets: source scored toward 0, target toward 1.
    let mut loss = neg(ops::mean_all(ops::mul(
        w_src,
        clamped_log(one_minus(d_src)?)?,
    )?)?)?;
    if let Some((d_tgt, w_tgt)) = target {
        check_same("generator_adv", &d_tgt, &w_tgt)?;
        let t = neg(ops::mean_all(ops::mul(w_tgt, clamped_log(d_tgt)?)?)?)?;
        loss = ops::add(loss, t)?;
    }
    Ok(loss)
}

/// Class-level fooling loss; `p_*` weight the channels as data.
pub fn generator_adv_cls<'t, F: Real>(
    d_src: Var<'t, F>,
    p_src: Var<'t, F>,
    w_src: Var<'t, F>,
    target: Option<(Var<'t, F>, Var<'t, F>, Var<'t, F>)>,
    saturating: bool,
) -> Result<Var<'t, F>> {
    check_same("generator_adv_cls", &d_src, &p_src)?;
    let k = d_src.shape()[1];
    let ds = d_src.shape();
    let npix = F::from_usize_(ds[0] * ds[2] * ds[3]);
    let term = |d: Var<'t, F>, p: Var<'t, F>, w: Var<'t, F>, flip: bool| -> Result<Var<'t, F>> {
        let logd = if flip {
            clamped_log(one_minus(d)?)?
        } else {
            clamped_log(d)?
        };
        let we = expand_weight(w, k)?;
        let s = ops::sum_all(ops::mul(we, ops::mul(p, logd)?)?)?;
        ops::scalar_mul(s, -F::one() / npix)
    };
    let (src_flip, tgt_flip, sign) = if saturating {
        (false, true, -F::one())
    } else {
        (true, false, F::one())
    };
    let mut loss = term(d_src, p_src, w_src, src_flip)?;
    if let Some((d_tgt, p_tgt, w_tgt)) = target {
        let t = term(d_tgt, p_tgt, w_tgt, tgt_flip)?;
        loss = ops::add(loss, t)?;
    }
    ops::scalar_mul(loss, sign)
}

/// Mean similarity score per mask class, for the similarity-ordering
/// diagnostic. `mask` is `(B, H, W)` at image resolution; the map is sampled
/// at patch centers to match the `(B,1,h,w)` similarity resolution. Classes
/// with no pixels report `None`.
pub fn mean_similarity_per_class<F: Real>(
    s_map: &Tensor<F>,
    mask: &[u8],
    image_hw: (usize, usize),
    num_classes: usize,
    ignore_index: u8,
) -> Result<Vec<Option<F>>> {
    let ss = s_map.shape();
    if ss.len() != 4 || ss[1] != 1 {
        return Err(CoreError::invalid(
            "mean_similarity_per_class",
            "expected (B,1,h,w)",
        ));
    }
    let (b, h, w) = (ss[0], ss[2], ss[3]);
    let (ih, iw) = image_hw;
    if mask.len() != b * ih * iw || ih % h != 0 || iw % w != 0 {
        return Err(CoreError::invalid(
            "mean_similarity_per_class",
            "mask extent mismatch",
        ));
    }
    let (fy, fx) = (ih / h, iw / w);
    let sv = s_map.values();
    let mut sums = vec![F::zero(); num_classes];
    let mut counts = vec![0usize; num_classes];
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                let my = y * fy + fy / 2;
                let mx = x * fx + fx / 2;
                let label = mask[(bi * ih + my) * iw + mx];
                if label == ignore_index || label as usize >= num_classes {
                    continue;
                }
                sums[label as usize] = sums[label as usize] + sv[(bi * h + y) * w + x];
                counts[label as usize] += 1;
            }
        }
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| (c > 0).then(|| s / F::from_usize_(c)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    const LN5: f64 = 1.6094379124341003;
    const LN2: f64 = core::f64::consts::LN_2;

    fn rand_probs(b: usize, k: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut r = rng::stream(seed, &[42]);
        let mut vals = vec![0.0f64; b * k * h * w];
        for bi in 0..b {
            for y in 0..h {
                for x in 0..w {
                    let mut total = 0.0;
                    let mut raw = vec![0.0; k];
                    for (c, rv) in raw.iter_mut().enumerate() {
                        *rv = r.random::<f64>() + 1e-3;
                        total += *rv;
                        let _ = c;
                    }
                    for c in 0..k {
                        vals[((bi * k + c) * h + y) * w + x] = raw[c] / total;
                    }
                }
            }
        }
        Tensor::new(&[b, k, h, w], vals).unwrap()
    }

    fn rand_unit(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut r = rng::stream(seed, &[43]);
        let n: usize = shape.iter().product();
        let vals = (0..n).map(|_| r.random::<f64>() * 0.98 + 0.01).collect();
        Tensor::new(shape, vals).unwrap()
    }

    #[test]
    fn ce_source_perfect_prediction_is_near_zero() {
        let tape = Tape::<f64>::new();
        let labels = [0u8, 1, 2, 0];
        let mut vals = vec![0.0; 3 * 4];
        for (i, &l) in labels.iter().enumerate() {
            let (y, x) = (i / 2, i % 2);
            vals[((l as usize) * 2 + y) * 2 + x] = 1.0;
        }
        let p = tape.constant(&[1, 3, 2, 2], vals).unwrap();
        let loss = ce_source(p, &labels, 255).unwrap().item().unwrap();
        assert!(loss >= 0.0 && loss <= 1e-10, "loss {loss}");
    }

    #[test]
    fn ce_source_uniform_is_ln_k() {
        let tape = Tape::<f64>::new();
        let p = tape.constant(&[1, 5, 2, 2], vec![0.2; 20]).unwrap();
        let labels = [0u8, 1, 2, 3];
        let loss = ce_source(p, &labels, 255).unwrap().item().unwrap();
        assert!((loss - LN5).abs() < 1e-12);
    }

    #[test]
    fn ce_source_matches_per_pixel_enumeration() {
        let p = rand_probs(1, 3, 2, 2, 7);
        let labels = [2u8, 0, 255, 1];
        let tape = Tape::<f64>::new();
        let pv = tape.leaf(&p);
        let got = ce_source(pv, &labels, 255).unwrap().item().unwrap();
        // Enumeration oracle: mean of -ln p[true] over non-ignored pixels.
        let d = p.values();
        let mut acc = 0.0;
        let mut n = 0;
        for (i, &l) in labels.iter().enumerate() {
            if l == 255 {
                continue;
            }
            let (y, x) = (i / 2, i % 2);
            acc += -(d[((l as usize) * 2 + y) * 2 + x]).ln();
            n += 1;
        }
        assert!((got - acc / n as f64).abs() < 1e-12);
    }

    #[test]
    fn ce_source_all_ignored_is_an_error() {
        let tape = Tape::<f64>::new();
        let p = tape.constant(&[1, 3, 1, 2], vec![1.0 / 3.0; 6]).unwrap();
        assert!(ce_source(p, &[255, 255], 255).is_err());
    }

    #[test]
    fn pseudo_label_takes_argmax_with_low_index_ties() {
        let p = Tensor::new(&[1, 3, 1, 1], vec![0.1, 0.7, 0.2]).unwrap();
        let pl = pseudo_label(&p).unwrap();
        assert_eq!(pl.onehot.values(), &[0.0, 1.0, 0.0]);
        assert_eq!(pl.classes, vec![1]);

        let tie = Tensor::new(&[1, 3, 1, 1], vec![0.5, 0.5, 0.0]).unwrap();
        let pl = pseudo_label(&tie).unwrap();
        assert_eq!(pl.onehot.values(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn pseudo_label_argmax_matches_input_argmax() {
        for seed in 0..10 {
            let p = rand_probs(2, 5, 3, 3, seed);
            let pl = pseudo_label(&p).unwrap();
            let d = p.values();
            for bi in 0..2 {
                for y in 0..3 {
                    for x in 0..3 {
                        let mut best = 0;
                        for c in 1..5 {
                            if d[((bi * 5 + c) * 3 + y) * 3 + x]
                                > d[((bi * 5 + best) * 3 + y) * 3 + x]
                            {
                                best = c;
                            }
                        }
                        assert_eq!(pl.classes[(bi * 3 + y) * 3 + x] as usize, best);
                    }
                }
            }
        }
    }

    #[test]
    fn ce_target_equals_ce_source_at_argmax() {
        for seed in 0..5 {
            let p = rand_probs(2, 4, 2, 3, seed + 100);
            let teacher = rand_probs(2, 4, 2, 3, seed + 200);
            let pl = pseudo_label(&teacher).unwrap();
            let tape = Tape::<f64>::new();
            let pv = tape.leaf(&p);
            let a = ce_target(pv, &pl.onehot).unwrap().item().unwrap();
            let b = ce_source(pv, &pl.classes, 255).unwrap().item().unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn ce_target_uniform_is_ln_k() {
        let tape = Tape::<f64>::new();
        let p = tape.constant(&[1, 5, 1, 2], vec![0.2; 10]).unwrap();
        let teacher = rand_probs(1, 5, 1, 2, 3);
        let pl = pseudo_label(&teacher).unwrap();
        let loss = ce_target(p, &pl.onehot).unwrap().item().unwrap();
        assert!((loss - LN5).abs() < 1e-12);
    }

    #[test]
    fn ce_target_rejects_non_one_hot() {
        let tape = Tape::<f64>::new();
        let p = tape.constant(&[1, 2, 1, 1], vec![0.5, 0.5]).unwrap();
        let bad = Tensor::new(&[1, 2, 1, 1], vec![0.5, 0.5]).unwrap();
        assert!(ce_target(p, &bad).is_err());
    }

    #[test]
    fn entropy_norm_bounds() {
        let tape = Tape::<f64>::new();
        let uniform = tape.constant(&[1, 5, 1, 1], vec![0.2; 5]).unwrap();
        let e = entropy_norm(uniform).unwrap();
        assert!((e.data()[0] - 1.0).abs() < 1e-12);

        let onehot = tape
            .constant(&[1, 5, 1, 1], vec![1.0, 0.0, 0.0, 0.0, 0.0])
            .unwrap();
        let e = entropy_norm(onehot).unwrap();
        assert!(e.data()[0] >= 0.0 && e.data()[0] <= 1e-10);

        let half = tape
            .constant(&[1, 5, 1, 1], vec![0.5, 0.5, 0.0, 0.0, 0.0])
            .unwrap();
        let e = entropy_norm(half).unwrap();
        assert!((e.data()[0] - LN2 / LN5).abs() < 1e-12);
    }

    #[test]
    fn entropy_norm_needs_two_classes() {
        let tape = Tape::<f64>::new();
        let p = tape.constant(&[1, 1, 1, 1], vec![1.0]).unwrap();
        assert!(entropy_norm(p).is_err());
    }

    #[test]
    fn sim_loss_values() {
        let tape = Tape::<f64>::new();
        let eps = 1e-9;
        let hi = tape.constant(&[1, 1, 2, 2], vec![1.0 - eps; 4]).unwrap();
        let lo = tape.constant(&[1, 1, 2, 2], vec![eps; 4]).unwrap();
        let near_zero = sim_loss(hi, lo).unwrap().item().unwrap();
        assert!(near_zero.abs() < 1e-8);

        let mid = tape.constant(&[1, 1, 2, 2], vec![0.5; 4]).unwrap();
        let v = sim_loss(mid, mid).unwrap().item().unwrap();
        assert!((v - 2.0 * LN2).abs() < 1e-12);
    }

    #[test]
    fn sim_loss_matches_enumeration() {
        let s_src = rand_unit(&[1, 1, 2, 2], 11);
        let s_tgt = rand_unit(&[1, 1, 2, 2], 12);
        let tape = Tape::<f64>::new();
        let a = tape.leaf(&s_src);
        let b = tape.leaf(&s_tgt);
        let got = sim_loss(a, b).unwrap().item().unwrap();
        let mut acc = 0.0;
        for i in 0..4 {
            acc += -s_src.values()[i].ln() / 4.0 - (1.0 - s_tgt.values()[i]).ln() / 4.0;
        }
        assert!((got - acc).abs() < 1e-12);
    }

    #[test]
    fn min_max_two_point_case() {
        let mut vals = [-0.2f64, 0.6];
        min_max_normalize(&mut vals);
        assert_eq!(vals, [0.0, 1.0]);
    }

    #[test]
    fn degenerate_min_max_falls_back_to_ones() {
        let mut vals = [0.5f64; 6];
        min_max_normalize(&mut vals);
        assert!(vals.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn dynamic_weights_uniform_inputs_degenerate_to_one() {
        // Uniform source prediction: entropy term 1 everywhere; S = 0.5: raw
        // weight 0.5 everywhere, degenerate min-max, all ones.
        let p_src = Tensor::new(&[1, 5, 4, 4], vec![0.2; 80]).unwrap();
        let mut onehot = vec![0.0; 80];
        for i in 0..16 {
            onehot[i] = 1.0;
        }
        let p_tgt = Tensor::new(&[1, 5, 4, 4], onehot).unwrap();
        let s = Tensor::new(&[1, 1, 2, 2], vec![0.5; 4]).unwrap();
        let (ws, wt) = dynamic_weights(&p_src, &p_tgt, &s, &s).unwrap();
        assert!(ws.values().iter().all(|&v| v == 1.0));
        assert!(wt.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn dynamic_weights_land_in_unit_interval() {
        let p_src = rand_probs(2, 5, 8, 8, 31);
        let p_tgt = rand_probs(2, 5, 8, 8, 32);
        let s_src = rand_unit(&[2, 1, 4, 4], 33);
        let s_tgt = rand_unit(&[2, 1, 4, 4], 34);
        let (ws, wt) = dynamic_weights(&p_src, &p_tgt, &s_src, &s_tgt).unwrap();
        for &v in ws.values().iter().chain(wt.values()) {
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn weighted_losses_reduce_to_unweighted_at_unit_weights() {
        let d_src = rand_unit(&[2, 1, 3, 3], 51);
        let d_tgt = rand_unit(&[2, 1, 3, 3], 52);
        let tape = Tape::<f64>::new();
        let ds = tape.leaf(&d_src);
        let dt = tape.leaf(&d_tgt);
        let ones = tape.constant(&[2, 1, 3, 3], vec![1.0; 18]).unwrap();
        let bin = adv_bin(ds, dt).unwrap().item().unwrap();
        let wbin = adv_wbin(ds, dt, ones, ones).unwrap().item().unwrap();
        assert!((bin - wbin).abs() < 1e-12);
    }

    #[test]
    fn class_loss_reduces_to_binary_at_one_class() {
        let d_src = rand_unit(&[2, 1, 3, 3], 61);
        let d_tgt = rand_unit(&[2, 1, 3, 3], 62);
        let tape = Tape::<f64>::new();
        let ds = tape.leaf(&d_src);
        let dt = tape.leaf(&d_tgt);
        let ones = tape.constant(&[2, 1, 3, 3], vec![1.0; 18]).unwrap();
        let bin = adv_bin(ds, dt).unwrap().item().unwrap();
        let cls = adv_cls(ones, ones, ds, dt).unwrap().item().unwrap();
        assert!((bin - cls).abs() < 1e-12);
        let wcls = adv_wcls(ones, ones, ds, dt, ones, ones)
            .unwrap()
            .item()
            .unwrap();
        assert!((cls - wcls).abs() < 1e-12);
    }

    #[test]
    fn adv_bin_matches_enumeration() {
        let d_src = rand_unit(&[1, 1, 2, 2], 71);
        let d_tgt = rand_unit(&[1, 1, 2, 2], 72);
        let tape = Tape::<f64>::new();
        let got = adv_bin(tape.leaf(&d_src), tape.leaf(&d_tgt))
            .unwrap()
            .item()
            .unwrap();
        let mut acc = 0.0;
        for i in 0..4 {
            acc += -d_src.values()[i].ln() / 4.0 - (1.0 - d_tgt.values()[i]).ln() / 4.0;
        }
        assert!((got - acc).abs() < 1e-12);
    }

    #[test]
    fn adv_wcls_matches_enumeration() {
        let k = 2;
        let d_src = rand_unit(&[1, k, 2, 2], 81);
        let d_tgt = rand_unit(&[1, k, 2, 2], 82);
        let p_src = rand_probs(1, k, 2, 2, 83);
        let p_tgt = rand_probs(1, k, 2, 2, 84);
        let w_src = rand_unit(&[1, 1, 2, 2], 85);
        let w_tgt = rand_unit(&[1, 1, 2, 2], 86);
        let tape = Tape::<f64>::new();
        let got = adv_wcls(
            tape.leaf(&p_src),
            tape.leaf(&p_tgt),
            tape.leaf(&d_src),
            tape.leaf(&d_tgt),
            tape.leaf(&w_src),
            tape.leaf(&w_tgt),
        )
        .unwrap()
        .item()
        .unwrap();
        let mut acc = 0.0;
        for pix in 0..4 {
            let mut src_inner = 0.0;
            let mut tgt_inner = 0.0;
            for c in 0..k {
                src_inner += p_src.values()[c * 4 + pix] * d_src.values()[c * 4 + pix].ln();
                tgt_inner +=
                    p_tgt.values()[c * 4 + pix] * (1.0 - d_tgt.values()[c * 4 + pix]).ln();
            }
            acc += -(w_src.values()[pix] * src_inner + w_tgt.values()[pix] * tgt_inner) / 4.0;
        }
        assert!((got - acc).abs() < 1e-12, "{got} vs {acc}");
    }

    #[test]
    fn generator_loss_at_half_is_ln2_per_branch() {
        let tape = Tape::<f64>::new();
        let half = tape.constant(&[1, 1, 2, 2], vec![0.5; 4]).unwrap();
        let ones = tape.constant(&[1, 1, 2, 2], vec![1.0; 4]).unwrap();
        let one_branch = generator_adv_bin(half, ones, None, false)
            .unwrap()
            .item()
            .unwrap();
        assert!((one_branch - LN2).abs() < 1e-12);
        let two_branch = generator_adv_bin(half, ones, Some((half, ones)), false)
            .unwrap()
            .item()
            .unwrap();
        assert!((two_branch - 2.0 * LN2).abs() < 1e-12);
    }
}
