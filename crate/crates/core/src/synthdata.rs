//! Seeded synthetic sim2real scenes: a clean "simulation" source domain with
//! exact masks and a corrupted "real-style" target domain (the corruption
//! touches images only), plus the training augmentation pipeline.
//!
//! Classes: 0 background, then circle / rectangle / triangle / stripe as the
//! common shape classes, an optional source-private cross (id = K_common) and
//! an optional target-private ring (id = K_common + 1).

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::scalar::Real;
use crate::autodiff::tensor::Tensor;
use crate::error::{CoreError, Result};
use crate::rng;

pub const IGNORE_INDEX: u8 = 255;
const MAX_PLACEMENT_TRIES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

/// Target-domain corruption stack, applied to images only, in order:
/// additive Gaussian noise, global hue/brightness shift, box blur, linear
/// illumination ramp. All-zero parameters are the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShiftParams {
    /// Std-dev of per-pixel additive Gaussian noise.
    pub noise_sigma: f64,
    /// Hue rotation in radians, with a proportional brightness offset
    /// (0.05 * color_shift).
    pub color_shift: f64,
    /// Box-blur radius in pixels (kernel 2r+1).
    pub blur_radius: usize,
    /// Amplitude of the horizontal multiplicative illumination ramp; pixel
    /// column x is scaled by 1 + a * (2x/(W-1) - 1).
    pub illumination: f64,
}

impl Default for ShiftParams {
    fn default() -> Self {
        Self {
            noise_sigma: 0.06,
            color_shift: 0.6,
            blur_radius: 1,
            illumination: 0.25,
        }
    }
}

impl ShiftParams {
    pub fn zero() -> Self {
        Self {
            noise_sigma: 0.0,
            color_shift: 0.0,
            blur_radius: 0,
            illumination: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainSpec {
    /// Number of common classes K (background plus K-1 shape kinds), 2..=5.
    pub common_classes: usize,
    pub include_source_private: bool,
    pub include_target_private: bool,
    pub image_size: (usize, usize),
    pub shift: ShiftParams,
}

impl Default for DomainSpec {
    fn default() -> Self {
        Self {
            common_classes: 5,
            include_source_private: false,
            include_target_private: false,
            image_size: (64, 64),
            shift: ShiftParams::default(),
        }
    }
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        if !(2..=5).contains(&self.common_classes) {
            return Err(CoreError::Config(alloc::format!(
                "common_classes {} outside 2..=5",
                self.common_classes
            )));
        }
        if self.image_size.0 < 16 || self.image_size.1 < 16 {
            return Err(CoreError::Config(alloc::format!(
                "image size {:?} too small",
                self.image_size
            )));
        }
        Ok(())
    }

    pub fn source_private_id(&self) -> u8 {
        self.common_classes as u8
    }

    pub fn target_private_id(&self) -> u8 {
        self.common_classes as u8 + 1
    }

    /// Total distinct ids that can appear in masks across both domains.
    pub fn total_classes(&self) -> usize {
        self.common_classes
            + usize::from(self.include_source_private)
            + usize::from(self.include_target_private)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample<F: Real> {
    /// `(3, H, W)` image with values in `[0, 1]`.
    pub image: Tensor<F>,
    /// `(H, W)` row-major class ids.
    pub mask: Vec<u8>,
    pub domain: Domain,
    pub sample_seed: u64,
}

struct Painter<'a, F: Real> {
    img: &'a mut [f64],
    mask: &'a mut [u8],
    h: usize,
    w: usize,
    _marker: core::marker::PhantomData<F>,
}

impl<F: Real> Painter<'_, F> {
    fn occupied(&self, y: usize, x: usize) -> bool {
        self.mask[y * self.w + x] != 0
    }

    fn paint(&mut self, y: usize, x: usize, class: u8, color: [f64; 3]) {
        self.mask[y * self.w + x] = class;
        for (c, &v) in color.iter().enumerate() {
            self.img[c * self.h * self.w + y * self.w + x] = v;
        }
    }
}

/// Pixel membership test for each shape kind, in local object coordinates.
#[derive(Debug, Clone, Copy)]
enum ShapeGeom {
    Circle { cy: f64, cx: f64, r: f64 },
    Rect { y0: usize, x0: usize, h: usize, w: usize },
    Triangle { apex_y: usize, y0: usize, x0: usize, h: usize, w: usize, up: bool },
    Stripe { cy: f64, cx: f64, cos: f64, sin: f64, half_len: f64, half_th: f64 },
    Cross { cy: f64, cx: f64, arm: f64, half_th: f64 },
    Ring { cy: f64, cx: f64, r_out: f64, r_in: f64 },
}

impl ShapeGeom {
    fn contains(&self, y: usize, x: usize) -> bool {
        let (yf, xf) = (y as f64, x as f64);
        match *self {
            ShapeGeom::Circle { cy, cx, r } => {
                let (dy, dx) = (yf - cy, xf - cx);
                dy * dy + dx * dx <= r * r
            }
            ShapeGeom::Rect { y0, x0, h, w } => y >= y0 && y < y0 + h && x >= x0 && x < x0 + w,
            ShapeGeom::Triangle { apex_y, y0, x0, h, w, up } => {
                if y < y0 || y >= y0 + h || x < x0 || x >= x0 + w {
                    return false;
                }
                let progress = if up {
                    (yf - apex_y as f64) / h as f64
                } else {
                    (apex_y as f64 - yf) / h as f64
                };
                let progress = progress.clamp(0.0, 1.0);
                let cx = x0 as f64 + w as f64 / 2.0;
                let half = progress * w as f64 / 2.0;
                (xf - cx).abs() <= half
            }
            ShapeGeom::Stripe { cy, cx, cos, sin, half_len, half_th } => {
                let (dy, dx) = (yf - cy, xf - cx);
                let u = dx * cos + dy * sin;
                let v = -dx * sin + dy * cos;
                u.abs() <= half_len && v.abs() <= half_th
            }
            ShapeGeom::Cross { cy, cx, arm, half_th } => {
                let (dy, dx) = ((yf - cy).abs(), (xf - cx).abs());
                (dx <= arm && dy <= half_th) || (dy <= arm && dx <= half_th)
            }
            ShapeGeom::Ring { cy, cx, r_out, r_in } => {
                let (dy, dx) = (yf - cy, xf - cx);
                let d2 = dy * dy + dx * dx;
                d2 <= r_out * r_out && d2 >= r_in * r_in
            }
        }
    }

    /// Conservative bounding box (y0, y1, x0, x1), clamped to the canvas.
    fn bbox(&self, h: usize, w: usize) -> (usize, usize, usize, usize) {
        let clampf = |v: f64, hi: usize| -> usize {
            if v < 0.0 {
                0
            } else if v >= hi as f64 {
                hi - 1
            } else {
                v as usize
            }
        };
        match *self {
            ShapeGeom::Circle { cy, cx, r } | ShapeGeom::Ring { cy, cx, r_out: r, .. } => (
                clampf(cy - r - 1.0, h),
                clampf(cy + r + 1.0, h),
                clampf(cx - r - 1.0, w),
                clampf(cx + r + 1.0, w),
            ),
            ShapeGeom::Rect { y0, x0, h: sh, w: sw } => (
                y0,
                (y0 + sh).min(h - 1),
                x0,
                (x0 + sw).min(w - 1),
            ),
            ShapeGeom::Triangle { y0, x0, h: sh, w: sw, .. } => (
                y0,
                (y0 + sh).min(h - 1),
                x0,
                (x0 + sw).min(w - 1),
            ),
            ShapeGeom::Stripe { cy, cx, half_len, half_th, .. } => {
                let r = half_len.max(half_th) + 1.0;
                (
                    clampf(cy - r, h),
                    clampf(cy + r, h),
                    clampf(cx - r, w),
                    clampf(cx + r, w),
                )
            }
            ShapeGeom::Cross { cy, cx, arm, .. } => (
                clampf(cy - arm - 1.0, h),
                clampf(cy + arm + 1.0, h),
                clampf(cx - arm - 1.0, w),
                clampf(cx + arm + 1.0, w),
            ),
        }
    }
}

fn base_color(class: u8) -> [f64; 3] {
    match class {
        1 => [0.80, 0.18, 0.18],
        2 => [0.15, 0.75, 0.20],
        3 => [0.18, 0.25, 0.85],
        4 => [0.85, 0.80, 0.15],
        5 => [0.80, 0.20, 0.80],
        _ => [0.15, 0.80, 0.80],
    }
}

fn sample_geom(shape_kind: u8, h: usize, w: usize, r: &mut ChaCha8Rng) -> ShapeGeom {
    let m = h.min(w) as f64;
    match shape_kind {
        1 => {
            let rad = r.random_range(m / 12.0..m / 5.0);
            ShapeGeom::Circle {
                cy: r.random_range(rad + 1.0..h as f64 - rad - 1.0),
                cx: r.random_range(rad + 1.0..w as f64 - rad - 1.0),
                r: rad,
            }
        }
        2 => {
            let sh = r.random_range(m as usize / 8..m as usize / 3);
            let sw = r.random_range(m as usize / 8..m as usize / 3);
            ShapeGeom::Rect {
                y0: r.random_range(1..h - sh - 1),
                x0: r.random_range(1..w - sw - 1),
                h: sh,
                w: sw,
            }
        }
        3 => {
            let sh = r.random_range(m as usize / 8..m as usize / 3);
            let sw = r.random_range(m as usize / 8..m as usize / 3);
            let y0 = r.random_range(1..h - sh - 1);
            let up = r.random::<f64>() < 0.5;
            ShapeGeom::Triangle {
                apex_y: if up { y0 } else { y0 + sh },
                y0,
                x0: r.random_range(1..w - sw - 1),
                h: sh,
                w: sw,
                up,
            }
        }
        4 => {
            let angle = core::f64::consts::FRAC_PI_4 * r.random_range(0..4) as f64;
            ShapeGeom::Stripe {
                cy: r.random_range(m * 0.25..h as f64 - m * 0.25),
                cx: r.random_range(m * 0.25..w as f64 - m * 0.25),
                cos: libm::cos(angle),
                sin: libm::sin(angle),
                half_len: r.random_range(m / 5.0..m / 3.0),
                half_th: r.random_range(2.0..4.0),
            }
        }
        5 => {
            let arm = r.random_range(m / 8.0..m / 5.0);
            ShapeGeom::Cross {
                cy: r.random_range(arm + 1.0..h as f64 - arm - 1.0),
                cx: r.random_range(arm + 1.0..w as f64 - arm - 1.0),
                arm,
                half_th: r.random_range(1.5..2.5),
            }
        }
        _ => {
            let r_out = r.random_range(m / 10.0..m / 5.5);
            ShapeGeom::Ring {
                cy: r.random_range(r_out + 1.0..h as f64 - r_out - 1.0),
                cx: r.random_range(r_out + 1.0..w as f64 - r_out - 1.0),
                r_out,
                r_in: (r_out - 3.0).max(1.0),
            }
        }
    }
}

/// Rotation of RGB about the gray axis, used for both the domain hue shift
/// and augmentation hue jitter.
fn hue_matrix(angle: f64) -> [[f64; 3]; 3] {
    let c = libm::cos(angle);
    let s = libm::sin(angle);
    let a = (1.0 - c) / 3.0;
    let b = libm::sqrt(1.0 / 3.0) * s;
    [
        [c + a, a - b, a + b],
        [a + b, c + a, a - b],
        [a - b, a + b, c + a],
    ]
}

fn apply_hue(img: &mut [f64], hw: usize, angle: f64) {
    if angle == 0.0 {
        return;
    }
    let m = hue_matrix(angle);
    for p in 0..hw {
        let (r, g, b) = (img[p], img[hw + p], img[2 * hw + p]);
        img[p] = m[0][0] * r + m[0][1] * g + m[0][2] * b;
        img[hw + p] = m[1][0] * r + m[1][1] * g + m[1][2] * b;
        img[2 * hw + p] = m[2][0] * r + m[2][1] * g + m[2][2] * b;
    }
}

fn box_blur(img: &mut [f64], h: usize, w: usize, radius: usize) {
    if radius == 0 {
        return;
    }
    let r = radius as isize;
    let mut out = vec![0.0f64; h * w];
    for c in 0..3 {
        let plane = &img[c * h * w..(c + 1) * h * w];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut acc = 0.0;
                let mut n = 0.0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let yy = (y + dy).clamp(0, h as isize - 1) as usize;
                        let xx = (x + dx).clamp(0, w as isize - 1) as usize;
                        acc += plane[yy * w + xx];
                        n += 1.0;
                    }
                }
                out[y as usize * w + x as usize] = acc / n;
            }
        }
        img[c * h * w..(c + 1) * h * w].copy_from_slice(&out);
    }
}

/// The target-domain corruption stack; a no-op at all-zero parameters.
fn apply_shift(img: &mut [f64], h: usize, w: usize, shift: &ShiftParams, r: &mut ChaCha8Rng) {
    let hw = h * w;
    if shift.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, shift.noise_sigma).expect("sigma validated");
        for v in img.iter_mut() {
            *v += normal.sample(r);
        }
    }
    if shift.color_shift != 0.0 {
        apply_hue(img, hw, shift.color_shift);
        let delta = 0.05 * shift.color_shift;
        for v in img.iter_mut() {
            *v += delta;
        }
    }
    box_blur(img, h, w, shift.blur_radius);
    if shift.illumination != 0.0 {
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    let ramp = 1.0 + shift.illumination * (2.0 * x as f64 / (w - 1) as f64 - 1.0);
                    img[c * hw + y * w + x] *= ramp;
                }
            }
        }
    }
    for v in img.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

fn generate_one<F: Real>(spec: &DomainSpec, domain: Domain, sample_seed: u64) -> SceneSample<F> {
    let (h, w) = spec.image_size;
    let hw = h * w;
    let mut scene_rng = rng::stream(sample_seed, &[rng::purpose::SCENE]);
    let mut shift_rng = rng::stream(sample_seed, &[rng::purpose::SHIFT]);

    let mut img = vec![0.0f64; 3 * hw];
    let mut mask = vec![0u8; hw];
    let base = 0.10 + 0.10 * scene_rng.random::<f64>();
    for c in 0..3 {
        let tint = 0.9 + 0.2 * scene_rng.random::<f64>();
        let v = (base * tint).clamp(0.0, 1.0);
        img[c * hw..(c + 1) * hw].fill(v);
    }

    // Candidate classes: common shapes plus this domain's private class.
    let mut pool: Vec<u8> = (1..spec.common_classes as u8).collect();
    match domain {
        Domain::Source if spec.include_source_private => pool.push(spec.source_private_id()),
        Domain::Target if spec.include_target_private => pool.push(spec.target_private_id()),
        _ => {}
    }

    let mut painter = Painter::<F> {
        img: &mut img,
        mask: &mut mask,
        h,
        w,
        _marker: core::marker::PhantomData,
    };
    let n_objects = scene_rng.random_range(3..=6usize);
    for _ in 0..n_objects {
        let class = pool[scene_rng.random_range(0..pool.len())];
        // Shape kind: private classes reuse the cross/ring geometry slots.
        let kind = if class == spec.source_private_id() && spec.include_source_private {
            5
        } else if class == spec.target_private_id() && spec.include_target_private {
            6
        } else {
            class
        };
        let mut color = base_color(class);
        let bright = 0.8 + 0.2 * scene_rng.random::<f64>();
        for ch in color.iter_mut() {
            *ch = (*ch * bright + scene_rng.random_range(-0.06..0.06)).clamp(0.0, 1.0);
        }
        // Bounded rejection sampling; on failure the object is dropped.
        for _try in 0..MAX_PLACEMENT_TRIES {
            let geom = sample_geom(kind, h, w, &mut scene_rng);
            let (y0, y1, x0, x1) = geom.bbox(h, w);
            let mut collides = false;
            'scan: for y in y0..=y1 {
                for x in x0..=x1 {
                    if geom.contains(y, x) && painter.occupied(y, x) {
                        collides = true;
                        break 'scan;
                    }
                }
            }
            if collides {
                continue;
            }
            for y in y0..=y1 {
                for x in x0..=x1 {
                    if geom.contains(y, x) {
                        painter.paint(y, x, class, color);
                    }
                }
            }
            break;
        }
    }

    if domain == Domain::Target {
        apply_shift(&mut img, h, w, &spec.shift, &mut shift_rng);
    }

    let values: Vec<F> = img.iter().map(|&v| F::c(v)).collect();
    SceneSample {
        image: Tensor::new(&[3, h, w], values).expect("image shape consistent"),
        mask,
        domain,
        sample_seed,
    }
}

/// Generates `n` seeded scenes. Sample `i` depends only on `(seed, i)`, so
/// generation is order-independent and reproducible.
pub fn generate<F: Real>(
    spec: &DomainSpec,
    domain: Domain,
    n: usize,
    seed: u64,
) -> Result<Vec<SceneSample<F>>> {
    spec.validate()?;
    if n == 0 {
        return Err(CoreError::invalid("generate", "n must be >= 1"));
    }
    Ok((0..n)
        .map(|i| generate_one(spec, domain, rng::mix(seed, &[i as u64])))
        .collect())
}

/// Augmentation magnitudes; the defaults implement horizontal flip, uniform
/// re-scaling in [0.5, 2.0] with crop/ignore-pad back to size, and color
/// jitter of ±0.2 brightness/contrast/saturation and ±0.05 hue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub flip_prob: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            flip_prob: 0.5,
            scale_min: 0.5,
            scale_max: 2.0,
            brightness: 0.2,
            contrast: 0.2,
            saturation: 0.2,
            hue: 0.05,
        }
    }
}

/// A fully determined augmentation; applying it is pure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub flip: bool,
    pub scale: f64,
    /// Fractional placement of the crop (scale > 1) or pad (scale < 1).
    pub offset: (f64, f64),
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue_angle: f64,
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self {
            flip: false,
            scale: 1.0,
            offset: (0.0, 0.0),
            brightness: 1.0,
            contrast: 1.0,
            saturation: 1.0,
            hue_angle: 0.0,
        }
    }
}

/// Draws augmentation parameters; the draw order is fixed so a disabled
/// transform still consumes its stream position.
pub fn sample_augment(cfg: &AugmentConfig, r: &mut ChaCha8Rng) -> AugmentParams {
    let flip = r.random::<f64>() < cfg.flip_prob;
    let scale = r.random_range(cfg.scale_min..=cfg.scale_max);
    let offset = (r.random::<f64>(), r.random::<f64>());
    let jit = |r: &mut ChaCha8Rng, mag: f64| 1.0 + r.random_range(-mag..=mag);
    let brightness = jit(r, cfg.brightness);
    let contrast = jit(r, cfg.contrast);
    let saturation = jit(r, cfg.saturation);
    let hue_angle = r.random_range(-cfg.hue..=cfg.hue) * core::f64::consts::TAU;
    AugmentParams {
        flip,
        scale,
        offset,
        brightness,
        contrast,
        saturation,
        hue_angle,
    }
}

fn resize_image_bilinear(img: &[f64], h: usize, w: usize, nh: usize, nw: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; 3 * nh * nw];
    for c in 0..3 {
        let plane = &img[c * h * w..(c + 1) * h * w];
        for y in 0..nh {
            let sy = ((y as f64 + 0.5) * h as f64 / nh as f64 - 0.5).max(0.0);
            let y0 = (sy as usize).min(h - 1);
            let y1 = (y0 + 1).min(h - 1);
            let fy = sy - y0 as f64;
            for x in 0..nw {
                let sx = ((x as f64 + 0.5) * w as f64 / nw as f64 - 0.5).max(0.0);
                let x0 = (sx as usize).min(w - 1);
                let x1 = (x0 + 1).min(w - 1);
                let fx = sx - x0 as f64;
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out[c * nh * nw + y * nw + x] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

pub(crate) fn resize_mask_nearest(mask: &[u8], h: usize, w: usize, nh: usize, nw: usize) -> Vec<u8> {
    let mut out = vec![0u8; nh * nw];
    for y in 0..nh {
        let sy = (((y as f64 + 0.5) * h as f64 / nh as f64) as usize).min(h - 1);
        for x in 0..nw {
            let sx = (((x as f64 + 0.5) * w as f64 / nw as f64) as usize).min(w - 1);
            out[y * nw + x] = mask[sy * w + sx];
        }
    }
    out
}

/// Applies a determined augmentation. Geometric transforms hit image and mask
/// identically (mask via nearest neighbor, padding labeled `IGNORE_INDEX`);
/// color jitter never touches the mask.
pub fn apply_augment<F: Real>(sample: &SceneSample<F>, p: &AugmentParams) -> SceneSample<F> {
    let shape = sample.image.shape().to_vec();
    let (h, w) = (shape[1], shape[2]);
    let hw = h * w;
    let mut img: Vec<f64> = sample
        .image
        .values()
        .iter()
        .map(|v| v.to_f64().unwrap())
        .collect();
    let mut mask = sample.mask.clone();

    if p.flip {
        for c in 0..3 {
            for y in 0..h {
                img[c * hw + y * w..c * hw + (y + 1) * w].reverse();
            }
        }
        for y in 0..h {
            mask[y * w..(y + 1) * w].reverse();
        }
    }

    if p.scale != 1.0 {
        let nh = (libm::round(h as f64 * p.scale) as usize).max(1);
        let nw = (libm::round(w as f64 * p.scale) as usize).max(1);
        let scaled_img = resize_image_bilinear(&img, h, w, nh, nw);
        let scaled_mask = resize_mask_nearest(&mask, h, w, nh, nw);
        let mut out_img = vec![0.0f64; 3 * hw];
        let mut out_mask = vec![IGNORE_INDEX; hw];
        let place = |span_out: usize, span_in: usize, frac: f64| -> (usize, usize) {
            // (output offset, input offset)
            if span_in >= span_out {
                (0, (frac * (span_in - span_out + 1) as f64) as usize)
            } else {
                ((frac * (span_out - span_in + 1) as f64) as usize, 0)
            }
        };
        let (oy, iy) = place(h, nh, p.offset.0);
        let (ox, ix) = place(w, nw, p.offset.1);
        let copy_h = nh.min(h);
        let copy_w = nw.min(w);
        for y in 0..copy_h {
            for x in 0..copy_w {
                out_mask[(oy + y) * w + ox + x] = scaled_mask[(iy + y) * nw + ix + x];
                for c in 0..3 {
                    out_img[c * hw + (oy + y) * w + ox + x] =
                        scaled_img[c * nh * nw + (iy + y) * nw + ix + x];
                }
            }
        }
        img = out_img;
        mask = out_mask;
    }

    // Color jitter: brightness, contrast (about the luma mean), saturation
    // (toward per-pixel luma), hue rotation.
    if p.brightness != 1.0 {
        for v in img.iter_mut() {
            *v *= p.brightness;
        }
    }
    if p.contrast != 1.0 {
        let mut mean = 0.0;
        for pix in 0..hw {
            mean += 0.299 * img[pix] + 0.587 * img[hw + pix] + 0.114 * img[2 * hw + pix];
        }
        mean /= hw as f64;
        for v in img.iter_mut() {
            *v = mean + (*v - mean) * p.contrast;
        }
    }
    if p.saturation != 1.0 {
        for pix in 0..hw {
            let luma = 0.299 * img[pix] + 0.587 * img[hw + pix] + 0.114 * img[2 * hw + pix];
            for c in 0..3 {
                let v = &mut img[c * hw + pix];
                *v = luma + (*v - luma) * p.saturation;
            }
        }
    }
    apply_hue(&mut img, hw, p.hue_angle);
    for v in img.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }

    SceneSample {
        image: Tensor::new(&shape, img.into_iter().map(F::c).collect()).expect("shape"),
        mask,
        domain: sample.domain,
        sample_seed: sample.sample_seed,
    }
}

/// Samples parameters from `rng` and applies them (no-op when disabled).
pub fn augment<F: Real>(
    sample: &SceneSample<F>,
    cfg: &AugmentConfig,
    r: &mut ChaCha8Rng,
) -> SceneSample<F> {
    let params = sample_augment(cfg, r);
    if !cfg.enabled {
        return sample.clone();
    }
    apply_augment(sample, &params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> DomainSpec {
        DomainSpec {
            image_size: (32, 32),
            ..DomainSpec::default()
        }
    }

    #[test]
    fn zero_shift_makes_domains_identical() {
        let mut s = spec();
        s.shift = ShiftParams::zero();
        let src = generate::<f32>(&s, Domain::Source, 3, 7).unwrap();
        let tgt = generate::<f32>(&s, Domain::Target, 3, 7).unwrap();
        for (a, b) in src.iter().zip(&tgt) {
            assert_eq!(a.image.values(), b.image.values());
            assert_eq!(a.mask, b.mask);
        }
    }

    #[test]
    fn masks_hold_only_valid_ids() {
        let s = spec();
        for sample in generate::<f32>(&s, Domain::Source, 8, 3).unwrap() {
            assert!(sample.mask.iter().all(|&m| (m as usize) < s.common_classes));
        }
    }

    #[test]
    fn same_seed_bit_identical_different_seeds_differ() {
        let s = spec();
        let a = generate::<f32>(&s, Domain::Target, 4, 11).unwrap();
        let b = generate::<f32>(&s, Domain::Target, 4, 11).unwrap();
        assert_eq!(a, b);
        let mut distinct = 0;
        for seed in 0..10u64 {
            let c = generate::<f32>(&s, Domain::Target, 1, 100 + seed).unwrap();
            if c[0].image.values() != a[0].image.values() {
                distinct += 1;
            }
        }
        assert_eq!(distinct, 10);
    }

    #[test]
    fn private_classes_appear_only_in_their_domain() {
        let mut s = spec();
        s.include_source_private = true;
        s.include_target_private = true;
        let src = generate::<f32>(&s, Domain::Source, 16, 21).unwrap();
        let tgt = generate::<f32>(&s, Domain::Target, 16, 21).unwrap();
        let sp = s.source_private_id();
        let tp = s.target_private_id();
        assert!(src.iter().any(|x| x.mask.contains(&sp)));
        assert!(src.iter().all(|x| !x.mask.contains(&tp)));
        assert!(tgt.iter().any(|x| x.mask.contains(&tp)));
        assert!(tgt.iter().all(|x| !x.mask.contains(&sp)));
    }

    #[test]
    fn forced_flip_twice_is_identity() {
        let s = spec();
        let sample = &generate::<f64>(&s, Domain::Source, 1, 5).unwrap()[0];
        let mut p = AugmentParams::identity();
        p.flip = true;
        let once = apply_augment(sample, &p);
        let twice = apply_augment(&once, &p);
        assert_eq!(twice.image.values(), sample.image.values());
        assert_eq!(twice.mask, sample.mask);
        assert_ne!(once.mask, sample.mask);
    }

    #[test]
    fn identity_params_are_identity() {
        let s = spec();
        let sample = &generate::<f64>(&s, Domain::Target, 1, 9).unwrap()[0];
        let out = apply_augment(sample, &AugmentParams::identity());
        assert_eq!(out.image.values(), sample.image.values());
        assert_eq!(out.mask, sample.mask);
    }

    #[test]
    fn augmented_masks_stay_in_id_set() {
        let s = spec();
        let cfg = AugmentConfig::default();
        let samples = generate::<f32>(&s, Domain::Source, 4, 13).unwrap();
        let mut r = rng::stream(13, &[77]);
        for sample in &samples {
            for _ in 0..8 {
                let out = augment(sample, &cfg, &mut r);
                for &m in &out.mask {
                    assert!(
                        (m as usize) < s.common_classes || m == IGNORE_INDEX,
                        "bad id {m}"
                    );
                }
            }
        }
    }

    #[test]
    fn jitter_never_touches_mask() {
        let s = spec();
        let sample = &generate::<f64>(&s, Domain::Source, 1, 17).unwrap()[0];
        let p = AugmentParams {
            brightness: 1.2,
            contrast: 0.8,
            saturation: 1.15,
            hue_angle: 0.3,
            ..AugmentParams::identity()
        };
        let out = apply_augment(sample, &p);
        assert_eq!(out.mask, sample.mask);
        assert_ne!(out.image.values(), sample.image.values());
    }

    #[test]
    fn mask_resize_matches_hand_oracle() {
        let mask: Vec<u8> = (0..16).map(|i| (i % 4) as u8).collect();
        let out = resize_mask_nearest(&mask, 4, 4, 2, 2);
        // centers at (1,1), (1,3), (3,1), (3,3) in source coordinates
        assert_eq!(out, vec![mask[5], mask[7], mask[13], mask[15]]);
    }

    #[test]
    fn class_frequencies_reproduce_per_seed() {
        let s = spec();
        let hist = |samples: &[SceneSample<f32>]| {
            let mut h = [0usize; 5];
            for smp in samples {
                for &m in &smp.mask {
                    h[m as usize] += 1;
                }
            }
            h
        };
        let a = hist(&generate::<f32>(&s, Domain::Source, 8, 41).unwrap());
        let b = hist(&generate::<f32>(&s, Domain::Source, 8, 41).unwrap());
        assert_eq!(a, b);
        assert!(a[1..].iter().all(|&c| c > 0), "all shape classes present: {a:?}");
    }
}
