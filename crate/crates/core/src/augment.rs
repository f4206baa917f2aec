//! Mask-aware, seedable chip augmentation.
//!
//! Every transform takes a [`Chip`] and returns a new one. Colour transforms
//! touch only the RGB planes, [`mask_jitter`] touches only the mask, and the
//! geometric transforms move both with the same sampling field. Masks are
//! resampled bilinearly and re-thresholded at 128, so they stay binary.
//!
//! [`augment_pipeline`] draws an [`AugmentPlan`] from a seed and applies it in
//! a fixed order: dihedral, colour/blur/noise, elastic/grid/optical, mask
//! jitter, margin crop and resize.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{Chip, ImageRgb};
use crate::seed::{rng_from_seed, SeedHasher};

#[derive(Debug, Error, PartialEq)]
pub enum AugmentError {
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("invalid config: {0}")]
    Config(String),
}

fn param_err(msg: impl Into<String>) -> AugmentError {
    AugmentError::Parameter(msg.into())
}

const MASK_THRESHOLD: f32 = 128.0;

#[inline]
fn to_u8(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

// ---------------------------------------------------------------------------
// Dihedral group
// ---------------------------------------------------------------------------

/// Applies dihedral element `k`: clockwise rotation by `90° · (k mod 4)`,
/// followed by a horizontal flip when `k >= 4`.
pub fn dihedral(c: &Chip, k: u8) -> Result<Chip, AugmentError> {
    if k >= 8 {
        return Err(param_err(format!("dihedral index {k} not in 0..8")));
    }
    let mut out = c.clone();
    for _ in 0..(k % 4) {
        out = rotate_cw(&out);
    }
    if k >= 4 {
        out = flip_horizontal(&out);
    }
    Ok(out)
}

fn permute(c: &Chip, width: u32, height: u32, src: impl Fn(u32, u32) -> (u32, u32)) -> Chip {
    let n = width as usize * height as usize;
    let mut rgb = Vec::with_capacity(n * 3);
    let mut mask = Vec::with_capacity(n);
    for y in 0..height {
        for x in 0..width {
            let (sx, sy) = src(x, y);
            rgb.extend_from_slice(&c.rgb_at(sx, sy));
            mask.push(c.mask_at(sx, sy));
        }
    }
    Chip {
        width,
        height,
        rgb,
        mask,
        margin: c.margin,
        building_id: c.building_id.clone(),
    }
}

fn rotate_cw(c: &Chip) -> Chip {
    let h = c.height;
    permute(c, c.height, c.width, |x, y| (y, h - 1 - x))
}

fn flip_horizontal(c: &Chip) -> Chip {
    let w = c.width;
    permute(c, c.width, c.height, |x, y| (w - 1 - x, y))
}

/// Element equal to applying `first` and then `then`.
pub fn dihedral_compose(first: u8, then: u8) -> u8 {
    let (r1, f1) = (first % 4, first >= 4);
    let (r2, f2) = (then % 4, then >= 4);
    // A flip conjugates a rotation into its inverse.
    let r = if f1 { (r1 + 4 - r2) % 4 } else { (r1 + r2) % 4 };
    r + if f1 ^ f2 { 4 } else { 0 }
}

pub fn dihedral_inverse(k: u8) -> u8 {
    if k >= 4 {
        k
    } else {
        (4 - k) % 4
    }
}

// ---------------------------------------------------------------------------
// Colour transforms
// ---------------------------------------------------------------------------

/// Adds a per-channel offset to the RGB planes, clamping to `[0, 255]`.
pub fn rgb_shift(c: &Chip, d: [i32; 3]) -> Chip {
    let mut out = c.clone();
    for px in out.rgb.chunks_exact_mut(3) {
        for (v, s) in px.iter_mut().zip(d) {
            *v = (*v as i32 + s).clamp(0, 255) as u8;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum BlurMode {
    Median { size: u32 },
    Box { size: u32 },
    Gaussian { sigma: f64 },
}

/// Blurs the RGB planes with edge-replicated borders.
pub fn blur(c: &Chip, mode: BlurMode) -> Result<Chip, AugmentError> {
    let check_odd = |size: u32| {
        if size < 3 || size.is_multiple_of(2) {
            Err(param_err(format!("kernel size {size} must be odd and >= 3")))
        } else {
            Ok(size)
        }
    };
    let mut out = c.clone();
    match mode {
        BlurMode::Median { size } => median_filter(c, &mut out, check_odd(size)?),
        BlurMode::Box { size } => {
            let size = check_odd(size)?;
            let kernel = vec![1.0 / size as f32; size as usize];
            separable_rgb(c, &mut out, &kernel);
        }
        BlurMode::Gaussian { sigma } => {
            if !(sigma > 0.0) {
                return Err(param_err(format!("gaussian sigma {sigma} must be positive")));
            }
            separable_rgb(c, &mut out, &gaussian_kernel(sigma));
        }
    }
    Ok(out)
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| (v / total) as f32).collect()
}

/// Convolves a float plane with a symmetric 1-D kernel along x then y.
fn separable(plane: &[f32], w: usize, h: usize, kernel: &[f32]) -> Vec<f32> {
    let r = (kernel.len() / 2) as i64;
    let mut tmp = vec![0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0f32;
            for (i, &k) in kernel.iter().enumerate() {
                let sx = (x as i64 + i as i64 - r).clamp(0, w as i64 - 1) as usize;
                acc += k * plane[y * w + sx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0f32;
            for (i, &k) in kernel.iter().enumerate() {
                let sy = (y as i64 + i as i64 - r).clamp(0, h as i64 - 1) as usize;
                acc += k * tmp[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn rgb_plane(c: &Chip, ch: usize) -> Vec<f32> {
    c.rgb.iter().skip(ch).step_by(3).map(|&v| v as f32).collect()
}

fn separable_rgb(c: &Chip, out: &mut Chip, kernel: &[f32]) {
    let (w, h) = (c.width as usize, c.height as usize);
    for ch in 0..3 {
        let blurred = separable(&rgb_plane(c, ch), w, h, kernel);
        for (i, v) in blurred.into_iter().enumerate() {
            out.rgb[i * 3 + ch] = to_u8(v);
        }
    }
}

fn median_filter(c: &Chip, out: &mut Chip, size: u32) {
    let (w, h) = (c.width as i64, c.height as i64);
    let r = (size / 2) as i64;
    let mut window = Vec::with_capacity((size * size) as usize);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                window.clear();
                for dy in -r..=r {
                    let sy = (y + dy).clamp(0, h - 1);
                    for dx in -r..=r {
                        let sx = (x + dx).clamp(0, w - 1);
                        window.push(c.rgb[((sy * w + sx) * 3) as usize + ch]);
                    }
                }
                let mid = window.len() / 2;
                let (_, m, _) = window.select_nth_unstable(mid);
                out.rgb[((y * w + x) * 3) as usize + ch] = *m;
            }
        }
    }
}

/// Adds `N(0, sigma²)` to every colour sample.
pub fn gauss_noise(c: &Chip, sigma: f64, seed: u64) -> Result<Chip, AugmentError> {
    if !(sigma >= 0.0) {
        return Err(param_err(format!("noise sigma {sigma} must be >= 0")));
    }
    if sigma == 0.0 {
        return Ok(c.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| param_err(e.to_string()))?;
    let mut rng = rng_from_seed(seed);
    let mut out = c.clone();
    for v in &mut out.rgb {
        *v = to_u8(*v as f32 + normal.sample(&mut rng) as f32);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

/// Bilinear lookup with coordinates clamped to the plane.
#[inline]
fn bilinear(plane: &[u8], stride: usize, ch: usize, w: usize, h: usize, sx: f32, sy: f32) -> f32 {
    let sx = sx.clamp(0.0, (w - 1) as f32);
    let sy = sy.clamp(0.0, (h - 1) as f32);
    let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (sx - x0 as f32, sy - y0 as f32);
    let at = |x: usize, y: usize| plane[(y * w + x) * stride + ch] as f32;
    let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
    let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Resamples a chip into `out_w × out_h`; `src(x, y)` gives the source
/// coordinate for output pixel `(x, y)`.
fn remap(
    c: &Chip,
    out_w: u32,
    out_h: u32,
    color: bool,
    mask: bool,
    src: impl Fn(u32, u32) -> (f32, f32),
) -> Chip {
    let (w, h) = (c.width as usize, c.height as usize);
    let n = out_w as usize * out_h as usize;
    let mut out = Chip {
        width: out_w,
        height: out_h,
        rgb: if color { vec![0; n * 3] } else { c.rgb.clone() },
        mask: if mask { vec![0; n] } else { c.mask.clone() },
        margin: c.margin,
        building_id: c.building_id.clone(),
    };
    for y in 0..out_h {
        for x in 0..out_w {
            let (sx, sy) = src(x, y);
            let i = y as usize * out_w as usize + x as usize;
            if color {
                for ch in 0..3 {
                    out.rgb[i * 3 + ch] = to_u8(bilinear(&c.rgb, 3, ch, w, h, sx, sy));
                }
            }
            if mask {
                let v = bilinear(&c.mask, 1, 0, w, h, sx, sy);
                out.mask[i] = if v >= MASK_THRESHOLD { 255 } else { 0 };
            }
        }
    }
    out
}

/// Elastic deformation: uniform random displacements smoothed by a Gaussian
/// of width `sigma` and scaled by `alpha`.
pub fn elastic_transform(c: &Chip, alpha: f64, sigma: f64, seed: u64) -> Result<Chip, AugmentError> {
    if !(alpha >= 0.0) || !(sigma > 0.0) {
        return Err(param_err(format!("elastic needs alpha >= 0 and sigma > 0, got {alpha}, {sigma}")));
    }
    if alpha == 0.0 {
        return Ok(c.clone());
    }
    let (w, h) = (c.width as usize, c.height as usize);
    let mut rng = rng_from_seed(seed);
    let kernel = gaussian_kernel(sigma);
    let mut field = || {
        let raw: Vec<f32> = (0..w * h).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        separable(&raw, w, h, &kernel)
            .into_iter()
            .map(|v| v * alpha as f32)
            .collect::<Vec<f32>>()
    };
    let dx = field();
    let dy = field();
    Ok(remap(c, c.width, c.height, true, true, |x, y| {
        let i = y as usize * w + x as usize;
        (x as f32 + dx[i], y as f32 + dy[i])
    }))
}

/// Cumulative cell boundaries along one axis of length `len` pixels.
fn grid_axis(rng: &mut ChaCha8Rng, len: u32, steps: usize, limit: f64) -> Vec<f32> {
    let span = (len.max(1) - 1) as f64;
    let factors: Vec<f64> = (0..steps)
        .map(|_| {
            if limit > 0.0 {
                rng.random_range(1.0 - limit..1.0 + limit)
            } else {
                1.0
            }
        })
        .collect();
    let total: f64 = factors.iter().sum();
    let mut pos = Vec::with_capacity(steps + 1);
    let mut acc = 0.0;
    pos.push(0.0);
    for f in &factors {
        acc += f;
        pos.push((acc / total * span) as f32);
    }
    pos[steps] = span as f32;
    pos
}

fn grid_lookup(v: f32, len: u32, pos: &[f32]) -> f32 {
    let steps = pos.len() - 1;
    let span = (len.max(1) - 1) as f32;
    if span == 0.0 {
        return 0.0;
    }
    let cell = span / steps as f32;
    let i = ((v / cell).floor() as usize).min(steps - 1);
    let t = (v - i as f32 * cell) / cell;
    pos[i] + t * (pos[i + 1] - pos[i])
}

/// Grid distortion: each of `num_steps` cells per axis is stretched by a factor
/// drawn from `U(1 - d, 1 + d)`; positions are renormalized so borders stay fixed.
pub fn grid_distortion(c: &Chip, num_steps: usize, distort_limit: f64, seed: u64) -> Result<Chip, AugmentError> {
    if num_steps < 2 || !(0.0..1.0).contains(&distort_limit) {
        return Err(param_err(format!(
            "grid distortion needs num_steps >= 2 and 0 <= limit < 1, got {num_steps}, {distort_limit}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let xs = grid_axis(&mut rng, c.width, num_steps, distort_limit);
    let ys = grid_axis(&mut rng, c.height, num_steps, distort_limit);
    let (w, h) = (c.width, c.height);
    Ok(remap(c, w, h, true, true, |x, y| {
        (grid_lookup(x as f32, w, &xs), grid_lookup(y as f32, h, &ys))
    }))
}

/// Radial distortion `r' = r · (1 + k (r / R)²)` about the chip centre, with
/// `R` the half-diagonal.
pub fn optical_distortion(c: &Chip, k: f64) -> Result<Chip, AugmentError> {
    if !(k.abs() < 1.0) {
        return Err(param_err(format!("optical distortion needs |k| < 1, got {k}")));
    }
    if k == 0.0 {
        return Ok(c.clone());
    }
    let cx = (c.width as f64 - 1.0) / 2.0;
    let cy = (c.height as f64 - 1.0) / 2.0;
    let r2_max = cx * cx + cy * cy;
    let r2_max = if r2_max > 0.0 { r2_max } else { 1.0 };
    Ok(remap(c, c.width, c.height, true, true, |x, y| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        let s = 1.0 + k * (dx * dx + dy * dy) / r2_max;
        ((cx + dx * s) as f32, (cy + dy * s) as f32)
    }))
}

/// Bilinear resize of both planes to `size × size`, pixel-centre aligned.
pub fn resize(c: &Chip, size: u32) -> Result<Chip, AugmentError> {
    if size == 0 {
        return Err(param_err("output size must be positive"));
    }
    let sx = c.width as f32 / size as f32;
    let sy = c.height as f32 / size as f32;
    let mut out = remap(c, size, size, true, true, |x, y| {
        ((x as f32 + 0.5) * sx - 0.5, (y as f32 + 0.5) * sy - 0.5)
    });
    if (c.width, c.height) != (size, size) {
        // Margins are no longer addressable in source pixels.
        out.margin = 0;
    }
    Ok(out)
}

/// Removes `(left, right, top, bottom)` pixels from the chip edges.
///
/// Each value must not exceed the margin the chip was extracted with, so the
/// polygon bounding box is never cut.
pub fn crop_margin(c: &Chip, margins: [u32; 4]) -> Result<Chip, AugmentError> {
    let [l, r, t, b] = margins;
    if margins.iter().any(|&m| m > c.margin) {
        return Err(param_err(format!(
            "crop margins {margins:?} exceed chip margin {}",
            c.margin
        )));
    }
    if l + r >= c.width || t + b >= c.height {
        return Err(param_err(format!(
            "crop {margins:?} leaves an empty window of a {}x{} chip",
            c.width, c.height
        )));
    }
    let (w, h) = (c.width - l - r, c.height - t - b);
    let mut out = permute(c, w, h, |x, y| (x + l, y + t));
    out.margin = c.margin - *margins.iter().max().expect("four margins");
    Ok(out)
}

/// Margin crop followed by a resize to `output_size × output_size`.
pub fn random_crop_margin(c: &Chip, margins: [u32; 4], output_size: u32) -> Result<Chip, AugmentError> {
    resize(&crop_margin(c, margins)?, output_size)
}

/// Mean (x, y) of set mask pixels, or `None` for an empty mask.
pub fn mask_centroid(c: &Chip) -> Option<(f64, f64)> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for y in 0..c.height {
        for x in 0..c.width {
            if c.mask_at(x, y) != 0 {
                sx += x as f64;
                sy += y as f64;
                n += 1;
            }
        }
    }
    (n > 0).then(|| (sx / n as f64, sy / n as f64))
}

/// Rotates the mask by `angle_deg` about its centroid, then shifts it by
/// `shift`. RGB is left untouched.
pub fn mask_jitter(c: &Chip, shift: (f64, f64), angle_deg: f64) -> Chip {
    if shift == (0.0, 0.0) && angle_deg == 0.0 {
        return c.clone();
    }
    let Some((cx, cy)) = mask_centroid(c) else {
        return c.clone();
    };
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    remap(c, c.width, c.height, false, true, |x, y| {
        // inverse map: undo the shift, then rotate back about the centroid
        let px = x as f64 - shift.0 - cx;
        let py = y as f64 - shift.1 - cy;
        ((cx + cos * px + sin * py) as f32, (cy - sin * px + cos * py) as f32)
    })
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlurConfig {
    /// Inclusive odd kernel size range for median blur.
    pub median_size: [u32; 2],
    pub box_size: [u32; 2],
    pub gaussian_sigma: [f64; 2],
}

impl Default for BlurConfig {
    fn default() -> Self {
        BlurConfig {
            median_size: [3, 5],
            box_size: [3, 5],
            gaussian_sigma: [0.5, 1.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticConfig {
    pub alpha: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub num_steps: usize,
    pub distort_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpticalConfig {
    /// `k` is drawn from `[-distort_limit, distort_limit]`.
    pub distort_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskJitterConfig {
    pub max_shift_px: f64,
    pub max_angle_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Probabilities {
    pub dihedral: f64,
    pub rgb_shift: f64,
    pub blur: f64,
    pub noise: f64,
    pub elastic: f64,
    pub grid: f64,
    pub optical: f64,
    pub mask_jitter: f64,
}

impl Default for Probabilities {
    fn default() -> Self {
        Probabilities {
            dihedral: 1.0,
            rgb_shift: 0.5,
            blur: 0.3,
            noise: 0.3,
            elastic: 0.2,
            grid: 0.2,
            optical: 0.2,
            mask_jitter: 0.5,
        }
    }
}

impl Probabilities {
    pub fn none() -> Self {
        Probabilities {
            dihedral: 0.0,
            rgb_shift: 0.0,
            blur: 0.0,
            noise: 0.0,
            elastic: 0.0,
            grid: 0.0,
            optical: 0.0,
            mask_jitter: 0.0,
        }
    }

    fn all(&self) -> [(&'static str, f64); 8] {
        [
            ("dihedral", self.dihedral),
            ("rgb_shift", self.rgb_shift),
            ("blur", self.blur),
            ("noise", self.noise),
            ("elastic", self.elastic),
            ("grid", self.grid),
            ("optical", self.optical),
            ("mask_jitter", self.mask_jitter),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub rgb_shift_limit: i32,
    pub blur: BlurConfig,
    pub noise_sigma_range: [f64; 2],
    pub elastic: ElasticConfig,
    pub grid: GridConfig,
    pub optical: OpticalConfig,
    /// Inclusive per-side crop range, in pixels removed from the stored margin.
    pub crop_margin_range: [u32; 2],
    pub mask_jitter: MaskJitterConfig,
    pub output_size: u32,
    pub probabilities: Probabilities,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rgb_shift_limit: 20,
            blur: BlurConfig::default(),
            noise_sigma_range: [3.0, 12.0],
            elastic: ElasticConfig { alpha: 30.0, sigma: 6.0 },
            grid: GridConfig {
                num_steps: 5,
                distort_limit: 0.3,
            },
            optical: OpticalConfig { distort_limit: 0.3 },
            crop_margin_range: [0, 100],
            mask_jitter: MaskJitterConfig {
                max_shift_px: 5.0,
                max_angle_deg: 5.0,
            },
            output_size: 224,
            probabilities: Probabilities::default(),
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |m: String| Err(AugmentError::Config(m));
        if self.output_size == 0 {
            return bad("output_size must be positive".into());
        }
        if self.rgb_shift_limit < 0 {
            return bad("rgb_shift_limit must be >= 0".into());
        }
        for (name, p) in self.probabilities.all() {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("probability {name}={p} outside [0,1]"));
            }
        }
        let ordered = |r: [f64; 2]| r[0] <= r[1];
        let b = &self.blur;
        for (name, r) in [("median_size", b.median_size), ("box_size", b.box_size)] {
            if r[0] > r[1] || odd_sizes(r).is_empty() {
                return bad(format!("blur {name} range {r:?} holds no odd size >= 3"));
            }
        }
        if !ordered(b.gaussian_sigma) || b.gaussian_sigma[0] <= 0.0 {
            return bad(format!("gaussian_sigma range {:?} invalid", b.gaussian_sigma));
        }
        if !ordered(self.noise_sigma_range) || self.noise_sigma_range[0] < 0.0 {
            return bad(format!("noise_sigma_range {:?} invalid", self.noise_sigma_range));
        }
        if self.elastic.alpha < 0.0 || self.elastic.sigma <= 0.0 {
            return bad("elastic needs alpha >= 0, sigma > 0".into());
        }
        if self.grid.num_steps < 2 || !(0.0..1.0).contains(&self.grid.distort_limit) {
            return bad("grid needs num_steps >= 2 and 0 <= distort_limit < 1".into());
        }
        if !(0.0..1.0).contains(&self.optical.distort_limit) {
            return bad("optical distort_limit must be in [0,1)".into());
        }
        if self.crop_margin_range[0] > self.crop_margin_range[1] {
            return bad(format!("crop_margin_range {:?} is empty", self.crop_margin_range));
        }
        if self.mask_jitter.max_shift_px < 0.0 || self.mask_jitter.max_angle_deg < 0.0 {
            return bad("mask jitter bounds must be >= 0".into());
        }
        Ok(())
    }
}

fn odd_sizes(r: [u32; 2]) -> Vec<u32> {
    (r[0].max(3)..=r[1]).filter(|s| s % 2 == 1).collect()
}

/// Derives per-item seeds so parallel workers do not share a random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPolicy {
    pub global_seed: u64,
}

impl SeedPolicy {
    pub fn item_seed(&self, building_id: &str, epoch: u64, variant: u64) -> u64 {
        SeedHasher::new("augment-item")
            .u64(self.global_seed)
            .str(building_id)
            .u64(epoch)
            .u64(variant)
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskJitterParams {
    pub dx: f64,
    pub dy: f64,
    pub angle_deg: f64,
}

/// Concrete transform parameters drawn for one pipeline call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentPlan {
    pub dihedral: u8,
    pub rgb_shift: Option<[i32; 3]>,
    pub blur: Option<BlurMode>,
    pub noise: Option<(f64, u64)>,
    pub elastic_seed: Option<u64>,
    pub grid_seed: Option<u64>,
    pub optical_k: Option<f64>,
    pub mask_jitter: Option<MaskJitterParams>,
    /// Left, right, top, bottom.
    pub crop: [u32; 4],
}

fn range_f64(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..=r[1])
    }
}

/// Draws the transforms for one call. `chip_margin` caps the crop amounts.
pub fn sample_plan(cfg: &AugmentConfig, chip_margin: u32, seed: u64) -> Result<AugmentPlan, AugmentError> {
    cfg.validate()?;
    let mut rng = rng_from_seed(seed);
    let p = &cfg.probabilities;
    // Every draw happens unconditionally so one transform's probability does not
    // shift the random stream seen by the others.
    let coin = |rng: &mut ChaCha8Rng, prob: f64| rng.random::<f64>() < prob;

    let dihedral_on = coin(&mut rng, p.dihedral);
    let k: u8 = rng.random_range(0..8);

    let shift_on = coin(&mut rng, p.rgb_shift);
    let lim = cfg.rgb_shift_limit;
    let shift = [0; 3].map(|_: i32| rng.random_range(-lim..=lim));

    let blur_on = coin(&mut rng, p.blur);
    let b = &cfg.blur;
    let medians = odd_sizes(b.median_size);
    let boxes = odd_sizes(b.box_size);
    let mode = match rng.random_range(0..3) {
        0 => BlurMode::Median {
            size: medians[rng.random_range(0..medians.len())],
        },
        1 => BlurMode::Box {
            size: boxes[rng.random_range(0..boxes.len())],
        },
        _ => BlurMode::Gaussian {
            sigma: range_f64(&mut rng, b.gaussian_sigma),
        },
    };

    let noise_on = coin(&mut rng, p.noise);
    let noise = (range_f64(&mut rng, cfg.noise_sigma_range), rng.random::<u64>());
    let elastic_on = coin(&mut rng, p.elastic);
    let elastic_seed = rng.random::<u64>();
    let grid_on = coin(&mut rng, p.grid);
    let grid_seed = rng.random::<u64>();
    let optical_on = coin(&mut rng, p.optical);
    let ol = cfg.optical.distort_limit;
    let optical_k = range_f64(&mut rng, [-ol, ol]);

    let jitter_on = coin(&mut rng, p.mask_jitter);
    let mj = &cfg.mask_jitter;
    let jitter = MaskJitterParams {
        dx: range_f64(&mut rng, [-mj.max_shift_px, mj.max_shift_px]).round(),
        dy: range_f64(&mut rng, [-mj.max_shift_px, mj.max_shift_px]).round(),
        angle_deg: range_f64(&mut rng, [-mj.max_angle_deg, mj.max_angle_deg]),
    };

    let hi = cfg.crop_margin_range[1].min(chip_margin);
    let lo = cfg.crop_margin_range[0].min(hi);
    let crop = [0; 4].map(|_: u32| rng.random_range(lo..=hi));

    Ok(AugmentPlan {
        dihedral: if dihedral_on { k } else { 0 },
        rgb_shift: shift_on.then_some(shift),
        blur: blur_on.then_some(mode),
        noise: noise_on.then_some(noise),
        elastic_seed: elastic_on.then_some(elastic_seed),
        grid_seed: grid_on.then_some(grid_seed),
        optical_k: optical_on.then_some(optical_k),
        mask_jitter: jitter_on.then_some(jitter),
        crop,
    })
}

/// Applies a drawn plan in pipeline order.
pub fn apply_plan(c: &Chip, cfg: &AugmentConfig, plan: &AugmentPlan) -> Result<Chip, AugmentError> {
    let mut out = dihedral(c, plan.dihedral)?;
    if let Some(d) = plan.rgb_shift {
        out = rgb_shift(&out, d);
    }
    if let Some(mode) = plan.blur {
        out = blur(&out, mode)?;
    }
    if let Some((sigma, seed)) = plan.noise {
        out = gauss_noise(&out, sigma, seed)?;
    }
    if let Some(seed) = plan.elastic_seed {
        out = elastic_transform(&out, cfg.elastic.alpha, cfg.elastic.sigma, seed)?;
    }
    if let Some(seed) = plan.grid_seed {
        out = grid_distortion(&out, cfg.grid.num_steps, cfg.grid.distort_limit, seed)?;
    }
    if let Some(k) = plan.optical_k {
        out = optical_distortion(&out, k)?;
    }
    if let Some(j) = plan.mask_jitter {
        out = mask_jitter(&out, (j.dx, j.dy), j.angle_deg);
    }
    random_crop_margin(&out, plan.crop, cfg.output_size)
}

/// Full augmentation for one chip under one seed.
pub fn augment_pipeline(c: &Chip, cfg: &AugmentConfig, seed: u64) -> Result<Chip, AugmentError> {
    let plan = sample_plan(cfg, c.margin, seed)?;
    apply_plan(c, cfg, &plan)
}

/// Tiles chips into a `cols`-wide sheet; roof pixels are tinted red.
pub fn contact_sheet(chips: &[Chip], cols: usize) -> Result<ImageRgb, AugmentError> {
    if chips.is_empty() || cols == 0 {
        return Err(param_err("contact sheet needs at least one chip and one column"));
    }
    let cell_w = chips.iter().map(|c| c.width).max().unwrap_or(1) + 2;
    let cell_h = chips.iter().map(|c| c.height).max().unwrap_or(1) + 2;
    let rows = chips.len().div_ceil(cols);
    let mut sheet = ImageRgb::new(cell_w * cols as u32, cell_h * rows as u32)
        .map_err(|e| param_err(e.to_string()))?;
    for (i, c) in chips.iter().enumerate() {
        let (ox, oy) = ((i % cols) as u32 * cell_w + 1, (i / cols) as u32 * cell_h + 1);
        for y in 0..c.height {
            for x in 0..c.width {
                let mut px = c.rgb_at(x, y);
                if c.mask_at(x, y) != 0 {
                    px[0] = ((px[0] as u16 + 255) / 2) as u8;
                }
                sheet.put(ox + x, oy + y, px);
            }
        }
    }
    Ok(sheet)
}
