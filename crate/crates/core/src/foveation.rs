//! Differentiable foveated vision.
//!
//! A stimulus is seen sharply inside a Gaussian blob around the current fixation
//! and through a low-pass copy elsewhere. The perceptual state keeps a
//! discounted, clipped sum of past blobs so that regions fixated earlier remain
//! (partially) sharp.

use std::sync::Arc;

use ndarray::{Array1, Array2, Array3, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{NevaError, Result};
use crate::types::{Fixation, Stimulus};

/// Kernel support in standard deviations.
const KERNEL_TRUNCATE: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FoveationConfig {
    /// Blob standard deviation, normalized image units.
    pub sigma_fovea: f64,
    /// Low-pass standard deviation as a fraction of the longer image side.
    pub sigma_blur: f64,
    /// Forgetting coefficient of the perceptual memory.
    pub gamma: f64,
}

impl Default for FoveationConfig {
    fn default() -> Self {
        FoveationConfig {
            sigma_fovea: 0.1,
            sigma_blur: 0.05,
            gamma: 0.3,
        }
    }
}

impl FoveationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_fovea > 0.0 && self.sigma_fovea.is_finite()) {
            return Err(NevaError::invalid(format!(
                "sigma_fovea must be positive, got {}",
                self.sigma_fovea
            )));
        }
        if !(self.sigma_blur > 0.0 && self.sigma_blur.is_finite()) {
            return Err(NevaError::invalid(format!(
                "sigma_blur must be positive, got {}",
                self.sigma_blur
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(NevaError::invalid(format!(
                "gamma must lie in [0, 1], got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Normalized 1-D Gaussian taps for offsets `-radius..=radius`.
pub fn gaussian_kernel_1d(sigma_px: f64) -> Array1<f64> {
    let radius = (KERNEL_TRUNCATE * sigma_px).ceil().max(0.0) as usize;
    let mut taps = Array1::from_shape_fn(2 * radius + 1, |i| {
        let d = i as f64 - radius as f64;
        (-d * d / (2.0 * sigma_px * sigma_px)).exp()
    });
    let total = taps.sum();
    taps /= total;
    taps
}

/// Mirror an out-of-range index back into `0..n` without repeating the edge sample.
fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut k = i.rem_euclid(period);
    if k >= n as isize {
        k = period - k;
    }
    k as usize
}

fn convolve_axis(input: &Array3<f64>, taps: &Array1<f64>, axis: usize) -> Array3<f64> {
    let radius = (taps.len() / 2) as isize;
    let (h, w, c) = input.dim();
    let n = if axis == 0 { h } else { w };
    Array3::from_shape_fn((h, w, c), |(i, j, ch)| {
        let pos = if axis == 0 { i } else { j } as isize;
        let mut acc = 0.0;
        for (t, &wt) in taps.iter().enumerate() {
            let src = reflect_index(pos + t as isize - radius, n);
            acc += wt * if axis == 0 { input[[src, j, ch]] } else { input[[i, src, ch]] };
        }
        acc
    })
}

/// Low-pass copy of `s`: per-channel separable Gaussian blur with reflect padding.
pub fn blur_stimulus(s: &Stimulus, sigma_blur: f64) -> Result<Stimulus> {
    if !(sigma_blur > 0.0 && sigma_blur.is_finite()) {
        return Err(NevaError::invalid(format!(
            "sigma_blur must be positive, got {sigma_blur}"
        )));
    }
    let sigma_px = sigma_blur * s.height().max(s.width()) as f64;
    let taps = gaussian_kernel_1d(sigma_px);
    let rows = convolve_axis(s.pixels(), &taps, 0);
    let mut out = convolve_axis(&rows, &taps, 1);
    // Convex combinations stay in range up to rounding.
    out.mapv_inplace(|v| v.clamp(0.0, 1.0));
    Ok(Stimulus::from_valid(out))
}

/// Normalized coordinate of pixel center `index` along an axis of length `n`.
#[inline]
pub fn pixel_center(index: usize, n: usize) -> f64 {
    (index as f64 + 0.5) / n as f64
}

/// Unnormalized Gaussian `exp(-|p - xi|^2 / (2 sigma^2))` on the pixel-center grid.
pub fn gaussian_blob(h: usize, w: usize, xi: Fixation, sigma_fovea: f64) -> Array2<f64> {
    let inv = 1.0 / (2.0 * sigma_fovea * sigma_fovea);
    Array2::from_shape_fn((h, w), |(i, j)| {
        let dx = pixel_center(j, w) - xi.x;
        let dy = pixel_center(i, h) - xi.y;
        (-(dx * dx + dy * dy) * inv).exp()
    })
}

/// Pulls a gradient on the blob back to the fixation: returns `(dL/dx, dL/dy)`.
pub fn gaussian_blob_vjp(
    blob: &Array2<f64>,
    xi: Fixation,
    sigma_fovea: f64,
    grad_blob: &Array2<f64>,
) -> [f64; 2] {
    let (h, w) = blob.dim();
    let inv_var = 1.0 / (sigma_fovea * sigma_fovea);
    let mut gx = 0.0;
    let mut gy = 0.0;
    for ((i, j), &b) in blob.indexed_iter() {
        let g = grad_blob[[i, j]] * b * inv_var;
        gx += g * (pixel_center(j, w) - xi.x);
        gy += g * (pixel_center(i, h) - xi.y);
    }
    [gx, gy]
}

/// `mask * sharp + (1 - mask) * coarse`, broadcasting the mask over channels.
fn blend(mask: &Array2<f64>, sharp: &Stimulus, coarse: &Stimulus) -> Array3<f64> {
    let mut out = coarse.pixels().clone();
    Zip::from(out.lanes_mut(Axis(2)))
        .and(sharp.pixels().lanes(Axis(2)))
        .and(mask)
        .for_each(|mut o, s, &m| {
            o.zip_mut_with(&s, |c, &sv| *c = m * sv + (1.0 - m) * *c);
        });
    out
}

/// Single-fixation foveated rendering of `s` around `xi`.
pub fn foveate(
    s: &Stimulus,
    coarse: &Stimulus,
    xi: Fixation,
    cfg: &FoveationConfig,
) -> Result<Stimulus> {
    if s.shape() != coarse.shape() {
        return Err(NevaError::invalid(format!(
            "stimulus shape {:?} does not match coarse shape {:?}",
            s.shape(),
            coarse.shape()
        )));
    }
    let blob = gaussian_blob(s.height(), s.width(), xi, cfg.sigma_fovea);
    Ok(Stimulus::from_valid(blend(&blob, s, coarse)))
}

/// Cumulative perceived information for one stimulus.
///
/// `accumulator` holds the unclipped discounted sum of past blobs; `mask` is its
/// clip to `[0, 1]` and `perceived` the corresponding blend of sharp and coarse.
#[derive(Debug, Clone)]
pub struct PerceptualState {
    config: FoveationConfig,
    stimulus: Arc<Stimulus>,
    coarse: Arc<Stimulus>,
    accumulator: Array2<f64>,
    mask: Array2<f64>,
    perceived: Stimulus,
    step: usize,
}

impl PerceptualState {
    pub fn config(&self) -> &FoveationConfig {
        &self.config
    }

    pub fn stimulus(&self) -> &Stimulus {
        &self.stimulus
    }

    pub fn coarse(&self) -> &Stimulus {
        &self.coarse
    }

    pub fn accumulator(&self) -> &Array2<f64> {
        &self.accumulator
    }

    pub fn mask(&self) -> &Array2<f64> {
        &self.mask
    }

    pub fn perceived(&self) -> &Stimulus {
        &self.perceived
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// Pulls a gradient on `perceived` (HWC layout) back to the accumulator.
    ///
    /// Clipped pixels contribute nothing; elsewhere the derivative of the blend
    /// with respect to the mask is `sharp - coarse`, summed over channels.
    pub fn accumulator_vjp(&self, grad_perceived: &Array3<f64>) -> Array2<f64> {
        let (h, w, _) = self.stimulus.shape();
        let sharp = self.stimulus.pixels();
        let coarse = self.coarse.pixels();
        Array2::from_shape_fn((h, w), |(i, j)| {
            let a = self.accumulator[[i, j]];
            if a <= 0.0 || a >= 1.0 {
                return 0.0;
            }
            let mut g = 0.0;
            for c in 0..sharp.dim().2 {
                g += grad_perceived[[i, j, c]] * (sharp[[i, j, c]] - coarse[[i, j, c]]);
            }
            g
        })
    }
}

/// Memory before any fixation: nothing is sharp yet.
pub fn init_state(s: &Stimulus, cfg: &FoveationConfig) -> Result<PerceptualState> {
    cfg.validate()?;
    let coarse = blur_stimulus(s, cfg.sigma_blur)?;
    let (h, w, _) = s.shape();
    Ok(PerceptualState {
        config: *cfg,
        stimulus: Arc::new(s.clone()),
        perceived: coarse.clone(),
        coarse: Arc::new(coarse),
        accumulator: Array2::zeros((h, w)),
        mask: Array2::zeros((h, w)),
        step: 0,
    })
}

/// Applies one fixation: `acc' = gamma * acc + blob(xi)`, `mask' = clip(acc', 0, 1)`.
pub fn update_state(state: &PerceptualState, xi: Fixation) -> PerceptualState {
    let (h, w, _) = state.stimulus.shape();
    let blob = gaussian_blob(h, w, xi, state.config.sigma_fovea);
    let gamma = state.config.gamma;
    let accumulator = Zip::from(&state.accumulator)
        .and(&blob)
        .map_collect(|&a, &b| gamma * a + b);
    let mask = accumulator.mapv(|a| a.clamp(0.0, 1.0));
    let perceived = Stimulus::from_valid(blend(&mask, &state.stimulus, &state.coarse));
    PerceptualState {
        config: state.config,
        stimulus: Arc::clone(&state.stimulus),
        coarse: Arc::clone(&state.coarse),
        accumulator,
        mask,
        perceived,
        step: state.step + 1,
    }
}

/// Gradient of a scalar with respect to the fixation that produced `next` from `prev`,
/// holding the earlier memory fixed.
pub fn fixation_vjp(next: &PerceptualState, xi: Fixation, grad_perceived: &Array3<f64>) -> [f64; 2] {
    let (h, w, _) = next.stimulus.shape();
    let blob = gaussian_blob(h, w, xi, next.config.sigma_fovea);
    let grad_acc = next.accumulator_vjp(grad_perceived);
    gaussian_blob_vjp(&blob, xi, next.config.sigma_fovea, &grad_acc)
}
