//! Reference scanpath generators: uniform random, center prior, and a
//! simplified saliency map followed by winner-take-all with inhibition of return.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{NevaError, Result};
use crate::foveation::{blur_stimulus, pixel_center};
use crate::types::{Fixation, Scanpath, Stimulus};

pub use crate::metrics::human_baseline;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Std of the center prior, normalized units.
    pub sigma_center: f64,
    /// Inhibition-of-return radius, normalized units.
    pub ior_radius: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            sigma_center: 0.15,
            ior_radius: 0.1,
        }
    }
}

/// Seed for one image, stable under reordering or subsetting of a dataset.
pub fn derive_seed(seed: u64, key: &str) -> u64 {
    // FNV-1a over the key, mixed with the base seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn check_length(length: usize) -> Result<()> {
    if length == 0 {
        return Err(NevaError::invalid("scanpath length must be at least 1"));
    }
    Ok(())
}

/// `length` fixations drawn i.i.d. uniformly on the unit square.
pub fn random_scanpath(stimulus_id: &str, length: usize, seed: u64) -> Result<Scanpath> {
    check_length(length)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fixations = (0..length)
        .map(|_| Fixation {
            x: rng.random::<f64>(),
            y: rng.random::<f64>(),
        })
        .collect();
    Scanpath::new(stimulus_id, fixations)
}

/// `length` fixations from an isotropic Gaussian at the image center, redrawn
/// until they fall inside the unit square.
pub fn center_scanpath(stimulus_id: &str, length: usize, sigma_center: f64, seed: u64) -> Result<Scanpath> {
    check_length(length)?;
    if !(sigma_center > 0.0 && sigma_center.is_finite()) {
        return Err(NevaError::invalid("sigma_center must be positive"));
    }
    let normal = Normal::new(0.5, sigma_center).map_err(|e| NevaError::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || loop {
        let v = normal.sample(&mut rng);
        if (0.0..=1.0).contains(&v) {
            break v;
        }
    };
    let fixations = (0..length).map(|_| Fixation { x: draw(), y: draw() }).collect();
    Scanpath::new(stimulus_id, fixations)
}

/// Non-negative map, max-normalized to 1 unless identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    values: Array2<f64>,
}

impl SaliencyMap {
    /// Normalizes `values` by their maximum; rejects negative or non-finite entries.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(NevaError::invalid("saliency values must be finite and non-negative"));
        }
        let max = values.iter().copied().fold(0.0, f64::max);
        let values = if max > 0.0 { values / max } else { values };
        Ok(SaliencyMap { values })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// Center and surround scales of the center-surround terms, as fractions of the longer side.
const DOG_SCALES: [(f64, f64); 2] = [(0.02, 0.08), (0.04, 0.16)];
const CONTRAST_SCALE: f64 = 0.05;

/// Simplified Itti-style map: rectified per-channel differences of Gaussians
/// at two scales plus local luminance contrast, summed and max-normalized.
pub fn saliency_itti_lite(s: &Stimulus) -> SaliencyMap {
    let (h, w, c) = s.shape();
    let mut total = Array2::<f64>::zeros((h, w));
    for (center, surround) in DOG_SCALES {
        let a = blur_stimulus(s, center).expect("positive scale");
        let b = blur_stimulus(s, surround).expect("positive scale");
        for ch in 0..c {
            let diff = &a.pixels().index_axis(ndarray::Axis(2), ch) - &b.pixels().index_axis(ndarray::Axis(2), ch);
            total += &diff.mapv(f64::abs);
        }
    }

    // Local standard deviation of luminance.
    let lum = s.luminance();
    let as_stimulus = |m: Array2<f64>| Stimulus::new(m.insert_axis(ndarray::Axis(2))).expect("values in [0, 1]");
    let mean = blur_stimulus(&as_stimulus(lum.clone()), CONTRAST_SCALE).expect("positive scale");
    let mean_sq = blur_stimulus(&as_stimulus(lum.mapv(|v| v * v)), CONTRAST_SCALE).expect("positive scale");
    let mean = mean.pixels().index_axis(ndarray::Axis(2), 0).to_owned();
    let mean_sq = mean_sq.pixels().index_axis(ndarray::Axis(2), 0).to_owned();
    ndarray::Zip::from(&mut total)
        .and(&mean)
        .and(&mean_sq)
        .for_each(|t, &m, &m2| {
            // Variances below rounding level are flat regions.
            let var = m2 - m * m;
            if var > 1e-12 {
                *t += var.sqrt();
            }
        });

    // Differences of identical blurs leave rounding residue on flat images.
    let tiny = 1e-9 * c as f64;
    total.mapv_inplace(|v| if v < tiny { 0.0 } else { v });
    SaliencyMap::new(total).expect("rectified terms are non-negative")
}

#[derive(Debug, Clone, PartialEq)]
pub struct WtaScanpath {
    pub scanpath: Scanpath,
    /// The map was identically zero, so every fixation is the image center.
    pub center_fallback: bool,
}

/// Winner-take-all: repeatedly fixate the maximum of the working map, then
/// zero a disk of `ior_radius` around it.
///
/// Ties go to the first maximum in row-major order. Once the whole map has
/// been suppressed the working map is restored and inhibition starts over.
pub fn wta_scanpath(sal: &SaliencyMap, stimulus_id: &str, length: usize, ior_radius: f64) -> Result<WtaScanpath> {
    check_length(length)?;
    if !(ior_radius > 0.0 && ior_radius.is_finite()) {
        return Err(NevaError::invalid("ior_radius must be positive"));
    }
    if sal.is_zero() {
        log::warn!("saliency map of {stimulus_id} is identically zero; falling back to the center");
        return Ok(WtaScanpath {
            scanpath: Scanpath::new(stimulus_id, vec![Fixation::center(); length])?,
            center_fallback: true,
        });
    }
    let (h, w) = sal.values.dim();
    let mut working = sal.values.clone();
    let mut fixations = Vec::with_capacity(length);
    let r2 = ior_radius * ior_radius;
    for _ in 0..length {
        if working.iter().all(|&v| v <= 0.0) {
            working.assign(&sal.values);
        }
        let mut best = (0, 0, f64::NEG_INFINITY);
        for ((i, j), &v) in working.indexed_iter() {
            if v > best.2 {
                best = (i, j, v);
            }
        }
        let f = Fixation {
            x: pixel_center(best.1, w),
            y: pixel_center(best.0, h),
        };
        for ((i, j), v) in working.indexed_iter_mut() {
            let dx = pixel_center(j, w) - f.x;
            let dy = pixel_center(i, h) - f.y;
            if dx * dx + dy * dy <= r2 {
                *v = 0.0;
            }
        }
        fixations.push(f);
    }
    Ok(WtaScanpath {
        scanpath: Scanpath::new(stimulus_id, fixations)?,
        center_fallback: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_scanpath_is_seeded_and_centered() {
        let a = random_scanpath("s", 10, 7).unwrap();
        assert_eq!(a, random_scanpath("s", 10, 7).unwrap());
        assert_ne!(a, random_scanpath("s", 10, 8).unwrap());
        let big = random_scanpath("s", 100_000, 1).unwrap();
        let n = big.len() as f64;
        let mx = big.fixations.iter().map(|f| f.x).sum::<f64>() / n;
        let my = big.fixations.iter().map(|f| f.y).sum::<f64>() / n;
        assert!((mx - 0.5).abs() < 0.01 && (my - 0.5).abs() < 0.01);
        assert!(random_scanpath("s", 0, 1).is_err());
    }

    #[test]
    fn derived_seeds_depend_on_key_and_seed() {
        assert_eq!(derive_seed(3, "img_1"), derive_seed(3, "img_1"));
        assert_ne!(derive_seed(3, "img_1"), derive_seed(3, "img_2"));
        assert_ne!(derive_seed(3, "img_1"), derive_seed(4, "img_1"));
    }

    #[test]
    fn center_scanpath_matches_its_std() {
        let sigma = 0.1;
        let big = center_scanpath("s", 100_000, sigma, 3).unwrap();
        let n = big.len() as f64;
        let xs: Vec<f64> = big.fixations.iter().map(|f| f.x).collect();
        let mean = xs.iter().sum::<f64>() / n;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((std - sigma).abs() / sigma < 0.05, "{std}");
        let tight = center_scanpath("s", 100, 1e-9, 3).unwrap();
        assert!(tight.fixations.iter().all(|f| f.distance(&Fixation::center()) < 1e-6));
        assert!(center_scanpath("s", 5, 0.0, 3).is_err());
        assert!(center_scanpath("s", 5, f64::NAN, 3).is_err());
    }

    #[test]
    fn constant_image_has_zero_saliency() {
        let s = Stimulus::constant(20, 24, 3, 0.4).unwrap();
        assert!(saliency_itti_lite(&s).is_zero());
    }

    #[test]
    fn disk_saliency_peaks_near_the_disk() {
        let (ci, cj, r) = (20.0, 12.0, 4.0);
        let s = Stimulus::from_fn(32, 32, 3, |(i, j, _)| {
            let d = ((i as f64 - ci).powi(2) + (j as f64 - cj).powi(2)).sqrt();
            if d <= r { 1.0 } else { 0.0 }
        })
        .unwrap();
        let sal = saliency_itti_lite(&s);
        let v = sal.values();
        assert!(v.iter().all(|&x| (0.0..=1.0).contains(&x)));
        assert!(v.iter().any(|&x| x == 1.0));
        let ((i, j), _) = v
            .indexed_iter()
            .fold(((0, 0), -1.0), |b, (p, &x)| if x > b.1 { (p, x) } else { b });
        let d = ((i as f64 - ci).powi(2) + (j as f64 - cj).powi(2)).sqrt();
        assert!(d <= r + 1.5, "peak at ({i}, {j})");
    }

    #[test]
    fn wta_visits_peaks_in_order() {
        let mut m = Array2::zeros((20, 20));
        m[[3, 4]] = 1.0;
        m[[15, 12]] = 0.8;
        m[[15, 13]] = 0.1;
        let sal = SaliencyMap::new(m).unwrap();
        let out = wta_scanpath(&sal, "s", 3, 0.1).unwrap();
        assert!(!out.center_fallback);
        let f = &out.scanpath.fixations;
        assert_eq!(f[0], Fixation { x: 4.5 / 20.0, y: 3.5 / 20.0 });
        assert_eq!(f[1], Fixation { x: 12.5 / 20.0, y: 15.5 / 20.0 });
        // 0.1 sits next to the second peak and was suppressed with it; the
        // map is exhausted, so inhibition restarts at the global maximum.
        assert_eq!(f[2], f[0]);
        assert_eq!(wta_scanpath(&sal, "s", 1, 0.1).unwrap().scanpath.fixations, vec![f[0]]);
        assert_eq!(wta_scanpath(&sal, "s", 3, 0.1).unwrap(), out);
    }

    #[test]
    fn wta_ties_break_row_major() {
        let mut m = Array2::zeros((10, 10));
        m[[2, 7]] = 1.0;
        m[[5, 1]] = 1.0;
        let out = wta_scanpath(&SaliencyMap::new(m).unwrap(), "s", 1, 0.1).unwrap();
        assert_eq!(out.scanpath.fixations[0], Fixation { x: 0.75, y: 0.25 });
    }

    #[test]
    fn zero_map_falls_back_to_center() {
        let sal = SaliencyMap::new(Array2::zeros((8, 8))).unwrap();
        let out = wta_scanpath(&sal, "s", 4, 0.1).unwrap();
        assert!(out.center_fallback);
        assert_eq!(out.scanpath.fixations, vec![Fixation::center(); 4]);
        assert!(wta_scanpath(&sal, "s", 4, 0.0).is_err());
    }

    #[test]
    fn saliency_rejects_negative_values() {
        let mut m = Array2::zeros((8, 8));
        m[[0, 0]] = -0.1;
        assert!(SaliencyMap::new(m).is_err());
    }
}
