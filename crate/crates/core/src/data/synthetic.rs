//! Desk-scale "quadrant shapes" dataset and its oracle viewer scanpaths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{NevaError, Result};
use crate::tasks::{LabeledStimulus, Target};
use crate::types::{Fixation, Scanpath, Stimulus};

pub const SHAPE_CLASSES: [&str; 3] = ["disk", "square", "cross"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    QuadrantShapes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub kind: SyntheticKind,
    /// Side length of the square images, in pixels.
    pub size: usize,
    pub channels: usize,
    /// Half extent of every shape, in pixels; a shape fits a `(2r+1)^2` box.
    pub shape_radius: usize,
    /// Upper bound of the uniform background noise.
    pub background_max: f64,
    /// Lower bound of the per-channel shape intensity.
    pub shape_min: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            kind: SyntheticKind::QuadrantShapes,
            size: 32,
            channels: 3,
            shape_radius: 4,
            background_max: 0.5,
            shape_min: 0.7,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < 16 || self.size % 2 != 0 {
            return Err(NevaError::invalid("synthetic size must be even and at least 16"));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(NevaError::invalid("synthetic channels must be 1 or 3"));
        }
        if self.shape_radius == 0 || 2 * self.shape_radius + 1 > self.size / 2 {
            return Err(NevaError::invalid("shape does not fit inside a quadrant"));
        }
        if !(0.0..=1.0).contains(&self.background_max) || !(0.0..=1.0).contains(&self.shape_min) {
            return Err(NevaError::invalid("intensities must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// One generated image with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub id: String,
    pub item: LabeledStimulus,
    /// 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right.
    pub quadrant: usize,
    /// Shape center in pixels `(row, col)`.
    pub center_px: (usize, usize),
    pub radius_px: usize,
}

impl SyntheticSample {
    pub fn label(&self) -> usize {
        match self.item.target {
            Target::Class(c) => c,
            Target::Image(_) => unreachable!("synthetic samples carry class targets"),
        }
    }

    /// Shape center in normalized coordinates (pixel-center convention).
    pub fn center(&self) -> Fixation {
        let n = self.item.stimulus.width() as f64;
        let m = self.item.stimulus.height() as f64;
        Fixation {
            x: (self.center_px.1 as f64 + 0.5) / n,
            y: (self.center_px.0 as f64 + 0.5) / m,
        }
    }
}

/// Quadrant index of a normalized point.
pub fn quadrant_of(f: Fixation) -> usize {
    (if f.y >= 0.5 { 2 } else { 0 }) + usize::from(f.x >= 0.5)
}

/// Whether pixel offset `(di, dj)` from the center belongs to shape `class`.
pub fn shape_contains(class: usize, di: i64, dj: i64, radius: i64) -> bool {
    match class {
        // disk
        0 => di * di + dj * dj <= radius * radius,
        // square, side 2r - 1
        1 => di.abs() < radius && dj.abs() < radius,
        // cross, arms of width 3 spanning the full box
        2 => (di.abs() <= 1 && dj.abs() <= radius) || (dj.abs() <= 1 && di.abs() <= radius),
        _ => false,
    }
}

/// Generates `n` images, each holding one shape in a uniformly random quadrant on noise.
pub fn make_synthetic_dataset(n: usize, cfg: &SyntheticConfig, seed: u64) -> Result<Vec<SyntheticSample>> {
    if n == 0 {
        return Err(NevaError::invalid("dataset size must be at least 1"));
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = cfg.size;
    let half = size / 2;
    let r = cfg.shape_radius;
    let mut out = Vec::with_capacity(n);
    for idx in 0..n {
        let class = rng.random_range(0..SHAPE_CLASSES.len());
        let quadrant = rng.random_range(0..4);
        let row0 = if quadrant >= 2 { half } else { 0 };
        let col0 = if quadrant % 2 == 1 { half } else { 0 };
        let ci = row0 + rng.random_range(r..half - r);
        let cj = col0 + rng.random_range(r..half - r);
        let color: Vec<f64> = (0..cfg.channels)
            .map(|_| rng.random_range(cfg.shape_min..=1.0))
            .collect();
        let mut pixels = ndarray::Array3::zeros((size, size, cfg.channels));
        for ((i, j, c), v) in pixels.indexed_iter_mut() {
            let di = i as i64 - ci as i64;
            let dj = j as i64 - cj as i64;
            let noise = rng.random_range(0.0..=cfg.background_max);
            *v = if shape_contains(class, di, dj, r as i64) {
                color[c]
            } else {
                noise
            };
        }
        out.push(SyntheticSample {
            id: format!("syn_{idx:05}"),
            item: LabeledStimulus {
                stimulus: Stimulus::new(pixels)?,
                target: Target::Class(class),
            },
            quadrant,
            center_px: (ci, cj),
            radius_px: r,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleViewerConfig {
    pub subjects: usize,
    /// Largest saccade amplitude, normalized units.
    pub saccade: f64,
    /// Std of the per-subject perturbation of every fixation.
    pub jitter: f64,
}

impl Default for OracleViewerConfig {
    fn default() -> Self {
        OracleViewerConfig {
            subjects: 5,
            saccade: 0.2,
            jitter: 0.03,
        }
    }
}

/// Oracle viewers: the shortest saccade path from the image center to the
/// object, then dwelling on it. Each subject perturbs that path independently.
pub fn oracle_scanpaths(
    sample: &SyntheticSample,
    length: usize,
    cfg: &OracleViewerConfig,
    seed: u64,
) -> Result<Vec<(String, Scanpath)>> {
    if length == 0 || cfg.subjects == 0 {
        return Err(NevaError::invalid("oracle scanpaths need length and subjects >= 1"));
    }
    if !(cfg.saccade > 0.0) || !(cfg.jitter >= 0.0) {
        return Err(NevaError::invalid("saccade must be positive and jitter non-negative"));
    }
    let target = sample.center();
    let mut path = Vec::with_capacity(length);
    let mut pos = Fixation::center();
    for _ in 0..length {
        let d = pos.distance(&target);
        pos = if d <= cfg.saccade {
            target
        } else {
            let t = cfg.saccade / d;
            Fixation {
                x: pos.x + t * (target.x - pos.x),
                y: pos.y + t * (target.y - pos.y),
            }
        };
        path.push(pos);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cfg.jitter).map_err(|e| NevaError::invalid(e.to_string()))?;
    (0..cfg.subjects)
        .map(|s| {
            let fixations = path
                .iter()
                .map(|f| Fixation::clamped(f.x + noise.sample(&mut rng), f.y + noise.sample(&mut rng)))
                .collect();
            Ok((format!("oracle_{s:02}"), Scanpath::new(sample.id.clone(), fixations)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_reproducible() {
        let cfg = SyntheticConfig::default();
        let a = make_synthetic_dataset(20, &cfg, 3).unwrap();
        let b = make_synthetic_dataset(20, &cfg, 3).unwrap();
        assert_eq!(a, b);
        let c = make_synthetic_dataset(20, &cfg, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_size_is_rejected() {
        assert!(make_synthetic_dataset(0, &SyntheticConfig::default(), 0).is_err());
    }

    #[test]
    fn classes_are_balanced() {
        let data = make_synthetic_dataset(3000, &SyntheticConfig::default(), 11).unwrap();
        let mut hist = [0usize; 3];
        for s in &data {
            hist[s.label()] += 1;
        }
        for count in hist {
            assert!((count as f64 - 1000.0).abs() <= 100.0, "{hist:?}");
        }
    }

    #[test]
    fn shapes_stay_inside_their_quadrant() {
        let cfg = SyntheticConfig::default();
        let data = make_synthetic_dataset(200, &cfg, 5).unwrap();
        let half = cfg.size / 2;
        for s in &data {
            let r = s.radius_px as i64;
            let (ci, cj) = (s.center_px.0 as i64, s.center_px.1 as i64);
            for di in -r..=r {
                for dj in -r..=r {
                    if !shape_contains(s.label(), di, dj, r) {
                        continue;
                    }
                    let (i, j) = ((ci + di) as usize, (cj + dj) as usize);
                    let q = usize::from(i >= half) * 2 + usize::from(j >= half);
                    assert_eq!(q, s.quadrant);
                }
            }
            assert_eq!(quadrant_of(s.center()), s.quadrant);
        }
    }

    #[test]
    fn shapes_have_similar_area() {
        let area = |class| {
            let mut n = 0;
            for di in -4..=4 {
                for dj in -4..=4 {
                    n += usize::from(shape_contains(class, di, dj, 4));
                }
            }
            n
        };
        assert_eq!(area(0), 49);
        assert_eq!(area(1), 49);
        assert_eq!(area(2), 45);
    }

    #[test]
    fn oracle_paths_reach_the_object() {
        let data = make_synthetic_dataset(10, &SyntheticConfig::default(), 8).unwrap();
        let cfg = OracleViewerConfig { jitter: 0.0, ..Default::default() };
        for s in &data {
            let paths = oracle_scanpaths(s, 10, &cfg, 1).unwrap();
            assert_eq!(paths.len(), cfg.subjects);
            for (_, sp) in &paths {
                assert_eq!(sp.len(), 10);
                assert_eq!(*sp.fixations.last().unwrap(), s.center());
                for w in sp.fixations.windows(2) {
                    assert!(w[0].distance(&w[1]) <= cfg.saccade + 1e-12);
                }
            }
        }
    }
}
