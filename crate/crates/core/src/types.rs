//! Shared domain types: stimuli, fixations and scanpaths.

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{NevaError, Result};

/// Smallest accepted spatial extent; blur kernels and 3x3 convolutions must fit.
pub const MIN_SIDE: usize = 8;

/// An image with real pixel values in `[0, 1]`, stored as `(height, width, channels)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stimulus {
    pixels: Array3<f64>,
}

impl Stimulus {
    pub fn new(pixels: Array3<f64>) -> Result<Self> {
        let (h, w, c) = pixels.dim();
        if h < MIN_SIDE || w < MIN_SIDE {
            return Err(NevaError::invalid(format!(
                "stimulus must be at least {MIN_SIDE}x{MIN_SIDE}, got {h}x{w}"
            )));
        }
        if c != 1 && c != 3 {
            return Err(NevaError::invalid(format!(
                "stimulus must have 1 or 3 channels, got {c}"
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(NevaError::invalid(format!(
                "pixel value {v} outside [0, 1]"
            )));
        }
        Ok(Stimulus {
            pixels: pixels.as_standard_layout().into_owned(),
        })
    }

    /// Wraps an array already known to satisfy the invariants (internal blends and filters).
    pub(crate) fn from_valid(pixels: Array3<f64>) -> Self {
        debug_assert!(pixels.iter().all(|v| (0.0..=1.0).contains(v)));
        Stimulus {
            pixels: pixels.as_standard_layout().into_owned(),
        }
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Stimulus::new(Array3::from_elem((height, width, channels), value))
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        f: impl FnMut((usize, usize, usize)) -> f64,
    ) -> Result<Self> {
        Stimulus::new(Array3::from_shape_fn((height, width, channels), f))
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn channels(&self) -> usize {
        self.pixels.dim().2
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.pixels.dim()
    }

    pub fn pixels(&self) -> &Array3<f64> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Array3<f64> {
        self.pixels
    }

    /// Channel-first copy `(channels, height, width)`, the layout networks consume.
    pub fn to_chw(&self) -> Array3<f64> {
        self.pixels
            .view()
            .permuted_axes([2, 0, 1])
            .as_standard_layout()
            .into_owned()
    }

    pub fn from_chw(chw: &Array3<f64>) -> Result<Self> {
        Stimulus::new(chw.view().permuted_axes([1, 2, 0]).to_owned())
    }

    /// Mean over channels, `(height, width)`.
    pub fn luminance(&self) -> Array2<f64> {
        self.pixels.mean_axis(Axis(2)).expect("channel axis is non-empty")
    }
}

/// A gaze location in normalized image coordinates; `(0, 0)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fixation {
    pub x: f64,
    pub y: f64,
}

impl Fixation {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            return Err(NevaError::invalid(format!(
                "fixation ({x}, {y}) outside the unit square"
            )));
        }
        Ok(Fixation { x, y })
    }

    pub fn center() -> Self {
        Fixation { x: 0.5, y: 0.5 }
    }

    /// Clamps each coordinate into `[0, 1]`.
    pub fn clamped(x: f64, y: f64) -> Self {
        Fixation {
            x: x.clamp(0.0, 1.0),
            y: y.clamp(0.0, 1.0),
        }
    }

    pub fn distance(&self, other: &Fixation) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// An ordered, non-empty sequence of fixations on one stimulus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scanpath {
    pub stimulus_id: String,
    pub fixations: Vec<Fixation>,
}

impl Scanpath {
    pub fn new(stimulus_id: impl Into<String>, fixations: Vec<Fixation>) -> Result<Self> {
        if fixations.is_empty() {
            return Err(NevaError::invalid("scanpath must contain at least one fixation"));
        }
        if let Some(f) = fixations
            .iter()
            .find(|f| !(0.0..=1.0).contains(&f.x) || !(0.0..=1.0).contains(&f.y))
        {
            return Err(NevaError::invalid(format!(
                "fixation ({}, {}) outside the unit square",
                f.x, f.y
            )));
        }
        Ok(Scanpath {
            stimulus_id: stimulus_id.into(),
            fixations,
        })
    }

    pub fn len(&self) -> usize {
        self.fixations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixations.is_empty()
    }

    /// First `n` fixations (or all of them when shorter).
    pub fn truncated(&self, n: usize) -> Scanpath {
        Scanpath {
            stimulus_id: self.stimulus_id.clone(),
            fixations: self.fixations.iter().take(n.max(1)).copied().collect(),
        }
    }
}
