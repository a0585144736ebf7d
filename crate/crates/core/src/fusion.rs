//! Temporal stabilization of root-class segmentations.
//!
//! Root channels accumulate as a^t = s^t + alpha * a^(t-1), so a structure
//! seen recently keeps counting as present through short occlusions
//! (droplets, condensation). Only classes 1 and 2 are averaged; shoot
//! classes pass through untouched.

use crate::error::{PipelineError, Result};
use crate::grid::{connected_components, BinaryGrid};
use crate::mask::{LabelMask, CLASS_LATERAL_ROOT, CLASS_MAIN_ROOT};

/// Running accumulators for the two root channels.
#[derive(Debug, Clone)]
pub struct AccumulatorState {
    pub alpha: f64,
    accum_main: Vec<f64>,
    accum_lateral: Vec<f64>,
    width: usize,
    height: usize,
    pub frame_count: usize,
}

impl AccumulatorState {
    pub fn new(alpha: f64) -> Self {
        assert!((0.0..1.0).contains(&alpha), "alpha must be in [0, 1)");
        Self {
            alpha,
            accum_main: Vec::new(),
            accum_lateral: Vec::new(),
            width: 0,
            height: 0,
            frame_count: 0,
        }
    }

    /// Scales the 15-minute reference alpha to an arbitrary frame interval
    /// so the memory half-life stays time-invariant.
    pub fn alpha_for_interval(alpha_ref: f64, interval_hours: f64) -> f64 {
        alpha_ref.powf(interval_hours / 0.25)
    }

    pub fn accum_main(&self, x: usize, y: usize) -> f64 {
        self.accum_main[y * self.width + x]
    }

    pub fn accum_lateral(&self, x: usize, y: usize) -> f64 {
        self.accum_lateral[y * self.width + x]
    }

    /// Folds one frame into the accumulators.
    pub fn accumulate(&mut self, mask: &LabelMask) -> Result<()> {
        if self.frame_count == 0 {
            self.width = mask.width;
            self.height = mask.height;
            self.accum_main = vec![0.0; mask.width * mask.height];
            self.accum_lateral = vec![0.0; mask.width * mask.height];
        } else if mask.width != self.width || mask.height != self.height {
            return Err(PipelineError::DimensionMismatch {
                expected_w: self.width,
                expected_h: self.height,
                got_w: mask.width,
                got_h: mask.height,
            });
        }
        for (i, &label) in mask.labels().iter().enumerate() {
            let s_main = (label == CLASS_MAIN_ROOT) as u8 as f64;
            let s_lat = (label == CLASS_LATERAL_ROOT) as u8 as f64;
            self.accum_main[i] = s_main + self.alpha * self.accum_main[i];
            self.accum_lateral[i] = s_lat + self.alpha * self.accum_lateral[i];
        }
        self.frame_count += 1;
        Ok(())
    }

    /// Asserts the root classes wherever their accumulator clears the
    /// threshold; ties between the two channels go to the higher value.
    /// Classes 3-6 are never altered.
    pub fn fuse(&self, mask: &LabelMask, threshold: f64) -> LabelMask {
        let mut out = mask.clone();
        for y in 0..mask.height {
            for x in 0..mask.width {
                let label = mask.get(x, y);
                if label > CLASS_LATERAL_ROOT {
                    continue;
                }
                let am = self.accum_main(x, y);
                let al = self.accum_lateral(x, y);
                if am >= threshold || al >= threshold {
                    out.set(
                        x,
                        y,
                        if am >= al {
                            CLASS_MAIN_ROOT
                        } else {
                            CLASS_LATERAL_ROOT
                        },
                    );
                } else if label == CLASS_MAIN_ROOT || label == CLASS_LATERAL_ROOT {
                    // below-threshold transient
                    out.set(x, y, 0);
                }
            }
        }
        out
    }
}

/// Morphological closing followed by removal of 8-connected components
/// below `min_component_px`.
pub fn clean_binary(mask: &BinaryGrid, min_component_px: usize) -> BinaryGrid {
    let closed = mask.close3x3();
    let mut out = BinaryGrid::new(mask.width, mask.height);
    for comp in connected_components(&closed) {
        if comp.area() >= min_component_px {
            for (x, y) in comp.pixels {
                out.set(x, y, true);
            }
        }
    }
    out
}
