//! Experiment configuration: one JSON document selecting a mode and
//! carrying every module's tunables with documented defaults.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{PipelineError, Result};
use crate::mask::RoiSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Standard,
    Screening,
    Eval,
    Fpca,
}

/// One experimental group. Standard mode lists member plant ids;
/// screening mode names a plate region (x, y, w, h) in pixels.
#[derive(Debug, Clone, Deserialize)]
pub struct GroupSpec {
    pub name: String,
    #[serde(default)]
    pub plants: Vec<String>,
    #[serde(default)]
    pub region: Option<(usize, usize, usize, usize)>,
    /// manual seed count override for germination percentages
    #[serde(default)]
    pub expected_seed_count: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct FusionParams {
    /// reference decay per 15-minute interval
    pub alpha: f64,
    pub threshold: f64,
    pub min_component_px: usize,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            alpha: 0.7,
            threshold: 1.0,
            min_component_px: 8,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct SkeletonParams {
    pub min_spur_px: usize,
}

impl Default for SkeletonParams {
    fn default() -> Self {
        Self { min_spur_px: 5 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct GraphParams {
    pub snap_radius_px: f64,
    /// arc length from the branch point at which the emergence angle
    /// is read
    pub emergence_d_mm: f64,
    pub lateral_match_tolerance_px: f64,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self {
            snap_radius_px: 20.0,
            emergence_d_mm: 2.0,
            lateral_match_tolerance_px: 10.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct FilterParams {
    pub persistence_hours: f64,
    pub detrend_window_hours: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            persistence_hours: 6.0,
            detrend_window_hours: 25.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct TrackingParams {
    pub min_area_px: usize,
    pub iou_threshold: f64,
    pub min_hits: usize,
    pub max_age: usize,
    pub touching_frames: usize,
    pub v_max_mm_per_frame: f64,
}

impl Default for TrackingParams {
    fn default() -> Self {
        Self {
            min_area_px: 5,
            iou_threshold: 0.3,
            min_hits: 3,
            max_age: 20,
            touching_frames: 4,
            v_max_mm_per_frame: 1.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct GerminationParams {
    pub min_root_pixels: usize,
    pub min_consecutive_frames: usize,
}

impl Default for GerminationParams {
    fn default() -> Self {
        Self {
            min_root_pixels: 3,
            min_consecutive_frames: 4,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct FdaParams {
    /// "monomial" or "grid"
    pub basis: String,
    pub degree: usize,
    pub grid_size: usize,
    pub variance_target: f64,
    pub max_components: usize,
}

impl Default for FdaParams {
    fn default() -> Self {
        Self {
            basis: "monomial".into(),
            degree: 5,
            grid_size: 101,
            variance_target: 0.99,
            max_components: 10,
        }
    }
}

impl FdaParams {
    pub fn to_config(&self) -> Result<crate::fda::FdaConfig> {
        let basis = match self.basis.as_str() {
            "monomial" => crate::fda::Basis::Monomial {
                degree: self.degree,
            },
            "grid" => crate::fda::Basis::Grid,
            other => {
                return Err(PipelineError::Config(format!(
                    "unknown fda basis {other:?} (expected \"monomial\" or \"grid\")"
                )))
            }
        };
        Ok(crate::fda::FdaConfig {
            basis,
            grid_size: self.grid_size,
            variance_target: self.variance_target,
            max_components: self.max_components,
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct EvalPair {
    pub pred_manifest: PathBuf,
    pub truth_manifest: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub rois: Vec<RoiSpec>,
    #[serde(default)]
    pub groups: Vec<GroupSpec>,
    pub out_dir: PathBuf,
    /// comparison timepoints; empty means every 24 h plus the end
    #[serde(default)]
    pub report_hours: Vec<f64>,
    #[serde(default)]
    pub fusion: FusionParams,
    #[serde(default)]
    pub skeleton: SkeletonParams,
    #[serde(default)]
    pub graph: GraphParams,
    #[serde(default)]
    pub filters: FilterParams,
    #[serde(default)]
    pub tracking: TrackingParams,
    #[serde(default)]
    pub germination: GerminationParams,
    #[serde(default)]
    pub fda: FdaParams,
    #[serde(default)]
    pub eval_pairs: Vec<EvalPair>,
    #[serde(default = "default_eval_tolerance")]
    pub eval_tolerance_px: f64,
    /// fpca mode: a metrics CSV produced by an earlier run
    #[serde(default)]
    pub fpca_input: Option<PathBuf>,
}

fn default_eval_tolerance() -> f64 {
    3.0
}

fn regions_overlap(a: (usize, usize, usize, usize), b: (usize, usize, usize, usize)) -> bool {
    a.0 < b.0 + b.2 && b.0 < a.0 + a.2 && a.1 < b.1 + b.3 && b.1 < a.1 + a.3
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(PipelineError::Config(m));
        match self.mode {
            Mode::Standard => {
                if self.manifest.is_none() {
                    return err("standard mode requires a manifest".into());
                }
                if self.rois.is_empty() {
                    return err("standard mode requires at least one ROI".into());
                }
            }
            Mode::Screening => {
                if self.manifest.is_none() {
                    return err("screening mode requires a manifest".into());
                }
                if self.groups.is_empty() {
                    return err("screening mode requires at least one group".into());
                }
                let regions: Vec<_> = self
                    .groups
                    .iter()
                    .filter_map(|g| g.region.map(|r| (g.name.clone(), r)))
                    .collect();
                for i in 0..regions.len() {
                    for j in i + 1..regions.len() {
                        if regions_overlap(regions[i].1, regions[j].1) {
                            return err(format!(
                                "group regions {:?} and {:?} overlap",
                                regions[i].0, regions[j].0
                            ));
                        }
                    }
                }
            }
            Mode::Eval => {
                if self.eval_pairs.is_empty() {
                    return err("eval mode requires eval_pairs".into());
                }
            }
            Mode::Fpca => {
                if self.fpca_input.is_none() {
                    return err("fpca mode requires fpca_input".into());
                }
            }
        }
        if !(0.0 < self.fusion.alpha && self.fusion.alpha < 1.0) {
            return err(format!("fusion alpha {} outside (0,1)", self.fusion.alpha));
        }
        if self.fusion.threshold <= 0.0 {
            return err("fusion threshold must be > 0".into());
        }
        if self.filters.persistence_hours < 0.0 || self.filters.detrend_window_hours <= 0.0 {
            return err("filter windows must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.tracking.iou_threshold) {
            return err("tracking iou_threshold outside [0,1]".into());
        }
        if self.fda.grid_size < 3 || self.fda.variance_target <= 0.0 {
            return err("fda grid_size/variance_target out of range".into());
        }
        self.fda.to_config().map(|_| ())?;
        let mut seen = std::collections::BTreeSet::new();
        for roi in &self.rois {
            if !seen.insert(&roi.plant_id) {
                return err(format!("duplicate plant id {:?}", roi.plant_id));
            }
        }
        Ok(())
    }

    /// Group label for a plant id; "all" when no group mentions it.
    pub fn group_of(&self, plant_id: &str) -> String {
        self.groups
            .iter()
            .find(|g| g.plants.iter().any(|p| p == plant_id))
            .map(|g| g.name.clone())
            .unwrap_or_else(|| "all".to_string())
    }

    /// Comparison timepoints: configured list, or every 24 h plus the
    /// final observation.
    pub fn report_times(&self, duration_hours: f64) -> Vec<f64> {
        if !self.report_hours.is_empty() {
            return self.report_hours.clone();
        }
        let mut times: Vec<f64> = (1..)
            .map(|d| d as f64 * 24.0)
            .take_while(|&t| t < duration_hours)
            .collect();
        times.push(duration_hours);
        times
    }
}
