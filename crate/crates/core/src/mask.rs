//! Label-mask input: PGM (P5) frames described by a JSON manifest.
//!
//! Class codes follow the segmentation convention: 0 background, 1 main
//! root, 2 lateral root, 3 seed, 4 hypocotyl, 5 leaf, 6 petiole.

use std::fs;
use std::io::Read;
use std::path::Path;

use serde::Deserialize;

use crate::error::{PipelineError, Result};
use crate::grid::BinaryGrid;

pub const NUM_CLASSES: u8 = 7;
pub const CLASS_BACKGROUND: u8 = 0;
pub const CLASS_MAIN_ROOT: u8 = 1;
pub const CLASS_LATERAL_ROOT: u8 = 2;
pub const CLASS_SEED: u8 = 3;
pub const CLASS_HYPOCOTYL: u8 = 4;
pub const CLASS_LEAF: u8 = 5;
pub const CLASS_PETIOLE: u8 = 6;

/// One frame's per-pixel class labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    pub width: usize,
    pub height: usize,
    labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(PipelineError::Mask("zero dimension".into()));
        }
        if labels.len() != width * height {
            return Err(PipelineError::Mask(format!(
                "grid length {} does not match {}x{}",
                labels.len(),
                width,
                height
            )));
        }
        if let Some(pos) = labels.iter().position(|&v| v >= NUM_CLASSES) {
            return Err(PipelineError::Mask(format!(
                "label value {} at pixel ({}, {}) outside 0-6",
                labels[pos],
                pos % width,
                pos / width
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            labels: vec![0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, label: u8) {
        debug_assert!(label < NUM_CLASSES);
        self.labels[y * self.width + x] = label;
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Binary grid of pixels whose class is in `classes`.
    pub fn class_mask(&self, classes: &[u8]) -> BinaryGrid {
        let mut member = [false; NUM_CLASSES as usize];
        for &c in classes {
            debug_assert!(c < NUM_CLASSES);
            member[c as usize] = true;
        }
        BinaryGrid::from_fn(self.width, self.height, |x, y| {
            member[self.get(x, y) as usize]
        })
    }

    pub fn crop(&self, roi: &RoiSpec) -> Result<LabelMask> {
        roi.check_bounds(self.width, self.height)?;
        let mut labels = Vec::with_capacity(roi.w * roi.h);
        for y in roi.y..roi.y + roi.h {
            let row = &self.labels[y * self.width + roi.x..y * self.width + roi.x + roi.w];
            labels.extend_from_slice(row);
        }
        Ok(LabelMask {
            width: roi.w,
            height: roi.h,
            labels,
        })
    }

    /// Serializes as binary PGM with maxval 6.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut out = format!("P5\n{} {}\n{}\n", self.width, self.height, NUM_CLASSES - 1)
            .into_bytes();
        out.extend_from_slice(&self.labels);
        fs::write(path, out).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read_pgm(path: &Path) -> Result<LabelMask> {
        let bytes = fs::read(path).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse_pgm(&bytes).map_err(|e| {
            PipelineError::Mask(format!("{}: {}", path.display(), e))
        })
    }

    fn parse_pgm(bytes: &[u8]) -> std::result::Result<LabelMask, String> {
        let mut cursor = 0usize;
        let mut token = |bytes: &[u8]| -> std::result::Result<String, String> {
            // skip whitespace and comments
            loop {
                while cursor < bytes.len() && bytes[cursor].is_ascii_whitespace() {
                    cursor += 1;
                }
                if cursor < bytes.len() && bytes[cursor] == b'#' {
                    while cursor < bytes.len() && bytes[cursor] != b'\n' {
                        cursor += 1;
                    }
                } else {
                    break;
                }
            }
            let start = cursor;
            while cursor < bytes.len() && !bytes[cursor].is_ascii_whitespace() {
                cursor += 1;
            }
            if start == cursor {
                return Err("truncated header".into());
            }
            Ok(String::from_utf8_lossy(&bytes[start..cursor]).into_owned())
        };
        if token(bytes)? != "P5" {
            return Err("not a P5 PGM".into());
        }
        let width: usize = token(bytes)?.parse().map_err(|_| "bad width")?;
        let height: usize = token(bytes)?.parse().map_err(|_| "bad height")?;
        let maxval: usize = token(bytes)?.parse().map_err(|_| "bad maxval")?;
        if maxval == 0 || maxval > 255 {
            return Err(format!("unsupported maxval {maxval}"));
        }
        // exactly one whitespace byte separates header and raster
        cursor += 1;
        let mut raster = Vec::with_capacity(width * height);
        (&bytes[cursor.min(bytes.len())..])
            .take((width * height) as u64)
            .read_to_end(&mut raster)
            .map_err(|e| e.to_string())?;
        if raster.len() != width * height {
            return Err(format!(
                "raster has {} bytes, expected {}",
                raster.len(),
                width * height
            ));
        }
        LabelMask::new(width, height, raster).map_err(|e| e.to_string())
    }
}

/// Rectangular region naming one plant inside the full frame.
#[derive(Debug, Clone, Deserialize, serde::Serialize)]
pub struct RoiSpec {
    pub plant_id: String,
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    #[serde(default)]
    pub seed_hint: Option<(usize, usize)>,
}

impl RoiSpec {
    pub fn check_bounds(&self, width: usize, height: usize) -> Result<()> {
        if self.w == 0 || self.h == 0 || self.x + self.w > width || self.y + self.h > height {
            return Err(PipelineError::RoiOutOfBounds(format!(
                "roi '{}' ({}, {}, {}x{}) vs frame {}x{}",
                self.plant_id, self.x, self.y, self.w, self.h, width, height
            )));
        }
        Ok(())
    }
}

/// An ordered, calibrated sequence of label masks.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    pub frames: Vec<(LabelMask, f64)>,
    pub mm_per_pixel: f64,
    /// Median inter-frame gap, used for filter-window sizing.
    pub interval_hours: f64,
}

#[derive(Deserialize)]
struct Manifest {
    mm_per_pixel: f64,
    frames: Vec<ManifestFrame>,
}

#[derive(Deserialize)]
struct ManifestFrame {
    file: String,
    time_hours: f64,
}

impl FrameSequence {
    pub fn from_frames(frames: Vec<(LabelMask, f64)>, mm_per_pixel: f64) -> Result<Self> {
        if frames.is_empty() {
            return Err(PipelineError::Manifest("no frames".into()));
        }
        if mm_per_pixel <= 0.0 {
            return Err(PipelineError::Manifest("mm_per_pixel must be > 0".into()));
        }
        let (w, h) = (frames[0].0.width, frames[0].0.height);
        for (i, (mask, _)) in frames.iter().enumerate() {
            if mask.width != w || mask.height != h {
                return Err(PipelineError::Frame {
                    frame_index: i,
                    message: format!(
                        "dimensions {}x{} differ from first frame {}x{}",
                        mask.width, mask.height, w, h
                    ),
                });
            }
        }
        for i in 1..frames.len() {
            if frames[i].1 <= frames[i - 1].1 {
                return Err(PipelineError::Frame {
                    frame_index: i,
                    message: format!(
                        "timestamp {} not after previous {}",
                        frames[i].1,
                        frames[i - 1].1
                    ),
                });
            }
        }
        let interval_hours = median_gap(&frames);
        Ok(Self {
            frames,
            mm_per_pixel,
            interval_hours,
        })
    }

    /// Loads a sequence from a JSON manifest; frame paths resolve relative
    /// to the manifest's directory. Frames are sorted by time.
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let text = fs::read_to_string(manifest_path).map_err(|source| PipelineError::Io {
            path: manifest_path.to_path_buf(),
            source,
        })?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Manifest(e.to_string()))?;
        if manifest.frames.is_empty() {
            return Err(PipelineError::Manifest("no frames".into()));
        }
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let mut entries = manifest.frames;
        entries.sort_by(|a, b| a.time_hours.total_cmp(&b.time_hours));
        let mut frames = Vec::with_capacity(entries.len());
        for (i, entry) in entries.iter().enumerate() {
            let mask = LabelMask::read_pgm(&base.join(&entry.file)).map_err(|e| {
                PipelineError::Frame {
                    frame_index: i,
                    message: e.to_string(),
                }
            })?;
            frames.push((mask, entry.time_hours));
        }
        Self::from_frames(frames, manifest.mm_per_pixel)
    }

    pub fn width(&self) -> usize {
        self.frames[0].0.width
    }

    pub fn height(&self) -> usize {
        self.frames[0].0.height
    }
}

fn median_gap(frames: &[(LabelMask, f64)]) -> f64 {
    if frames.len() < 2 {
        return 0.25;
    }
    let mut gaps: Vec<f64> = frames.windows(2).map(|w| w[1].1 - w[0].1).collect();
    gaps.sort_by(f64::total_cmp);
    let mid = gaps.len() / 2;
    if gaps.len() % 2 == 1 {
        gaps[mid]
    } else {
        0.5 * (gaps[mid - 1] + gaps[mid])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    fn tiny_mask() -> LabelMask {
        LabelMask::new(3, 2, vec![0, 1, 2, 3, 0, 6]).unwrap()
    }

    #[test]
    fn rejects_out_of_range_label() {
        let err = LabelMask::new(2, 1, vec![0, 7]).unwrap_err();
        assert!(err.to_string().contains("7"));
    }

    #[test]
    fn pgm_round_trip() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("m.pgm");
        let mask = tiny_mask();
        mask.write_pgm(&path).unwrap();
        assert_eq!(LabelMask::read_pgm(&path).unwrap(), mask);
    }

    #[test]
    fn crop_full_frame_is_identity() {
        let mask = tiny_mask();
        let roi = RoiSpec {
            plant_id: "p".into(),
            x: 0,
            y: 0,
            w: 3,
            h: 2,
            seed_hint: None,
        };
        assert_eq!(mask.crop(&roi).unwrap(), mask);
    }

    #[test]
    fn crop_preserves_local_coordinates() {
        // 2x2 window over the root pixel at (1, 0)
        let mask = tiny_mask();
        let roi = RoiSpec {
            plant_id: "p".into(),
            x: 1,
            y: 0,
            w: 2,
            h: 2,
            seed_hint: None,
        };
        let cropped = mask.crop(&roi).unwrap();
        assert_eq!(cropped.get(0, 0), 1);
        assert_eq!(cropped.get(1, 0), 2);
        assert_eq!(cropped.get(0, 1), 0);
        assert_eq!(cropped.get(1, 1), 6);
    }

    #[test]
    fn crop_out_of_bounds_errors() {
        let mask = tiny_mask();
        let roi = RoiSpec {
            plant_id: "p".into(),
            x: 2,
            y: 0,
            w: 2,
            h: 2,
            seed_hint: None,
        };
        assert!(mask.crop(&roi).is_err());
    }

    #[test]
    fn nested_crop_composes() {
        let mask = LabelMask::new(6, 6, (0..36).map(|i| (i % 7) as u8).collect()).unwrap();
        let a = RoiSpec {
            plant_id: "a".into(),
            x: 1,
            y: 2,
            w: 4,
            h: 3,
            seed_hint: None,
        };
        let b = RoiSpec {
            plant_id: "b".into(),
            x: 1,
            y: 1,
            w: 2,
            h: 2,
            seed_hint: None,
        };
        let composed = RoiSpec {
            plant_id: "ab".into(),
            x: a.x + b.x,
            y: a.y + b.y,
            w: b.w,
            h: b.h,
            seed_hint: None,
        };
        assert_eq!(
            mask.crop(&a).unwrap().crop(&b).unwrap(),
            mask.crop(&composed).unwrap()
        );
    }

    #[test]
    fn class_mask_counts() {
        let mask = tiny_mask();
        assert_eq!(mask.class_mask(&[]).count_on(), 0);
        assert_eq!(mask.class_mask(&[0, 1, 2, 3, 4, 5, 6]).count_on(), 6);
        assert_eq!(mask.class_mask(&[1, 2]).count_on(), 2);
    }

    #[test]
    fn manifest_loads_sorted_frames() {
        let dir = TempDir::new().unwrap();
        for (name, label) in [("a.pgm", 1u8), ("b.pgm", 2u8), ("c.pgm", 3u8)] {
            LabelMask::new(2, 2, vec![label; 4])
                .unwrap()
                .write_pgm(&dir.path().join(name))
                .unwrap();
        }
        let manifest = r#"{
            "mm_per_pixel": 0.04,
            "frames": [
                {"file": "c.pgm", "time_hours": 0.5},
                {"file": "a.pgm", "time_hours": 0.0},
                {"file": "b.pgm", "time_hours": 0.25}
            ]
        }"#;
        let path = dir.path().join("manifest.json");
        fs::write(&path, manifest).unwrap();
        let seq = FrameSequence::load(&path).unwrap();
        assert_eq!(seq.frames.len(), 3);
        assert_eq!(seq.frames[0].0.get(0, 0), 1);
        assert_eq!(seq.frames[2].0.get(0, 0), 3);
        assert!((seq.interval_hours - 0.25).abs() < 1e-12);
    }

    #[test]
    fn empty_manifest_errors() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("manifest.json");
        fs::write(&path, r#"{"mm_per_pixel": 0.04, "frames": []}"#).unwrap();
        let err = FrameSequence::load(&path).unwrap_err();
        assert!(err.to_string().contains("no frames"));
    }

    #[test]
    fn bad_label_reported_with_frame_index() {
        let dir = TempDir::new().unwrap();
        // hand-build a PGM with a label value of 7
        fs::write(dir.path().join("bad.pgm"), b"P5\n1 1\n255\n\x07").unwrap();
        let path = dir.path().join("manifest.json");
        fs::write(
            &path,
            r#"{"mm_per_pixel": 0.04, "frames": [{"file": "bad.pgm", "time_hours": 0.0}]}"#,
        )
        .unwrap();
        let err = FrameSequence::load(&path).unwrap_err();
        assert!(err.to_string().contains("frame 0"), "{err}");
    }
}
