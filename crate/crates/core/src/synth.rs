//! Deterministic synthetic sequence generation: growing polyline roots
//! rasterized into label masks, so the full pipeline is testable
//! without biological data.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::error::{PipelineError, Result};
use crate::mask::{
    FrameSequence, LabelMask, RoiSpec, CLASS_HYPOCOTYL, CLASS_LATERAL_ROOT, CLASS_MAIN_ROOT,
    CLASS_SEED,
};

/// Bresenham rasterization of one segment.
pub fn draw_segment(mask: &mut LabelMask, a: (f64, f64), b: (f64, f64), class: u8) {
    let (mut x0, mut y0) = (a.0.round() as i64, a.1.round() as i64);
    let (x1, y1) = (b.0.round() as i64, b.1.round() as i64);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        if x0 >= 0 && y0 >= 0 && (x0 as usize) < mask.width && (y0 as usize) < mask.height {
            mask.set(x0 as usize, y0 as usize, class);
        }
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

pub fn draw_polyline(mask: &mut LabelMask, pts: &[(f64, f64)], class: u8) {
    for w in pts.windows(2) {
        draw_segment(mask, w[0], w[1], class);
    }
}

fn draw_blob(mask: &mut LabelMask, cx: usize, cy: usize, r: usize, class: u8) {
    let r_i = r as i64;
    for dy in -r_i..=r_i {
        for dx in -r_i..=r_i {
            if dx * dx + dy * dy > r_i * r_i {
                continue;
            }
            let x = cx as i64 + dx;
            let y = cy as i64 + dy;
            if x >= 0 && y >= 0 && (x as usize) < mask.width && (y as usize) < mask.height {
                mask.set(x as usize, y as usize, class);
            }
        }
    }
}

struct LateralModel {
    /// arc position on the main root where it emerges, px
    attach_arc_px: f64,
    emerge_hours: f64,
    growth_px_per_hour: f64,
    /// unit direction (leaning left or right and slightly down)
    dir: (f64, f64),
}

struct PlantModel {
    seed: (f64, f64),
    main_growth_px_per_hour: f64,
    /// horizontal sway of the main root, px per px of depth
    sway: f64,
    laterals: Vec<LateralModel>,
    hypocotyl_growth_px_per_hour: f64,
}

impl PlantModel {
    fn random(seed_pos: (f64, f64), rng: &mut ChaCha8Rng) -> Self {
        let n_lat = rng.gen_range(2..=4);
        let laterals = (0..n_lat)
            .map(|i| {
                let side = if i % 2 == 0 { 1.0 } else { -1.0 };
                let angle: f64 = rng.gen_range(0.6..1.1); // radians from vertical
                LateralModel {
                    attach_arc_px: rng.gen_range(40.0..140.0),
                    emerge_hours: rng.gen_range(20.0..45.0),
                    growth_px_per_hour: rng.gen_range(0.8..1.6),
                    dir: (side * angle.sin(), angle.cos()),
                }
            })
            .collect();
        Self {
            seed: seed_pos,
            main_growth_px_per_hour: rng.gen_range(2.5..3.5),
            sway: rng.gen_range(-0.08..0.08),
            laterals,
            hypocotyl_growth_px_per_hour: rng.gen_range(0.5..1.0),
        }
    }

    fn main_point_at(&self, arc: f64) -> (f64, f64) {
        (self.seed.0 + self.sway * arc, self.seed.1 + 4.0 + arc)
    }

    fn draw(&self, mask: &mut LabelMask, t_hours: f64) {
        let main_len = self.main_growth_px_per_hour * t_hours;
        let mut pts = Vec::new();
        let mut arc = 0.0;
        while arc < main_len {
            pts.push(self.main_point_at(arc));
            arc += 3.0;
        }
        pts.push(self.main_point_at(main_len));
        draw_polyline(mask, &pts, CLASS_MAIN_ROOT);

        for lat in &self.laterals {
            if t_hours < lat.emerge_hours || main_len < lat.attach_arc_px + 6.0 {
                continue;
            }
            let len = lat.growth_px_per_hour * (t_hours - lat.emerge_hours);
            if len < 4.0 {
                continue;
            }
            let base = self.main_point_at(lat.attach_arc_px);
            // start one step off the main axis so the branch point is clean
            let start = (base.0 + lat.dir.0 * 1.5, base.1 + lat.dir.1 * 1.5);
            let tip = (base.0 + lat.dir.0 * len, base.1 + lat.dir.1 * len);
            draw_segment(mask, start, tip, CLASS_LATERAL_ROOT);
        }

        let hyp_len = (self.hypocotyl_growth_px_per_hour * t_hours).min(self.seed.1 - 4.0);
        if hyp_len >= 2.0 {
            draw_segment(
                mask,
                (self.seed.0, self.seed.1 - 4.0),
                (self.seed.0, self.seed.1 - 4.0 - hyp_len),
                CLASS_HYPOCOTYL,
            );
        }
        draw_blob(
            mask,
            self.seed.0.round() as usize,
            self.seed.1.round() as usize,
            3,
            CLASS_SEED,
        );
    }
}

pub struct StandardParams {
    pub width: usize,
    pub height: usize,
    pub n_frames: usize,
    pub interval_hours: f64,
    pub n_plants: usize,
    pub mm_per_pixel: f64,
    pub rng_seed: u64,
}

impl Default for StandardParams {
    fn default() -> Self {
        Self {
            width: 820,
            height: 616,
            n_frames: 300,
            interval_hours: 0.25,
            n_plants: 2,
            mm_per_pixel: 0.04,
            rng_seed: 1,
        }
    }
}

/// Multi-plant growing sequence plus the ROI covering each plant.
pub fn generate_standard(params: &StandardParams) -> (FrameSequence, Vec<RoiSpec>) {
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let slot_w = params.width / params.n_plants;
    let plants: Vec<PlantModel> = (0..params.n_plants)
        .map(|i| {
            let cx = (i * slot_w + slot_w / 2) as f64 + rng.gen_range(-10.0..10.0);
            PlantModel::random((cx, 60.0), &mut rng)
        })
        .collect();
    let frames: Vec<(LabelMask, f64)> = (0..params.n_frames)
        .map(|f| {
            let t = f as f64 * params.interval_hours;
            let mut mask = LabelMask::zeros(params.width, params.height);
            for p in &plants {
                p.draw(&mut mask, t);
            }
            (mask, t)
        })
        .collect();
    let rois = (0..params.n_plants)
        .map(|i| RoiSpec {
            plant_id: format!("plant{i}"),
            x: i * slot_w,
            y: 0,
            w: slot_w,
            h: params.height,
            seed_hint: Some((
                (plants[i].seed.0 as usize).saturating_sub(i * slot_w),
                plants[i].seed.1 as usize,
            )),
        })
        .collect();
    let seq = FrameSequence::from_frames(frames, params.mm_per_pixel)
        .expect("generated frames are consistent");
    (seq, rois)
}

pub struct ScreeningParams {
    pub width: usize,
    pub height: usize,
    pub n_frames: usize,
    pub interval_hours: f64,
    pub n_seeds: usize,
    pub mm_per_pixel: f64,
    pub rng_seed: u64,
    /// Hill parameters generating the germination times
    pub g_max: f64,
    pub n_hill: f64,
    pub t50: f64,
}

impl Default for ScreeningParams {
    fn default() -> Self {
        Self {
            width: 820,
            height: 616,
            n_frames: 200,
            interval_hours: 0.25,
            n_seeds: 100,
            mm_per_pixel: 0.04,
            rng_seed: 1,
            g_max: 95.0,
            n_hill: 8.0,
            t50: 13.4,
        }
    }
}

/// Seed field where each seed germinates at a quantile of the Hill
/// curve and then grows a short vertical root.
pub fn generate_screening(params: &ScreeningParams) -> FrameSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let cols = (params.n_seeds as f64).sqrt().ceil() as usize;
    let rows = params.n_seeds.div_ceil(cols);
    let cell_w = params.width / cols;
    let cell_h = params.height / rows;
    let seeds: Vec<((usize, usize), Option<f64>)> = (0..params.n_seeds)
        .map(|i| {
            let cx = (i % cols) * cell_w + cell_w / 2;
            let cy = (i / cols) * cell_h + cell_h / 3;
            let p = (i as f64 + 0.5) / params.n_seeds as f64 * 100.0;
            let t_g = if p < params.g_max {
                let frac = p / params.g_max;
                Some(params.t50 * (frac / (1.0 - frac)).powf(1.0 / params.n_hill))
            } else {
                None // dormant
            };
            let jx = rng.gen_range(-3i64..=3);
            ((cx.saturating_add_signed(jx as isize), cy), t_g)
        })
        .collect();
    let frames = (0..params.n_frames)
        .map(|f| {
            let t = f as f64 * params.interval_hours;
            let mut mask = LabelMask::zeros(params.width, params.height);
            for &((sx, sy), t_g) in &seeds {
                draw_blob(&mut mask, sx, sy, 2, CLASS_SEED);
                if let Some(tg) = t_g {
                    if t >= tg {
                        let len = ((t - tg) * 2.0).min(cell_h as f64 - 12.0);
                        if len >= 1.0 {
                            // roots in segmentation masks are a few px wide
                            for dx in -1i64..=1 {
                                let x = sx as f64 + dx as f64;
                                draw_segment(
                                    &mut mask,
                                    (x, sy as f64 + 3.0),
                                    (x, sy as f64 + 3.0 + len),
                                    CLASS_MAIN_ROOT,
                                );
                            }
                        }
                    }
                }
            }
            (mask, t)
        })
        .collect();
    FrameSequence::from_frames(frames, params.mm_per_pixel).expect("frames consistent")
}

/// Writes frames as PGM files plus a JSON manifest; returns the
/// manifest path.
pub fn write_sequence(dir: &Path, seq: &FrameSequence) -> Result<std::path::PathBuf> {
    fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut frames_json = Vec::new();
    for (i, (mask, t)) in seq.frames.iter().enumerate() {
        let name = format!("frame_{i:04}.pgm");
        mask.write_pgm(&dir.join(&name))?;
        frames_json.push(json!({ "file": name, "time_hours": t }));
    }
    let manifest = json!({
        "mm_per_pixel": seq.mm_per_pixel,
        "frames": frames_json,
    });
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap()).map_err(|source| {
        PipelineError::Io {
            path: path.clone(),
            source,
        }
    })?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_sequence_grows_and_fits_rois() {
        let params = StandardParams {
            n_frames: 40,
            ..Default::default()
        };
        let (seq, rois) = generate_standard(&params);
        assert_eq!(seq.frames.len(), 40);
        assert_eq!(rois.len(), 2);
        let early = seq.frames[5].0.class_mask(&[CLASS_MAIN_ROOT]).count_on();
        let late = seq.frames[39].0.class_mask(&[CLASS_MAIN_ROOT]).count_on();
        assert!(late > early, "{late} vs {early}");
        // each ROI contains its seed blob
        for roi in &rois {
            let crop = seq.frames[0].0.crop(roi).unwrap();
            assert!(crop.class_mask(&[CLASS_SEED]).count_on() > 0);
        }
    }

    #[test]
    fn screening_field_has_expected_seed_count() {
        let params = ScreeningParams {
            n_frames: 8,
            n_seeds: 30,
            ..Default::default()
        };
        let seq = generate_screening(&params);
        let comps = crate::grid::connected_components(
            &seq.frames[0].0.class_mask(&[CLASS_SEED]),
        );
        assert_eq!(comps.len(), 30);
    }

    #[test]
    fn generation_is_deterministic() {
        let p = StandardParams {
            n_frames: 6,
            ..Default::default()
        };
        let (a, _) = generate_standard(&p);
        let (b, _) = generate_standard(&p);
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            assert_eq!(fa.0.labels(), fb.0.labels());
        }
    }

    #[test]
    fn write_and_reload_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (seq, _) = generate_standard(&StandardParams {
            n_frames: 3,
            width: 200,
            height: 160,
            ..Default::default()
        });
        let manifest = write_sequence(dir.path(), &seq).unwrap();
        let back = FrameSequence::load(&manifest).unwrap();
        assert_eq!(back.frames.len(), 3);
        assert_eq!(back.frames[2].0.labels(), seq.frames[2].0.labels());
    }
}
