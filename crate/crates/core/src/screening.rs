//! Early-development measurements per tracked seed: germination
//! detection, Hill-curve modeling of cumulative germination, hypocotyl
//! length, and simple plant measures.

use std::collections::{BTreeMap, HashSet};

use serde::Serialize;

use crate::error::{PipelineError, Result};
use crate::grid::{connected_components, BinaryGrid, NEIGHBORS8};
use crate::mask::{LabelMask, CLASS_HYPOCOTYL, CLASS_MAIN_ROOT, CLASS_SEED};
use crate::skeleton::thin;

#[derive(Debug, Clone)]
pub struct GerminationConfig {
    /// class-1 pixels adjacent to the seed required per frame
    pub min_root_pixels: usize,
    /// consecutive frames the threshold must hold
    pub min_consecutive_frames: usize,
}

impl Default for GerminationConfig {
    fn default() -> Self {
        Self {
            min_root_pixels: 3,
            min_consecutive_frames: 4,
        }
    }
}

/// First time at which root pixels 8-adjacent to the seed exceed the
/// area threshold for the required consecutive frame count; `None` if
/// emergence is never sustained.
pub fn detect_germination(
    seed_pixels: &[(usize, usize)],
    frames: &[(LabelMask, f64)],
    config: &GerminationConfig,
) -> Option<f64> {
    if seed_pixels.is_empty() || frames.is_empty() {
        return None;
    }
    let mut halo: HashSet<(i64, i64)> = HashSet::new();
    for &(x, y) in seed_pixels {
        for &(dx, dy) in NEIGHBORS8.iter() {
            halo.insert((x as i64 + dx, y as i64 + dy));
        }
    }
    let mut run = 0usize;
    let mut run_start: Option<f64> = None;
    for (mask, time) in frames {
        let count = halo
            .iter()
            .filter(|&&(x, y)| {
                x >= 0
                    && y >= 0
                    && (x as usize) < mask.width
                    && (y as usize) < mask.height
                    && mask.get(x as usize, y as usize) == CLASS_MAIN_ROOT
            })
            .count();
        if count >= config.min_root_pixels {
            if run == 0 {
                run_start = Some(*time);
            }
            run += 1;
            if run >= config.min_consecutive_frames {
                return run_start;
            }
        } else {
            run = 0;
            run_start = None;
        }
    }
    None
}

/// Four-parameter Hill germination curve; percentages in [0, 100].
#[derive(Debug, Clone, Copy, Serialize)]
pub struct HillCurve {
    pub g0: f64,
    pub g_max: f64,
    pub n: f64,
    pub t50: f64,
    pub tmgr: f64,
    pub rmse: f64,
}

impl HillCurve {
    pub fn eval(&self, t: f64) -> f64 {
        hill(t, self.g0, self.g_max, self.n, self.t50)
    }
}

fn hill(t: f64, g0: f64, g_max: f64, n: f64, t50: f64) -> f64 {
    if t <= 0.0 {
        return g0;
    }
    let u = t.powf(n);
    let v = t50.powf(n);
    g0 + g_max * u / (v + u)
}

/// Inflection of the Hill curve in time; zero at n = 1, below t50 for
/// steeper curves.
pub fn tmgr(n: f64, t50: f64) -> f64 {
    if n <= 1.0 {
        return 0.0;
    }
    t50 * ((n - 1.0) / (n + 1.0)).powf(1.0 / n)
}

#[derive(Debug, Clone, Serialize)]
pub struct GerminationFit {
    /// fitted curve; absent when no germination events occurred
    pub curve: Option<HillCurve>,
    pub final_percent: f64,
    pub total_seeds: usize,
    /// track id -> emergence time, hours
    pub per_seed_times: BTreeMap<usize, f64>,
}

const HILL_BOUNDS: [(f64, f64); 4] = [(0.0, 20.0), (0.0, 100.0), (1.0, 50.0), (1e-6, f64::MAX)];

fn clamp_params(p: &mut [f64; 4], horizon: f64) {
    for i in 0..4 {
        let (lo, hi) = HILL_BOUNDS[i];
        p[i] = p[i].clamp(lo, hi.min(if i == 3 { horizon } else { hi }));
    }
}

fn residuals(p: &[f64; 4], times: &[f64], y: &[f64], out: &mut Vec<f64>) -> f64 {
    out.clear();
    let mut sse = 0.0;
    for (&t, &yi) in times.iter().zip(y) {
        let r = hill(t, p[0], p[1], p[2], p[3]) - yi;
        sse += r * r;
        out.push(r);
    }
    sse
}

fn jacobian_row(p: &[f64; 4], t: f64) -> [f64; 4] {
    let [_, g_max, n, t50] = *p;
    if t <= 0.0 {
        return [1.0, 0.0, 0.0, 0.0];
    }
    let u = t.powf(n);
    let v = t50.powf(n);
    let denom = (u + v) * (u + v);
    let f = u / (u + v);
    let du = u * t.ln();
    let dv = v * t50.ln();
    [
        1.0,
        f,
        g_max * (du * v - u * dv) / denom,
        g_max * (-u * v * n / t50) / denom,
    ]
}

/// Damped least squares from one start; returns (params, sse).
fn lm_fit(start: [f64; 4], times: &[f64], y: &[f64], horizon: f64) -> ([f64; 4], f64) {
    let mut p = start;
    clamp_params(&mut p, horizon);
    let mut r = Vec::with_capacity(times.len());
    let mut sse = residuals(&p, times, y, &mut r);
    let mut lambda = 1e-3;
    for _ in 0..200 {
        // normal equations JtJ + lambda*diag(JtJ)
        let mut jtj = [[0.0f64; 4]; 4];
        let mut jtr = [0.0f64; 4];
        for (i, &t) in times.iter().enumerate() {
            let row = jacobian_row(&p, t);
            for a in 0..4 {
                jtr[a] += row[a] * r[i];
                for b in 0..4 {
                    jtj[a][b] += row[a] * row[b];
                }
            }
        }
        let mut m = nalgebra::Matrix4::from_fn(|a, b| jtj[a][b]);
        for a in 0..4 {
            m[(a, a)] += lambda * jtj[a][a].max(1e-12);
        }
        let rhs = nalgebra::Vector4::from_row_slice(&jtr);
        let Some(delta) = m.lu().solve(&rhs) else {
            break;
        };
        let mut trial = p;
        for a in 0..4 {
            trial[a] -= delta[a];
        }
        clamp_params(&mut trial, horizon);
        let mut r_trial = Vec::with_capacity(times.len());
        let sse_trial = residuals(&trial, times, y, &mut r_trial);
        if sse_trial < sse {
            let improved = sse - sse_trial;
            p = trial;
            r = r_trial;
            sse = sse_trial;
            lambda = (lambda * 0.3).max(1e-12);
            if improved < 1e-12 * (1.0 + sse) {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e10 {
                break;
            }
        }
    }
    (p, sse)
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let idx = (q * (sorted.len() - 1) as f64).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

/// Fits the Hill curve to the per-frame cumulative germination
/// percentage built from `event_times`, sampled at `sample_times`
/// (uniform grid over the horizon when empty).
pub fn fit_hill(
    per_seed_times: &BTreeMap<usize, f64>,
    total_seeds: usize,
    horizon: f64,
    sample_times: &[f64],
) -> Result<GerminationFit> {
    if total_seeds == 0 {
        return Err(PipelineError::Fit("total seed count is zero".into()));
    }
    let final_percent = per_seed_times.len() as f64 / total_seeds as f64 * 100.0;
    if per_seed_times.is_empty() {
        return Ok(GerminationFit {
            curve: None,
            final_percent,
            total_seeds,
            per_seed_times: per_seed_times.clone(),
        });
    }
    let grid: Vec<f64> = if sample_times.is_empty() {
        let m = 200;
        (0..=m).map(|i| horizon * i as f64 / m as f64).collect()
    } else {
        sample_times.to_vec()
    };
    let mut events: Vec<f64> = per_seed_times.values().copied().collect();
    events.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let y: Vec<f64> = grid
        .iter()
        .map(|&t| {
            let k = events.partition_point(|&e| e <= t);
            k as f64 / total_seeds as f64 * 100.0
        })
        .collect();

    let t50_starts = [
        percentile(&events, 0.25),
        percentile(&events, 0.5),
        percentile(&events, 0.75),
    ];
    let mut best: Option<([f64; 4], f64)> = None;
    for &t50_0 in &t50_starts {
        for &n_0 in &[2.0, 4.0, 8.0] {
            let start = [0.0, final_percent, n_0, t50_0.max(1e-3)];
            let (p, sse) = lm_fit(start, &grid, &y, horizon);
            if best.as_ref().map_or(true, |(_, s)| sse < *s) {
                best = Some((p, sse));
            }
        }
    }
    let (p, sse) = best.unwrap();
    let rmse = (sse / grid.len() as f64).sqrt();
    Ok(GerminationFit {
        curve: Some(HillCurve {
            g0: p[0],
            g_max: p[1],
            n: p[2],
            t50: p[3],
            tmgr: tmgr(p[2], p[3]),
            rmse,
        }),
        final_percent,
        total_seeds,
        per_seed_times: per_seed_times.clone(),
    })
}

/// Longest path through a binary shape's skeleton, in mm. Thins the
/// shape, then runs a double Dijkstra sweep per component (exact on
/// trees, which thinned skeletons are in practice).
pub fn longest_skeleton_path_mm(shape: &BinaryGrid, mm_per_pixel: f64) -> f64 {
    let skel = thin(shape);
    let mut best = 0.0f64;
    for comp in connected_components(&skel) {
        if comp.pixels.len() < 2 {
            continue;
        }
        let (far, _) = farthest(&skel, comp.pixels[0]);
        let (_, dist) = farthest(&skel, far);
        best = best.max(dist);
    }
    best * mm_per_pixel
}

fn farthest(grid: &BinaryGrid, start: (usize, usize)) -> ((usize, usize), f64) {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;
    let mut dist: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut heap = BinaryHeap::new();
    dist.insert(start, 0.0);
    heap.push((Reverse(ordered(0.0)), start));
    let mut best = (start, 0.0);
    while let Some((Reverse(d), px)) = heap.pop() {
        let d = d.0;
        if dist.get(&px).map_or(true, |&known| d > known) {
            continue;
        }
        if d > best.1 {
            best = (px, d);
        }
        for &(dx, dy) in NEIGHBORS8.iter() {
            let nx = px.0 as i64 + dx;
            let ny = px.1 as i64 + dy;
            if nx < 0 || ny < 0 {
                continue;
            }
            let np = (nx as usize, ny as usize);
            if !grid.get(np.0, np.1) {
                continue;
            }
            let step = if dx != 0 && dy != 0 { std::f64::consts::SQRT_2 } else { 1.0 };
            let nd = d + step;
            if dist.get(&np).map_or(true, |&known| nd < known) {
                dist.insert(np, nd);
                heap.push((Reverse(ordered(nd)), np));
            }
        }
    }
    best
}

#[derive(PartialEq, PartialOrd)]
struct OrderedF64(f64);
impl Eq for OrderedF64 {}
impl Ord for OrderedF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.partial_cmp(&other.0).unwrap()
    }
}
fn ordered(v: f64) -> OrderedF64 {
    OrderedF64(v)
}

/// Hypocotyl length in mm: longest class-4 skeleton path; 0 when the
/// class is absent.
pub fn hypocotyl_length(mask: &LabelMask, mm_per_pixel: f64) -> f64 {
    let hyp = mask.class_mask(&[CLASS_HYPOCOTYL]);
    if hyp.count_on() == 0 {
        return 0.0;
    }
    longest_skeleton_path_mm(&hyp, mm_per_pixel)
}

#[derive(Debug, Clone, Serialize)]
pub struct PlantMeasures {
    pub total_area_mm2: f64,
    /// class-3 area at the first frame; absent when no seed pixels
    pub seed_size_mm2: Option<f64>,
    pub simple_root_length_mm: f64,
}

/// Whole-plant measures inside one track's region of the mask.
pub fn plant_measures(mask: &LabelMask, mm_per_pixel: f64) -> PlantMeasures {
    let px_area = mm_per_pixel * mm_per_pixel;
    let total = mask.class_mask(&[1, 2, 3, 4, 5, 6]).count_on();
    let seed = mask.class_mask(&[CLASS_SEED]).count_on();
    let root = mask.class_mask(&[CLASS_MAIN_ROOT]);
    PlantMeasures {
        total_area_mm2: total as f64 * px_area,
        seed_size_mm2: if seed > 0 {
            Some(seed as f64 * px_area)
        } else {
            None
        },
        simple_root_length_mm: if root.count_on() > 0 {
            longest_skeleton_path_mm(&root, mm_per_pixel)
        } else {
            0.0
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn tmgr_closed_form() {
        assert_eq!(tmgr(1.0, 13.0), 0.0);
        let n = 8.0;
        let t50 = 13.4;
        let v = tmgr(n, t50);
        assert!(v < t50);
        assert_relative_eq!(v, t50 * (7.0f64 / 9.0).powf(1.0 / 8.0), max_relative = 1e-15);
    }

    #[test]
    fn hill_half_point_identity() {
        for &(g0, g_max, n, t50) in
            &[(0.0, 95.0, 8.0, 13.4), (5.0, 60.0, 2.5, 30.0), (1.0, 99.0, 1.0, 7.0)]
        {
            let c = HillCurve { g0, g_max, n, t50, tmgr: tmgr(n, t50), rmse: 0.0 };
            assert_relative_eq!(c.eval(t50) - g0, g_max / 2.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn hill_monotone_nondecreasing() {
        let c = HillCurve { g0: 2.0, g_max: 90.0, n: 3.0, t50: 20.0, tmgr: 0.0, rmse: 0.0 };
        let mut prev = c.eval(0.0);
        for i in 1..400 {
            let v = c.eval(i as f64 * 0.25);
            assert!(v >= prev - 1e-12);
            prev = v;
        }
    }

    /// Noise-free events sampled from G(t) with the reference
    /// parameters are recovered within 2% each.
    #[test]
    fn hill_fit_recovers_generating_parameters() {
        let (g0, g_max, n, t50) = (0.0f64, 95.0f64, 8.0f64, 13.4f64);
        let total = 200usize;
        let mut events = BTreeMap::new();
        let mut id = 0usize;
        for k in 0..total {
            // midpoint quantile of each seed; only seeds below the
            // plateau germinate
            let p = (k as f64 + 0.5) / total as f64 * 100.0;
            if p >= g0 + g_max {
                continue;
            }
            let frac = (p - g0) / g_max;
            let t = t50 * (frac / (1.0 - frac)).powf(1.0 / n);
            events.insert(id, t);
            id += 1;
        }
        let fit = fit_hill(&events, total, 72.0, &[]).unwrap();
        let c = fit.curve.unwrap();
        assert!((c.g0 - g0).abs() <= 2.0, "g0 = {}", c.g0); // absolute, true value 0
        assert!((c.g_max - g_max).abs() / g_max <= 0.02, "g_max = {}", c.g_max);
        assert!((c.n - n).abs() / n <= 0.02, "n = {}", c.n);
        assert!((c.t50 - t50).abs() / t50 <= 0.02, "t50 = {}", c.t50);
        assert_relative_eq!(c.tmgr, tmgr(c.n, c.t50), max_relative = 1e-15);
        assert!(c.rmse < 1.0);
    }

    #[test]
    fn final_percent_exact_and_zero_events_skip_fit() {
        let fit = fit_hill(&BTreeMap::new(), 50, 72.0, &[]).unwrap();
        assert!(fit.curve.is_none());
        assert_eq!(fit.final_percent, 0.0);

        let mut events = BTreeMap::new();
        events.insert(0, 10.0);
        events.insert(1, 12.0);
        events.insert(2, 14.0);
        let fit = fit_hill(&events, 4, 72.0, &[]).unwrap();
        assert_eq!(fit.final_percent, 75.0);
    }

    fn frame_with_root(seed: (usize, usize), root_px: usize) -> LabelMask {
        let mut m = LabelMask::zeros(40, 40);
        for dy in 0..3 {
            for dx in 0..3 {
                m.set(seed.0 + dx, seed.1 + dy, 3);
            }
        }
        for i in 0..root_px {
            m.set(seed.0 + i, seed.1 + 3, 1);
        }
        m
    }

    #[test]
    fn germination_detected_at_sustained_emergence() {
        let seed = (10, 10);
        let seed_px: Vec<_> =
            (0..3).flat_map(|dy| (0..3).map(move |dx| (10 + dx, 10 + dy))).collect();
        let mut frames = Vec::new();
        for i in 0..60 {
            let t = i as f64 * 0.25;
            let root = if t >= 13.5 { 4 } else { 0 };
            frames.push((frame_with_root(seed, root), t));
        }
        let got = detect_germination(&seed_px, &frames, &GerminationConfig::default());
        assert_eq!(got, Some(13.5));
    }

    #[test]
    fn germination_flicker_and_seed_only_rejected() {
        let seed = (10, 10);
        let seed_px: Vec<_> =
            (0..3).flat_map(|dy| (0..3).map(move |dx| (10 + dx, 10 + dy))).collect();
        let cfg = GerminationConfig::default();

        let frames: Vec<_> =
            (0..20).map(|i| (frame_with_root(seed, 0), i as f64 * 0.25)).collect();
        assert_eq!(detect_germination(&seed_px, &frames, &cfg), None);

        // single-frame flicker
        let mut frames: Vec<_> =
            (0..20).map(|i| (frame_with_root(seed, 0), i as f64 * 0.25)).collect();
        frames[10].0 = frame_with_root(seed, 4);
        assert_eq!(detect_germination(&seed_px, &frames, &cfg), None);
    }

    #[test]
    fn hypocotyl_bar_and_absent() {
        let mut m = LabelMask::zeros(80, 20);
        for i in 0..50 {
            m.set(10 + i, 10, 4);
        }
        assert_relative_eq!(hypocotyl_length(&m, 0.04), 1.96, max_relative = 1e-12);
        assert_eq!(hypocotyl_length(&LabelMask::zeros(10, 10), 0.04), 0.0);
    }

    #[test]
    fn plant_measures_areas_and_root() {
        let mut m = LabelMask::zeros(120, 20);
        for i in 0..100 {
            m.set(10 + i, 10, 1); // vertical-equivalent 100-px root line
        }
        let pm = plant_measures(&m, 0.04);
        assert_relative_eq!(pm.total_area_mm2, 100.0 * 0.0016, max_relative = 1e-12);
        assert!(pm.seed_size_mm2.is_none());
        assert_relative_eq!(pm.simple_root_length_mm, 3.96, max_relative = 1e-12);

        let mut m2 = LabelMask::zeros(10, 10);
        m2.set(5, 5, 3);
        let pm2 = plant_measures(&m2, 0.04);
        assert_eq!(pm2.seed_size_mm2, Some(0.0016));
        assert_eq!(pm2.simple_root_length_mm, 0.0);
    }
}
