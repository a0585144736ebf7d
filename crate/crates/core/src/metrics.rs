//! Architecture, growth, spatial and angular metrics, plus the temporal
//! post-processing filters applied before reporting.

use std::collections::BTreeMap;

use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{PipelineError, Result};
use crate::graph::{path_length_px, RootGraph};

/// A named per-plant time series.
#[derive(Debug, Clone)]
pub struct MetricSeries {
    pub plant_id: String,
    pub metric_name: String,
    /// (time_hours, value), time strictly increasing
    pub samples: Vec<(f64, f64)>,
    pub units: String,
}

impl MetricSeries {
    pub fn new(plant_id: &str, metric_name: &str, units: &str) -> Self {
        Self {
            plant_id: plant_id.to_string(),
            metric_name: metric_name.to_string(),
            samples: Vec::new(),
            units: units.to_string(),
        }
    }

    pub fn from_samples(
        plant_id: &str,
        metric_name: &str,
        samples: Vec<(f64, f64)>,
        units: &str,
    ) -> Self {
        Self {
            plant_id: plant_id.to_string(),
            metric_name: metric_name.to_string(),
            samples,
            units: units.to_string(),
        }
    }

    pub fn push(&mut self, time_hours: f64, value: f64) {
        debug_assert!(
            self.samples.last().map_or(true, |&(t, _)| time_hours > t),
            "time must be strictly increasing"
        );
        self.samples.push((time_hours, value));
    }

    pub fn values(&self) -> Vec<f64> {
        self.samples.iter().map(|&(_, v)| v).collect()
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|&(t, _)| t).collect()
    }

    fn with_values(&self, name: &str, units: &str, values: Vec<f64>) -> MetricSeries {
        MetricSeries {
            plant_id: self.plant_id.clone(),
            metric_name: name.to_string(),
            samples: self
                .samples
                .iter()
                .zip(values)
                .map(|(&(t, _), v)| (t, v))
                .collect(),
            units: units.to_string(),
        }
    }
}

/// Angles of one tracked lateral at one timepoint.
#[derive(Debug, Clone)]
pub struct AngleRecord {
    pub lateral_track_id: usize,
    pub time_hours: f64,
    pub base_tip_deg: f64,
    /// None while the lateral is still shorter than d.
    pub emergence_deg: Option<f64>,
    pub d_mm: f64,
}

/// Basic architecture numbers from a classified graph.
pub fn basic_architecture(graph: &RootGraph) -> BTreeMap<String, f64> {
    let mr = graph.main_length_mm();
    let lr = graph.lateral_length_mm();
    let tr = mr + lr;
    let count = graph.laterals().len() as f64;
    let mut out = BTreeMap::new();
    out.insert("main_root_length_mm".into(), mr);
    out.insert("lateral_root_length_mm".into(), lr);
    out.insert("total_root_length_mm".into(), tr);
    out.insert("lateral_root_count".into(), count);
    if mr > 0.0 {
        out.insert("discrete_lateral_density_per_cm".into(), 10.0 * count / mr);
    }
    if tr > 0.0 {
        out.insert("main_over_total".into(), mr / tr);
    }
    out
}

/// Angle between the vertical (image y-down, 0 deg = straight down) and
/// the base-to-tip vector.
pub fn base_tip_angle(base: (f64, f64), tip: (f64, f64)) -> Result<f64> {
    let (dx, dy) = (tip.0 - base.0, tip.1 - base.1);
    let norm = (dx * dx + dy * dy).sqrt();
    if norm == 0.0 {
        return Err(PipelineError::UndefinedAngle);
    }
    Ok((dy / norm).clamp(-1.0, 1.0).acos().to_degrees())
}

/// Angle of the initial trajectory, measured at arc length `d_mm` along
/// the polyline (linear interpolation between pixels). None when the
/// root is still shorter than d.
pub fn emergence_angle(
    polyline: &[(usize, usize)],
    d_mm: f64,
    mm_per_pixel: f64,
) -> Option<f64> {
    if polyline.len() < 2 {
        return None;
    }
    let total_mm = path_length_px(polyline) * mm_per_pixel;
    if total_mm < d_mm {
        return None;
    }
    let base = polyline[0];
    let point = point_at_arc_length(polyline, d_mm / mm_per_pixel)?;
    base_tip_angle((base.0 as f64, base.1 as f64), point).ok()
}

/// Point at a given arc length (in pixel units) along a pixel polyline.
fn point_at_arc_length(polyline: &[(usize, usize)], target_px: f64) -> Option<(f64, f64)> {
    let mut acc = 0.0;
    for w in polyline.windows(2) {
        let (x0, y0) = (w[0].0 as f64, w[0].1 as f64);
        let (x1, y1) = (w[1].0 as f64, w[1].1 as f64);
        let step = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
        if acc + step >= target_px {
            let f = (target_px - acc) / step;
            return Some((x0 + f * (x1 - x0), y0 + f * (y1 - y0)));
        }
        acc += step;
    }
    polyline.last().map(|&(x, y)| (x as f64, y as f64))
}

/// Convex hull (Andrew monotone chain) over a point set; returns hull
/// vertices in counter-clockwise order.
pub fn convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Shoelace area of a polygon given in vertex order.
pub fn polygon_area(vertices: &[(f64, f64)]) -> f64 {
    if vertices.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..vertices.len() {
        let (x0, y0) = vertices[i];
        let (x1, y1) = vertices[(i + 1) % vertices.len()];
        acc += x0 * y1 - x1 * y0;
    }
    acc.abs() * 0.5
}

/// Convex-hull shape metrics over all root pixels of a graph.
/// `total_root_mm` feeds the density row.
pub fn convex_hull_metrics(
    root_pixels: &[(usize, usize)],
    mm_per_pixel: f64,
    total_root_mm: f64,
) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    if root_pixels.is_empty() {
        return out;
    }
    let pts: Vec<(f64, f64)> = root_pixels
        .iter()
        .map(|&(x, y)| (x as f64 * mm_per_pixel, y as f64 * mm_per_pixel))
        .collect();
    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &pts {
        min_x = min_x.min(x);
        max_x = max_x.max(x);
        min_y = min_y.min(y);
        max_y = max_y.max(y);
    }
    let width = max_x - min_x;
    let height = max_y - min_y;
    out.insert("convex_hull_width_mm".into(), width);
    out.insert("convex_hull_height_mm".into(), height);
    if width > 0.0 {
        out.insert("aspect_ratio".into(), height / width);
    }
    let hull = convex_hull(&pts);
    let area = polygon_area(&hull);
    out.insert("convex_hull_area_mm2".into(), area);
    if area > 0.0 {
        out.insert("root_density_mm_per_mm2".into(), total_root_mm / area);
    }
    out
}

/// Temporal derivative: central differences interior, one-sided ends.
pub fn growth_speed(series: &MetricSeries) -> Result<MetricSeries> {
    let n = series.samples.len();
    if n < 2 {
        return Err(PipelineError::SeriesTooShort { needed: 2, have: n });
    }
    let s = &series.samples;
    let mut speeds = Vec::with_capacity(n);
    for i in 0..n {
        let v = if i == 0 {
            (s[1].1 - s[0].1) / (s[1].0 - s[0].0)
        } else if i == n - 1 {
            (s[n - 1].1 - s[n - 2].1) / (s[n - 1].0 - s[n - 2].0)
        } else {
            (s[i + 1].1 - s[i - 1].1) / (s[i + 1].0 - s[i - 1].0)
        };
        speeds.push(v);
    }
    Ok(series.with_values(
        &format!("{}_speed", series.metric_name),
        "mm/h",
        speeds,
    ))
}

/// Value minus centered running median over `window_hours` (clamped at
/// the edges).
pub fn detrend(series: &MetricSeries, window_hours: f64) -> Result<MetricSeries> {
    let n = series.samples.len();
    if n < 3 {
        return Err(PipelineError::SeriesTooShort { needed: 3, have: n });
    }
    let times = series.times();
    let values = series.values();
    let half = window_hours / 2.0;
    let mut out = Vec::with_capacity(n);
    let mut window: Vec<f64> = Vec::new();
    for i in 0..n {
        window.clear();
        for j in 0..n {
            if (times[j] - times[i]).abs() <= half {
                window.push(values[j]);
            }
        }
        if window.len() < 3 {
            return Err(PipelineError::SeriesTooShort {
                needed: 3,
                have: window.len(),
            });
        }
        window.sort_by(f64::total_cmp);
        let m = window.len();
        let median = if m % 2 == 1 {
            window[m / 2]
        } else {
            0.5 * (window[m / 2 - 1] + window[m / 2])
        };
        out.push(values[i] - median);
    }
    Ok(series.with_values(
        &format!("{}_detrended", series.metric_name),
        &series.units,
        out,
    ))
}

/// One-sided amplitude spectrum indexed by period in hours. The series is
/// resampled to a uniform grid by linear interpolation first.
pub fn fourier_components(series: &MetricSeries) -> Result<Vec<(f64, f64)>> {
    let n = series.samples.len();
    if n < 16 {
        return Err(PipelineError::SeriesTooShort { needed: 16, have: n });
    }
    let times = series.times();
    let t0 = times[0];
    let t1 = times[n - 1];
    let dt = (t1 - t0) / (n - 1) as f64;
    let uniform: Vec<f64> = (0..n)
        .map(|i| interp_linear(series, t0 + i as f64 * dt))
        .collect();

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let mut buf: Vec<Complex<f64>> = uniform
        .iter()
        .map(|&v| Complex::new(v, 0.0))
        .collect();
    fft.process(&mut buf);

    let duration = dt * n as f64;
    let mut spectrum = Vec::with_capacity(n / 2);
    for (k, c) in buf.iter().enumerate().take(n / 2 + 1).skip(1) {
        let period_hours = duration / k as f64;
        // one-sided amplitude; the Nyquist bin (even n) is not doubled
        let factor = if n % 2 == 0 && k == n / 2 { 1.0 } else { 2.0 };
        spectrum.push((period_hours, factor * c.norm() / n as f64));
    }
    Ok(spectrum)
}

fn interp_linear(series: &MetricSeries, t: f64) -> f64 {
    let s = &series.samples;
    if t <= s[0].0 {
        return s[0].1;
    }
    if t >= s[s.len() - 1].0 {
        return s[s.len() - 1].1;
    }
    let idx = s.partition_point(|&(st, _)| st <= t);
    let (t0, v0) = s[idx - 1];
    let (t1, v1) = s[idx];
    v0 + (v1 - v0) * (t - t0) / (t1 - t0)
}

/// Zeroes every nonzero run whose time span is below `min_hours`; a
/// structure that never persists that long disappears entirely.
pub fn persistence_filter(series: &MetricSeries, min_hours: f64) -> MetricSeries {
    let s = &series.samples;
    let mut values = series.values();
    let mut i = 0;
    while i < s.len() {
        if values[i] != 0.0 {
            let start = i;
            while i < s.len() && values[i] != 0.0 {
                i += 1;
            }
            let span = s[i - 1].0 - s[start].0;
            if span < min_hours {
                for v in &mut values[start..i] {
                    *v = 0.0;
                }
            }
        } else {
            i += 1;
        }
    }
    series.with_values(&series.metric_name, &series.units, values)
}

/// Running maximum; length-type metrics cannot shrink.
pub fn enforce_monotone(series: &MetricSeries) -> MetricSeries {
    let mut best = f64::NEG_INFINITY;
    let values = series
        .values()
        .into_iter()
        .map(|v| {
            best = best.max(v);
            best
        })
        .collect();
    series.with_values(&series.metric_name, &series.units, values)
}
