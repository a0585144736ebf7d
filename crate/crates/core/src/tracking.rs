//! Screening-mode multi-plant tracking: seed detection, Kalman
//! prediction, Hungarian association, track lifecycle, and quality
//! control.

use std::collections::{BTreeSet, HashMap};

use nalgebra::{SMatrix, SVector};

use crate::grid::connected_components;
use crate::hungarian;
use crate::mask::LabelMask;

type State = SVector<f64, 7>;
type Cov = SMatrix<f64, 7, 7>;
type Meas = SVector<f64, 4>;

/// One connected blob of non-background pixels.
#[derive(Debug, Clone)]
pub struct Detection {
    /// (cx, cy, w, h) in pixels
    pub bbox: (f64, f64, f64, f64),
    pub area_px: usize,
    pub classes_present: BTreeSet<u8>,
}

impl Detection {
    fn measurement(&self) -> Meas {
        let (cx, cy, w, h) = self.bbox;
        Meas::new(cx, cy, w * h, w / h)
    }
}

/// One Detection per 8-connected non-background component with area >=
/// `min_area_px`; bounding boxes are tight.
pub fn detect(mask: &LabelMask, min_area_px: usize) -> Vec<Detection> {
    let fg = mask.class_mask(&[1, 2, 3, 4, 5, 6]);
    connected_components(&fg)
        .into_iter()
        .filter(|c| c.area() >= min_area_px)
        .map(|c| {
            let (x0, y0, x1, y1) = c.bbox;
            let classes_present: BTreeSet<u8> =
                c.pixels.iter().map(|&(x, y)| mask.get(x, y)).collect();
            Detection {
                bbox: (
                    (x0 + x1) as f64 / 2.0,
                    (y0 + y1) as f64 / 2.0,
                    (x1 - x0 + 1) as f64,
                    (y1 - y0 + 1) as f64,
                ),
                area_px: c.area(),
                classes_present,
            }
        })
        .collect()
}

/// Intersection-over-union of two (cx, cy, w, h) boxes.
pub fn iou(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64)) -> f64 {
    let (ax0, ay0, ax1, ay1) = (a.0 - a.2 / 2.0, a.1 - a.3 / 2.0, a.0 + a.2 / 2.0, a.1 + a.3 / 2.0);
    let (bx0, by0, bx1, by1) = (b.0 - b.2 / 2.0, b.1 - b.3 / 2.0, b.0 + b.2 / 2.0, b.1 + b.3 / 2.0);
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    let union = a.2 * a.3 + b.2 * b.3 - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Constant-velocity Kalman track over (cx, cy, scale, aspect) with
/// velocities on position and scale; the canonical SORT model.
#[derive(Debug, Clone)]
pub struct KalmanTrack {
    pub id: usize,
    state: State,
    covariance: Cov,
    pub age: usize,
    pub hits: usize,
    pub time_since_update: usize,
    pub qc_flags: BTreeSet<QcFlag>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum QcFlag {
    Touching,
    AbnormalMotion,
}

fn transition() -> Cov {
    let mut f = Cov::identity();
    f[(0, 4)] = 1.0;
    f[(1, 5)] = 1.0;
    f[(2, 6)] = 1.0;
    f
}

fn measurement_matrix() -> SMatrix<f64, 4, 7> {
    let mut h = SMatrix::<f64, 4, 7>::zeros();
    h[(0, 0)] = 1.0;
    h[(1, 1)] = 1.0;
    h[(2, 2)] = 1.0;
    h[(3, 3)] = 1.0;
    h
}

fn process_noise() -> Cov {
    Cov::from_diagonal(&SVector::<f64, 7>::from_row_slice(&[
        1.0, 1.0, 1.0, 1.0, 0.01, 0.01, 1e-4,
    ]))
}

fn measurement_noise() -> SMatrix<f64, 4, 4> {
    SMatrix::<f64, 4, 4>::from_diagonal(&SVector::<f64, 4>::from_row_slice(&[
        1.0, 1.0, 10.0, 10.0,
    ]))
}

impl KalmanTrack {
    pub fn from_detection(id: usize, det: &Detection) -> Self {
        let m = det.measurement();
        let mut state = State::zeros();
        state.fixed_rows_mut::<4>(0).copy_from(&m);
        let covariance = Cov::from_diagonal(&SVector::<f64, 7>::from_row_slice(&[
            10.0, 10.0, 10.0, 10.0, 1e4, 1e4, 1e4,
        ]));
        Self {
            id,
            state,
            covariance,
            age: 0,
            hits: 1,
            time_since_update: 0,
            qc_flags: BTreeSet::new(),
        }
    }

    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        let (cx, cy, s, r) = (self.state[0], self.state[1], self.state[2], self.state[3]);
        let w = (s * r).abs().sqrt();
        let h = if w > 0.0 { s / w } else { 0.0 };
        (cx, cy, w, h)
    }

    pub fn position(&self) -> (f64, f64) {
        (self.state[0], self.state[1])
    }

    pub fn covariance_trace(&self) -> f64 {
        self.covariance.trace()
    }

    /// Constant-velocity propagation; covariance grows by process noise.
    pub fn predict(&mut self) {
        let f = transition();
        // scale cannot go negative through velocity
        if self.state[2] + self.state[6] <= 0.0 {
            self.state[6] = 0.0;
        }
        self.state = f * self.state;
        self.covariance = f * self.covariance * f.transpose() + process_noise();
        self.age += 1;
        self.time_since_update += 1;
    }

    /// Standard Kalman measurement update.
    pub fn update(&mut self, det: &Detection) {
        let h = measurement_matrix();
        let z = det.measurement();
        let y = z - h * self.state;
        let s = h * self.covariance * h.transpose() + measurement_noise();
        let s_inv = s.try_inverse().expect("innovation covariance invertible");
        let k = self.covariance * h.transpose() * s_inv;
        self.state += k * y;
        self.covariance = (Cov::identity() - k * h) * self.covariance;
        self.hits += 1;
        self.time_since_update = 0;
    }
}

/// Hungarian association on 1 - IoU; pairs under the IoU threshold are
/// broken and reported unmatched.
pub fn associate(
    tracks: &[KalmanTrack],
    detections: &[Detection],
    iou_threshold: f64,
) -> (Vec<(usize, usize)>, Vec<usize>, Vec<usize>) {
    if tracks.is_empty() || detections.is_empty() {
        return (
            Vec::new(),
            (0..tracks.len()).collect(),
            (0..detections.len()).collect(),
        );
    }
    let mut costs = Vec::with_capacity(tracks.len() * detections.len());
    for t in tracks {
        for d in detections {
            costs.push(1.0 - iou(t.bbox(), d.bbox));
        }
    }
    let pairs = hungarian::assign(&costs, tracks.len(), detections.len());
    let mut matches = Vec::new();
    let mut matched_t = vec![false; tracks.len()];
    let mut matched_d = vec![false; detections.len()];
    for (ti, di) in pairs {
        if iou(tracks[ti].bbox(), detections[di].bbox) >= iou_threshold {
            matches.push((ti, di));
            matched_t[ti] = true;
            matched_d[di] = true;
        }
    }
    let unmatched_tracks = (0..tracks.len()).filter(|&i| !matched_t[i]).collect();
    let unmatched_detections = (0..detections.len()).filter(|&i| !matched_d[i]).collect();
    (matches, unmatched_tracks, unmatched_detections)
}

#[derive(Debug, Clone)]
pub struct TrackerConfig {
    pub iou_threshold: f64,
    pub min_hits: usize,
    pub max_age: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.3,
            min_hits: 3,
            max_age: 20,
        }
    }
}

/// Per-frame state of one confirmed track.
#[derive(Debug, Clone)]
pub struct TrackSnapshot {
    pub frame: usize,
    pub track_id: usize,
    pub bbox: (f64, f64, f64, f64),
    pub matched: bool,
}

/// SORT-style tracker state over a sequence.
#[derive(Debug, Default)]
pub struct Tracker {
    pub tracks: Vec<KalmanTrack>,
    next_id: usize,
    pub config: TrackerConfig,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Self {
        Self {
            tracks: Vec::new(),
            next_id: 0,
            config,
        }
    }

    /// predict -> associate -> update; spawns tracks for unmatched
    /// detections, retires stale tracks, returns snapshots of confirmed
    /// tracks.
    pub fn step(&mut self, detections: &[Detection], frame_index: usize) -> Vec<TrackSnapshot> {
        for t in &mut self.tracks {
            t.predict();
        }
        let (matches, _unmatched_tracks, unmatched_detections) =
            associate(&self.tracks, detections, self.config.iou_threshold);
        let mut matched_flags = vec![false; self.tracks.len()];
        for &(ti, di) in &matches {
            self.tracks[ti].update(&detections[di]);
            matched_flags[ti] = true;
        }
        for &di in &unmatched_detections {
            self.tracks
                .push(KalmanTrack::from_detection(self.next_id, &detections[di]));
            matched_flags.push(true);
            self.next_id += 1;
        }
        let max_age = self.config.max_age;
        let keep: Vec<bool> = self
            .tracks
            .iter()
            .map(|t| t.time_since_update <= max_age)
            .collect();
        let mut idx = 0;
        self.tracks.retain(|_| {
            let k = keep[idx];
            idx += 1;
            k
        });
        self.tracks
            .iter()
            .zip({
                let mut idx2 = 0;
                keep.iter().filter(|&&k| k).map(move |_| {
                    let i = idx2;
                    idx2 += 1;
                    i
                })
            })
            .filter(|(t, _)| t.hits >= self.config.min_hits)
            .map(|(t, _)| TrackSnapshot {
                frame: frame_index,
                track_id: t.id,
                bbox: t.bbox(),
                matched: t.time_since_update == 0,
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct QcConfig {
    /// consecutive overlapping frames before flagging contact
    pub touching_frames: usize,
    /// maximum plausible centroid displacement per frame, mm
    pub v_max_mm_per_frame: f64,
}

impl Default for QcConfig {
    fn default() -> Self {
        Self {
            touching_frames: 4,
            v_max_mm_per_frame: 1.0,
        }
    }
}

/// Flags assigned to (track_id, from_frame) pairs after a completed pass.
#[derive(Debug, Clone, Default)]
pub struct QcReport {
    /// track id -> frame index from which the flag applies
    pub touching_from: HashMap<usize, usize>,
    pub abnormal_motion: BTreeSet<usize>,
}

impl QcReport {
    pub fn is_flagged(&self, track_id: usize, frame: usize) -> bool {
        self.abnormal_motion.contains(&track_id)
            || self
                .touching_from
                .get(&track_id)
                .map_or(false, |&f| frame >= f)
    }
}

/// Post-pass quality control: sustained bbox contact flags both tracks
/// from first contact onward; a single over-speed jump flags the track
/// outright.
pub fn quality_control(
    snapshots: &[TrackSnapshot],
    config: &QcConfig,
    mm_per_pixel: f64,
) -> QcReport {
    let mut report = QcReport::default();
    let mut by_frame: HashMap<usize, Vec<&TrackSnapshot>> = HashMap::new();
    let mut frames: Vec<usize> = Vec::new();
    for s in snapshots {
        by_frame.entry(s.frame).or_insert_with(|| {
            frames.push(s.frame);
            Vec::new()
        });
        by_frame.get_mut(&s.frame).unwrap().push(s);
    }
    frames.sort();

    // touching: run length of consecutive overlapping frames per pair
    let mut contact_run: HashMap<(usize, usize), (usize, usize)> = HashMap::new(); // pair -> (run, first_frame)
    for &frame in &frames {
        let snaps = &by_frame[&frame];
        let mut touching_now: BTreeSet<(usize, usize)> = BTreeSet::new();
        for i in 0..snaps.len() {
            for j in i + 1..snaps.len() {
                let (a, b) = (snaps[i], snaps[j]);
                if iou(a.bbox, b.bbox) > 0.0 {
                    let pair = (a.track_id.min(b.track_id), a.track_id.max(b.track_id));
                    touching_now.insert(pair);
                    let entry = contact_run.entry(pair).or_insert((0, frame));
                    entry.0 += 1;
                    if entry.0 >= config.touching_frames {
                        let first = entry.1;
                        for id in [pair.0, pair.1] {
                            report
                                .touching_from
                                .entry(id)
                                .and_modify(|f| *f = (*f).min(first))
                                .or_insert(first);
                        }
                    }
                }
            }
        }
        contact_run.retain(|pair, _| touching_now.contains(pair));
    }

    // abnormal motion: per-track displacement between consecutive snapshots
    let mut by_track: HashMap<usize, Vec<(usize, f64, f64)>> = HashMap::new();
    for s in snapshots {
        by_track
            .entry(s.track_id)
            .or_default()
            .push((s.frame, s.bbox.0, s.bbox.1));
    }
    for (id, mut pts) in by_track {
        pts.sort_by_key(|&(f, _, _)| f);
        for w in pts.windows(2) {
            let frames_apart = (w[1].0 - w[0].0).max(1) as f64;
            let d_px = ((w[1].1 - w[0].1).powi(2) + (w[1].2 - w[0].2).powi(2)).sqrt();
            if d_px * mm_per_pixel / frames_apart > config.v_max_mm_per_frame {
                report.abnormal_motion.insert(id);
                break;
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::LabelMask;

    fn seed_mask(positions: &[(usize, usize)]) -> LabelMask {
        let mut m = LabelMask::zeros(200, 200);
        for &(x, y) in positions {
            for dy in 0..3 {
                for dx in 0..3 {
                    m.set(x + dx, y + dy, 3);
                }
            }
        }
        m
    }

    fn det_at(cx: f64, cy: f64, w: f64, h: f64) -> Detection {
        Detection {
            bbox: (cx, cy, w, h),
            area_px: (w * h) as usize,
            classes_present: BTreeSet::from([3]),
        }
    }

    #[test]
    fn detect_finds_separated_seeds() {
        let dets = detect(&seed_mask(&[(10, 10), (50, 50)]), 5);
        assert_eq!(dets.len(), 2);
        assert!((dets[0].bbox.0 - 11.0).abs() < 1e-12);
        assert_eq!(dets[0].area_px, 9);
    }

    #[test]
    fn detect_respects_min_area_and_empty() {
        assert!(detect(&LabelMask::zeros(10, 10), 1).is_empty());
        let dets = detect(&seed_mask(&[(10, 10)]), 10);
        assert!(dets.is_empty());
    }

    #[test]
    fn predict_moves_by_velocity_and_grows_covariance() {
        let mut t = KalmanTrack::from_detection(0, &det_at(50.0, 50.0, 10.0, 10.0));
        let trace0 = t.covariance_trace();
        t.predict();
        assert!((t.position().0 - 50.0).abs() < 1e-9); // zero velocity
        assert!(t.covariance_trace() > trace0);

        // inject velocity
        t.state[4] = 2.0;
        t.predict();
        assert!((t.position().0 - 52.0).abs() < 1e-9);
    }

    #[test]
    fn update_with_predicted_measurement_is_identity_on_mean() {
        let mut t = KalmanTrack::from_detection(0, &det_at(40.0, 60.0, 8.0, 12.0));
        t.predict();
        let before = t.state;
        let (cx, cy, w, h) = t.bbox();
        t.update(&det_at(cx, cy, w, h));
        for i in 0..7 {
            assert!((t.state[i] - before[i]).abs() < 1e-6, "component {i}");
        }
    }

    #[test]
    fn associate_prefers_diagonal() {
        let t0 = KalmanTrack::from_detection(0, &det_at(10.0, 10.0, 4.0, 4.0));
        let t1 = KalmanTrack::from_detection(1, &det_at(30.0, 30.0, 4.0, 4.0));
        let dets = vec![det_at(10.5, 10.0, 4.0, 4.0), det_at(29.5, 30.0, 4.0, 4.0)];
        let (matches, ut, ud) = associate(&[t0, t1], &dets, 0.3);
        assert_eq!(matches, vec![(0, 0), (1, 1)]);
        assert!(ut.is_empty() && ud.is_empty());
    }

    #[test]
    fn associate_no_tracks_all_unmatched() {
        let dets = vec![det_at(10.0, 10.0, 4.0, 4.0)];
        let (m, ut, ud) = associate(&[], &dets, 0.3);
        assert!(m.is_empty() && ut.is_empty());
        assert_eq!(ud, vec![0]);
    }

    #[test]
    fn first_frames_below_min_hits_unconfirmed() {
        let mut tracker = Tracker::new(TrackerConfig::default());
        let dets = vec![det_at(10.0, 10.0, 4.0, 4.0)];
        assert!(tracker.step(&dets, 0).is_empty());
        assert!(tracker.step(&dets, 1).is_empty());
        assert_eq!(tracker.step(&dets, 2).len(), 1);
    }

    #[test]
    fn dropout_recovered_within_max_age() {
        let mut tracker = Tracker::new(TrackerConfig {
            max_age: 5,
            ..Default::default()
        });
        let dets = vec![det_at(10.0, 10.0, 4.0, 4.0)];
        let mut id = None;
        for f in 0..10 {
            let snaps = tracker.step(&dets, f);
            if let Some(s) = snaps.first() {
                id = Some(s.track_id);
            }
        }
        // 2-frame occlusion
        for f in 10..12 {
            tracker.step(&[], f);
        }
        let snaps = tracker.step(&dets, 12);
        assert_eq!(snaps.len(), 1);
        assert_eq!(Some(snaps[0].track_id), id);
    }

    #[test]
    fn touching_flags_both_tracks_from_first_contact() {
        let mut snapshots = Vec::new();
        for f in 0..10 {
            snapshots.push(TrackSnapshot {
                frame: f,
                track_id: 0,
                bbox: (10.0, 10.0, 6.0, 6.0),
                matched: true,
            });
            snapshots.push(TrackSnapshot {
                frame: f,
                track_id: 1,
                bbox: (14.0, 10.0, 6.0, 6.0), // overlaps track 0
                matched: true,
            });
        }
        let report = quality_control(&snapshots, &QcConfig::default(), 0.04);
        assert!(report.is_flagged(0, 0));
        assert!(report.is_flagged(1, 5));
    }

    #[test]
    fn isolated_stationary_track_unflagged() {
        let snapshots: Vec<TrackSnapshot> = (0..20)
            .map(|f| TrackSnapshot {
                frame: f,
                track_id: 3,
                bbox: (50.0, 50.0, 5.0, 5.0),
                matched: true,
            })
            .collect();
        let report = quality_control(&snapshots, &QcConfig::default(), 0.04);
        assert!(!report.is_flagged(3, 10));
    }

    #[test]
    fn jump_flags_abnormal_motion() {
        let mut snapshots: Vec<TrackSnapshot> = (0..5)
            .map(|f| TrackSnapshot {
                frame: f,
                track_id: 0,
                bbox: (50.0, 50.0, 5.0, 5.0),
                matched: true,
            })
            .collect();
        snapshots.push(TrackSnapshot {
            frame: 5,
            track_id: 0,
            bbox: (100.0, 50.0, 5.0, 5.0), // 50 px jump at 0.04 mm/px = 2 mm
            matched: true,
        });
        let report = quality_control(&snapshots, &QcConfig::default(), 0.04);
        assert!(report.is_flagged(0, 0));
    }
}
