//! Mode orchestration: per-plant standard analysis, screening
//! tracking + germination, evaluation, and report bundle emission.
//! Reruns on identical inputs produce byte-identical bundles.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::json;

use crate::config::{ExperimentConfig, GroupSpec, Mode};
use crate::error::{PipelineError, Result};
use crate::eval;
use crate::fda;
use crate::fusion::{clean_binary, AccumulatorState};
use crate::graph::{build_graph, LateralIdentityMap, RootGraph};
use crate::grid::connected_components;
use crate::mask::{FrameSequence, LabelMask, RoiSpec, CLASS_LATERAL_ROOT, CLASS_MAIN_ROOT, CLASS_SEED};
use crate::metrics::{
    self, AngleRecord, MetricSeries,
};
use crate::rsml;
use crate::screening;
use crate::skeleton::{prune_spurs, thin};
use crate::stats::{fmt_sig, mann_whitney, significance_marker};
use crate::tracking::{
    detect, quality_control, QcConfig, QcReport, TrackSnapshot, Tracker, TrackerConfig,
};

#[derive(Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub warnings: Vec<String>,
}

pub fn run(config: &ExperimentConfig) -> Result<RunSummary> {
    config.validate()?;
    match config.mode {
        Mode::Standard => run_standard(config),
        Mode::Screening => run_screening(config),
        Mode::Eval => run_eval(config),
        Mode::Fpca => run_fpca(config),
    }
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| PipelineError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, content).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_sig).unwrap_or_default()
}

// ---------------------------------------------------------------- standard

struct PlantResult {
    plant_id: String,
    series: BTreeMap<String, MetricSeries>,
    angles: Vec<AngleRecord>,
    fourier: Vec<(f64, f64)>,
    rsml_text: Option<String>,
    warnings: Vec<String>,
}

fn seed_position(first: &LabelMask, roi: &RoiSpec) -> Option<(usize, usize)> {
    if let Some(hint) = roi.seed_hint {
        return Some(hint);
    }
    let seeds = connected_components(&first.class_mask(&[CLASS_SEED]));
    seeds
        .iter()
        .max_by_key(|c| c.area())
        .map(|c| {
            let (cx, cy) = c.centroid();
            (cx.round() as usize, cy.round() as usize)
        })
}

fn analyze_plant(
    seq: &FrameSequence,
    roi: &RoiSpec,
    config: &ExperimentConfig,
) -> Result<PlantResult> {
    let id = roi.plant_id.clone();
    let mut warnings = Vec::new();
    let alpha =
        AccumulatorState::alpha_for_interval(config.fusion.alpha, seq.interval_hours);
    let mut acc = AccumulatorState::new(alpha);
    let mut series: BTreeMap<String, MetricSeries> = BTreeMap::new();
    let push = |map: &mut BTreeMap<String, MetricSeries>, name: &str, t: f64, v: f64| {
        map.entry(name.to_string())
            .or_insert_with(|| MetricSeries::new(&id, name, ""))
            .push(t, v);
    };

    let first_crop = seq.frames[0].0.crop(roi)?;
    let seed = seed_position(&first_crop, roi).ok_or_else(|| {
        PipelineError::Config(format!("plant {:?}: no seed found in ROI", roi.plant_id))
    })?;

    let mut prev_main: Option<Vec<(usize, usize)>> = None;
    let mut identity = LateralIdentityMap::default();
    let mut angles: Vec<AngleRecord> = Vec::new();
    let mut final_graph: Option<RootGraph> = None;

    for (frame_idx, (mask, t)) in seq.frames.iter().enumerate() {
        let crop = mask.crop(roi)?;
        acc.accumulate(&crop).map_err(|e| PipelineError::Frame {
            frame_index: frame_idx,
            message: e.to_string(),
        })?;
        let fused = acc.fuse(&crop, config.fusion.threshold);
        let root_bin = fused.class_mask(&[CLASS_MAIN_ROOT, CLASS_LATERAL_ROOT]);
        let cleaned = clean_binary(&root_bin, config.fusion.min_component_px);
        let zero_metrics = [
            "main_root_length_mm",
            "lateral_root_length_mm",
            "total_root_length_mm",
            "lateral_root_count",
            "discrete_lateral_density_per_cm",
            "main_over_total",
        ];
        if cleaned.count_on() == 0 {
            for m in zero_metrics {
                push(&mut series, m, *t, 0.0);
            }
            continue;
        }
        let skel = prune_spurs(&thin(&cleaned), config.skeleton.min_spur_px);
        if skel.count_on() == 0 {
            for m in zero_metrics {
                push(&mut series, m, *t, 0.0);
            }
            continue;
        }
        let mut graph = match build_graph(
            &skel,
            seed,
            seq.mm_per_pixel,
            config.graph.snap_radius_px,
        ) {
            Ok(g) => g,
            Err(e) => {
                warnings.push(format!("{id}: frame {frame_idx}: {e}"));
                for m in zero_metrics {
                    push(&mut series, m, *t, 0.0);
                }
                continue;
            }
        };
        graph.classify_main(prev_main.as_deref());
        let arch = metrics::basic_architecture(&graph);
        for (k, v) in &arch {
            push(&mut series, k, *t, *v);
        }
        let hull = metrics::convex_hull_metrics(
            &skel.on_pixels(),
            seq.mm_per_pixel,
            arch["total_root_length_mm"],
        );
        for (k, v) in &hull {
            push(&mut series, k, *t, *v);
        }

        let main = graph.main_polyline();
        if main.len() >= 2 {
            let base = (main[0].0 as f64, main[0].1 as f64);
            let tip = {
                let p = main[main.len() - 1];
                (p.0 as f64, p.1 as f64)
            };
            if let Ok(a) = metrics::base_tip_angle(base, tip) {
                push(&mut series, "main_base_tip_angle_deg", *t, a);
            }
        }
        let chains = graph.laterals();
        let ids = identity.match_laterals(&chains, config.graph.lateral_match_tolerance_px);
        for (chain, track_id) in chains.iter().zip(ids) {
            let base = (chain.base_px.0 as f64, chain.base_px.1 as f64);
            let tip = (chain.tip_px.0 as f64, chain.tip_px.1 as f64);
            if let Ok(bt) = metrics::base_tip_angle(base, tip) {
                angles.push(AngleRecord {
                    lateral_track_id: track_id,
                    time_hours: *t,
                    base_tip_deg: bt,
                    emergence_deg: metrics::emergence_angle(
                        &chain.polyline,
                        config.graph.emergence_d_mm,
                        seq.mm_per_pixel,
                    ),
                    d_mm: config.graph.emergence_d_mm,
                });
            }
        }
        prev_main = Some(main);
        final_graph = Some(graph);
    }

    // post-processing: monotone lengths, persistent lateral count
    for name in [
        "main_root_length_mm",
        "lateral_root_length_mm",
        "total_root_length_mm",
    ] {
        if let Some(s) = series.get(name) {
            series.insert(name.to_string(), metrics::enforce_monotone(s));
        }
    }
    if let Some(s) = series.get("lateral_root_count") {
        series.insert(
            "lateral_root_count".to_string(),
            metrics::persistence_filter(s, config.filters.persistence_hours),
        );
    }

    let mut fourier = Vec::new();
    if let Some(mr) = series.get("main_root_length_mm") {
        match metrics::growth_speed(mr) {
            Ok(speed) => {
                match metrics::detrend(&speed, config.filters.detrend_window_hours) {
                    Ok(detrended) => {
                        match metrics::fourier_components(&detrended) {
                            Ok(f) => fourier = f,
                            Err(e) => warnings.push(format!("{id}: fourier skipped: {e}")),
                        }
                        series.insert(
                            "growth_speed_detrended_mm_per_h".into(),
                            detrended,
                        );
                    }
                    Err(e) => warnings.push(format!("{id}: detrend skipped: {e}")),
                }
                series.insert("growth_speed_mm_per_h".into(), speed);
            }
            Err(e) => warnings.push(format!("{id}: growth speed skipped: {e}")),
        }
    }

    let rsml_text = match final_graph {
        Some(g) => {
            let capture = seq.frames.last().unwrap().1;
            match rsml::document_from_graph(&g, &id, capture).and_then(|d| rsml::write_rsml(&d))
            {
                Ok(text) => Some(text),
                Err(e) => {
                    warnings.push(format!("{id}: rsml skipped: {e}"));
                    None
                }
            }
        }
        None => {
            warnings.push(format!("{id}: no root detected in any frame"));
            None
        }
    };

    Ok(PlantResult {
        plant_id: roi.plant_id.clone(),
        series,
        angles,
        fourier,
        rsml_text,
        warnings,
    })
}

fn metric_csv(plants: &[&PlantResult], metric: &str) -> String {
    let mut times: Vec<u64> = Vec::new();
    for p in plants {
        if let Some(s) = p.series.get(metric) {
            for &(t, _) in &s.samples {
                times.push(t.to_bits());
            }
        }
    }
    times.sort_by(|a, b| f64::from_bits(*a).total_cmp(&f64::from_bits(*b)));
    times.dedup();
    let mut out = String::from("time_hours");
    for p in plants {
        out.push(',');
        out.push_str(&p.plant_id);
    }
    out.push('\n');
    for tb in times {
        let t = f64::from_bits(tb);
        out.push_str(&fmt_sig(t));
        for p in plants {
            out.push(',');
            if let Some(s) = p.series.get(metric) {
                if let Some(&(_, v)) = s.samples.iter().find(|(st, _)| st.to_bits() == tb) {
                    out.push_str(&fmt_sig(v));
                }
            }
        }
        out.push('\n');
    }
    out
}

fn value_at(series: &MetricSeries, t: f64) -> Option<f64> {
    series
        .samples
        .iter()
        .min_by(|a, b| (a.0 - t).abs().total_cmp(&(b.0 - t).abs()))
        .map(|&(_, v)| v)
}

/// Mann-Whitney comparisons between every group pair at the report
/// times; returns (comparisons.csv text, summary lines).
fn comparisons(
    plants: &[&PlantResult],
    groups: &BTreeMap<String, Vec<String>>,
    metric_names: &[String],
    report_times: &[f64],
) -> (String, Vec<String>) {
    let mut csv = String::from(
        "metric,time_hours,group_a,group_b,n_a,n_b,u_statistic,p_value,significance\n",
    );
    let mut lines = Vec::new();
    let group_names: Vec<&String> = groups.keys().collect();
    for metric in metric_names {
        for &t in report_times {
            let values: BTreeMap<&String, Vec<f64>> = group_names
                .iter()
                .map(|&g| {
                    let vals = groups[g]
                        .iter()
                        .filter_map(|pid| {
                            plants
                                .iter()
                                .find(|p| &p.plant_id == pid)
                                .and_then(|p| p.series.get(metric))
                                .and_then(|s| value_at(s, t))
                        })
                        .collect();
                    (g, vals)
                })
                .collect();
            for (g, vals) in &values {
                if vals.is_empty() {
                    continue;
                }
                let n = vals.len() as f64;
                let mean = vals.iter().sum::<f64>() / n;
                let sd = if vals.len() > 1 {
                    (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
                } else {
                    0.0
                };
                lines.push(format!(
                    "{metric} @ {} h | {g}: n={} mean={} sd={}",
                    fmt_sig(t),
                    vals.len(),
                    fmt_sig(mean),
                    fmt_sig(sd)
                ));
            }
            for i in 0..group_names.len() {
                for j in i + 1..group_names.len() {
                    let (ga, gb) = (group_names[i], group_names[j]);
                    let (va, vb) = (&values[ga], &values[gb]);
                    if va.is_empty() || vb.is_empty() {
                        csv.push_str(&format!(
                            "{metric},{},{ga},{gb},{},{},,,\n",
                            fmt_sig(t),
                            va.len(),
                            vb.len()
                        ));
                        continue;
                    }
                    match mann_whitney(va, vb) {
                        Ok((u, p)) => {
                            let marker = significance_marker(p);
                            csv.push_str(&format!(
                                "{metric},{},{ga},{gb},{},{},{},{},{marker}\n",
                                fmt_sig(t),
                                va.len(),
                                vb.len(),
                                fmt_sig(u),
                                fmt_sig(p)
                            ));
                            lines.push(format!(
                                "{metric} @ {} h | {ga} vs {gb}: U={} p={}{}{}",
                                fmt_sig(t),
                                fmt_sig(u),
                                fmt_sig(p),
                                if marker.is_empty() { "" } else { " " },
                                marker
                            ));
                        }
                        Err(e) => lines.push(format!(
                            "{metric} @ {} h | {ga} vs {gb}: skipped ({e})",
                            fmt_sig(t)
                        )),
                    }
                }
            }
        }
    }
    (csv, lines)
}

fn write_fpca(
    out: &Path,
    label: &str,
    collection: &[MetricSeries],
    config: &ExperimentConfig,
) -> Result<Option<String>> {
    if collection.len() < 2 {
        return Ok(None);
    }
    let fda_cfg = config.fda.to_config()?;
    let sm = match fda::smooth(collection, &fda_cfg) {
        Ok(sm) => sm,
        Err(e) => return Ok(Some(format!("fpca {label}: {e}"))),
    };
    let dec = match fda::decompose(&sm, &fda_cfg) {
        Ok(d) => d,
        Err(e) => return Ok(Some(format!("fpca {label}: {e}"))),
    };
    let doc = json!({
        "metric": label,
        "grid_hours": dec.grid_hours,
        "mean_fn": dec.mean_fn,
        "components": dec.components,
        "explained_variance": dec.explained_variance,
        "plants": collection.iter().map(|s| s.plant_id.clone()).collect::<Vec<_>>(),
        "scores": dec.scores,
    });
    write_file(
        &out.join("fpca").join(format!("{label}.json")),
        &serde_json::to_string_pretty(&doc).unwrap(),
    )?;
    Ok(None)
}

fn run_standard(config: &ExperimentConfig) -> Result<RunSummary> {
    let manifest = config.manifest.as_ref().unwrap();
    let seq = FrameSequence::load(manifest)?;
    let out = &config.out_dir;
    fs::create_dir_all(out).map_err(|source| PipelineError::Io {
        path: out.clone(),
        source,
    })?;

    let results: Vec<Result<PlantResult>> = config
        .rois
        .par_iter()
        .map(|roi| analyze_plant(&seq, roi, config))
        .collect();
    let mut warnings = Vec::new();
    let mut plants: Vec<PlantResult> = Vec::new();
    for (roi, r) in config.rois.iter().zip(results) {
        match r {
            Ok(p) => {
                warnings.extend(p.warnings.clone());
                plants.push(p);
            }
            Err(e) => warnings.push(format!("plant {:?} skipped: {e}", roi.plant_id)),
        }
    }
    if plants.is_empty() {
        return Err(PipelineError::Config(
            "every plant failed; nothing to report".into(),
        ));
    }
    let plant_refs: Vec<&PlantResult> = plants.iter().collect();

    let metric_names: Vec<String> = {
        let mut names: Vec<String> = plants
            .iter()
            .flat_map(|p| p.series.keys().cloned())
            .collect();
        names.sort();
        names.dedup();
        names
    };
    for metric in &metric_names {
        write_file(
            &out.join("metrics").join(format!("{metric}.csv")),
            &metric_csv(&plant_refs, metric),
        )?;
    }
    for p in &plants {
        if let Some(text) = &p.rsml_text {
            write_file(&out.join("rsml").join(format!("{}.rsml", p.plant_id)), text)?;
        }
        if !p.angles.is_empty() {
            let mut csv =
                String::from("lateral_track_id,time_hours,base_tip_deg,emergence_deg\n");
            for a in &p.angles {
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    a.lateral_track_id,
                    fmt_sig(a.time_hours),
                    fmt_sig(a.base_tip_deg),
                    fmt_opt(a.emergence_deg)
                ));
            }
            write_file(
                &out.join("angles").join(format!("{}.csv", p.plant_id)),
                &csv,
            )?;
        }
        if !p.fourier.is_empty() {
            let mut csv = String::from("period_hours,amplitude\n");
            for &(period, amp) in &p.fourier {
                csv.push_str(&format!("{},{}\n", fmt_sig(period), fmt_sig(amp)));
            }
            write_file(
                &out.join("fourier").join(format!("{}.csv", p.plant_id)),
                &csv,
            )?;
        }
    }

    for metric in &metric_names {
        let collection: Vec<MetricSeries> = plants
            .iter()
            .filter_map(|p| p.series.get(metric).cloned())
            .filter(|s| s.samples.len() >= config.fda.degree + 2)
            .collect();
        if let Some(w) = write_fpca(out, metric, &collection, config)? {
            warnings.push(w);
        }
    }

    let groups: BTreeMap<String, Vec<String>> = {
        let mut g: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for p in &plants {
            g.entry(config.group_of(&p.plant_id))
                .or_default()
                .push(p.plant_id.clone());
        }
        g
    };
    let duration = seq.frames.last().unwrap().1;
    let report_times = config.report_times(duration);
    let (cmp_csv, mut summary_lines) =
        comparisons(&plant_refs, &groups, &metric_names, &report_times);
    write_file(&out.join("stats").join("comparisons.csv"), &cmp_csv)?;

    let mut summary = String::new();
    summary.push_str("statistics summary\n");
    summary.push_str("tests run on post-processed series (monotone lengths, persistence-filtered counts)\n");
    summary.push_str("significance: * p<0.05, ** p<0.001\n\n");
    summary.push_str(&summary_lines.join("\n"));
    summary.push('\n');
    if !warnings.is_empty() {
        summary.push_str("\nwarnings:\n");
        for w in &warnings {
            summary.push_str(&format!("  {w}\n"));
        }
    }
    summary_lines.clear();
    write_file(&out.join("stats").join("summary.txt"), &summary)?;

    Ok(RunSummary {
        out_dir: out.clone(),
        warnings,
    })
}

// --------------------------------------------------------------- screening

struct GroupOutcome {
    name: String,
    fit: screening::GerminationFit,
    snapshots: Vec<TrackSnapshot>,
    qc: QcReport,
    /// track id -> per-frame hypocotyl series (raw), plant area, root length
    hypocotyl_raw: BTreeMap<usize, MetricSeries>,
    plant_area: BTreeMap<usize, MetricSeries>,
    root_length: BTreeMap<usize, MetricSeries>,
    warnings: Vec<String>,
}

fn group_roi(group: &GroupSpec, width: usize, height: usize) -> RoiSpec {
    let (x, y, w, h) = group.region.unwrap_or((0, 0, width, height));
    RoiSpec {
        plant_id: group.name.clone(),
        x,
        y,
        w,
        h,
        seed_hint: None,
    }
}

fn analyze_group(
    seq: &FrameSequence,
    group: &GroupSpec,
    config: &ExperimentConfig,
) -> Result<GroupOutcome> {
    let roi = group_roi(group, seq.frames[0].0.width, seq.frames[0].0.height);
    let crops: Vec<(LabelMask, f64)> = seq
        .frames
        .iter()
        .map(|(m, t)| Ok((m.crop(&roi)?, *t)))
        .collect::<Result<_>>()?;
    let mut warnings = Vec::new();

    let mut tracker = Tracker::new(TrackerConfig {
        iou_threshold: config.tracking.iou_threshold,
        min_hits: config.tracking.min_hits,
        max_age: config.tracking.max_age,
    });
    let mut snapshots = Vec::new();
    for (i, (mask, _)) in crops.iter().enumerate() {
        let dets = detect(mask, config.tracking.min_area_px);
        snapshots.extend(tracker.step(&dets, i));
    }
    let qc = quality_control(
        &snapshots,
        &QcConfig {
            touching_frames: config.tracking.touching_frames,
            v_max_mm_per_frame: config.tracking.v_max_mm_per_frame,
        },
        seq.mm_per_pixel,
    );

    // track id -> first snapshot (for seed component lookup)
    let mut first_snap: BTreeMap<usize, &TrackSnapshot> = BTreeMap::new();
    for s in &snapshots {
        first_snap.entry(s.track_id).or_insert(s);
    }
    let seed_comps = connected_components(&crops[0].0.class_mask(&[CLASS_SEED]));

    let germ_cfg = screening::GerminationConfig {
        min_root_pixels: config.germination.min_root_pixels,
        min_consecutive_frames: config.germination.min_consecutive_frames,
    };
    let mut events: BTreeMap<usize, f64> = BTreeMap::new();
    let mut hypocotyl_raw = BTreeMap::new();
    let mut plant_area = BTreeMap::new();
    let mut root_length = BTreeMap::new();
    for (&track_id, snap) in &first_snap {
        let (cx, cy) = (snap.bbox.0, snap.bbox.1);
        let seed_comp = seed_comps.iter().min_by(|a, b| {
            let d = |c: &&crate::grid::Component| {
                let (x, y) = c.centroid();
                (x - cx).powi(2) + (y - cy).powi(2)
            };
            d(a).total_cmp(&d(b))
        });
        let Some(seed_comp) = seed_comp else {
            warnings.push(format!(
                "{}: track {track_id} has no seed component",
                group.name
            ));
            continue;
        };
        if let Some(t) = screening::detect_germination(&seed_comp.pixels, &crops, &germ_cfg) {
            events.insert(track_id, t);
        }

        // per-frame measures within the track's neighborhood
        let track_frames: BTreeMap<usize, (f64, f64, f64, f64)> = snapshots
            .iter()
            .filter(|s| s.track_id == track_id)
            .map(|s| (s.frame, s.bbox))
            .collect();
        let margin = 15.0;
        let mut hyp = MetricSeries::new(&format!("{track_id}"), "hypocotyl_raw_mm", "mm");
        let mut area = MetricSeries::new(&format!("{track_id}"), "plant_area_mm2", "mm2");
        let mut root = MetricSeries::new(&format!("{track_id}"), "root_length_mm", "mm");
        for (&frame, &(bx, by, bw, bh)) in &track_frames {
            let (mask, t) = &crops[frame];
            let x0 = ((bx - bw / 2.0 - margin).max(0.0)) as usize;
            let y0 = ((by - bh / 2.0 - margin).max(0.0)) as usize;
            let x1 = ((bx + bw / 2.0 + margin).min(mask.width as f64 - 1.0)) as usize;
            let y1 = ((by + bh / 2.0 + margin * 4.0).min(mask.height as f64 - 1.0)) as usize;
            let sub = mask.crop(&RoiSpec {
                plant_id: String::new(),
                x: x0,
                y: y0,
                w: x1 - x0 + 1,
                h: y1 - y0 + 1,
                seed_hint: None,
            })?;
            hyp.push(*t, screening::hypocotyl_length(&sub, seq.mm_per_pixel));
            let pm = screening::plant_measures(&sub, seq.mm_per_pixel);
            area.push(*t, pm.total_area_mm2);
            root.push(*t, pm.simple_root_length_mm);
        }
        if !hyp.samples.is_empty() {
            hypocotyl_raw.insert(track_id, hyp);
            plant_area.insert(track_id, area);
            root_length.insert(track_id, root);
        }
    }

    let total = group
        .expected_seed_count
        .unwrap_or_else(|| seed_comps.len().max(first_snap.len()));
    let horizon = crops.last().unwrap().1;
    let sample_times: Vec<f64> = crops.iter().map(|(_, t)| *t).collect();
    let fit = screening::fit_hill(&events, total.max(1), horizon, &sample_times)?;

    Ok(GroupOutcome {
        name: group.name.clone(),
        fit,
        snapshots,
        qc,
        hypocotyl_raw,
        plant_area,
        root_length,
        warnings,
    })
}

fn run_screening(config: &ExperimentConfig) -> Result<RunSummary> {
    let manifest = config.manifest.as_ref().unwrap();
    let seq = FrameSequence::load(manifest)?;
    let out = &config.out_dir;
    fs::create_dir_all(out).map_err(|source| PipelineError::Io {
        path: out.clone(),
        source,
    })?;

    let results: Vec<Result<GroupOutcome>> = config
        .groups
        .par_iter()
        .map(|g| analyze_group(&seq, g, config))
        .collect();
    let mut warnings = Vec::new();
    let mut outcomes = Vec::new();
    for (g, r) in config.groups.iter().zip(results) {
        match r {
            Ok(o) => {
                warnings.extend(o.warnings.clone());
                outcomes.push(o);
            }
            Err(e) => warnings.push(format!("group {:?} skipped: {e}", g.name)),
        }
    }

    let mut tracks_csv =
        String::from("group,frame,track_id,cx_px,cy_px,w_px,h_px,flagged\n");
    for o in &outcomes {
        for s in &o.snapshots {
            tracks_csv.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                o.name,
                s.frame,
                s.track_id,
                fmt_sig(s.bbox.0),
                fmt_sig(s.bbox.1),
                fmt_sig(s.bbox.2),
                fmt_sig(s.bbox.3),
                o.qc.is_flagged(s.track_id, s.frame) as u8
            ));
        }
    }
    write_file(&out.join("tracks").join("tracks.csv"), &tracks_csv)?;

    for o in &outcomes {
        let fit_json = json!({
            "group": o.name,
            "total_seeds": o.fit.total_seeds,
            "final_percent": o.fit.final_percent,
            "germinated": o.fit.per_seed_times.len(),
            "curve": o.fit.curve,
            "per_seed_times": o.fit.per_seed_times,
        });
        write_file(
            &out.join("germination").join(format!("{}.json", o.name)),
            &serde_json::to_string_pretty(&fit_json).unwrap(),
        )?;

        let mut germ_csv = String::from("time_hours,empirical_percent,fitted_percent\n");
        let mut sorted_events: Vec<f64> = o.fit.per_seed_times.values().copied().collect();
        sorted_events.sort_by(|a, b| a.total_cmp(b));
        for (_, t) in &seq.frames {
            let k = sorted_events.partition_point(|&e| e <= *t);
            let emp = k as f64 / o.fit.total_seeds as f64 * 100.0;
            germ_csv.push_str(&format!(
                "{},{},{}\n",
                fmt_sig(*t),
                fmt_sig(emp),
                fmt_opt(o.fit.curve.map(|c| c.eval(*t)))
            ));
        }
        write_file(
            &out.join("germination").join(format!("{}.csv", o.name)),
            &germ_csv,
        )?;

        // per-track measures: raw and monotone-cleaned hypocotyl both kept
        let write_track_metrics =
            |map: &BTreeMap<usize, MetricSeries>, file: &str| -> Result<()> {
                if map.is_empty() {
                    return Ok(());
                }
                let mut csv = String::from("time_hours");
                let ids: Vec<usize> = map.keys().copied().collect();
                for id in &ids {
                    csv.push_str(&format!(",track{id}"));
                }
                csv.push('\n');
                let times = map[&ids[0]].times();
                for (ri, t) in times.iter().enumerate() {
                    csv.push_str(&fmt_sig(*t));
                    for id in &ids {
                        csv.push(',');
                        if let Some(&(_, v)) = map[id].samples.get(ri) {
                            csv.push_str(&fmt_sig(v));
                        }
                    }
                    csv.push('\n');
                }
                write_file(&out.join("metrics").join(file), &csv)
            };
        write_track_metrics(&o.hypocotyl_raw, &format!("{}_hypocotyl_raw_mm.csv", o.name))?;
        let cleaned: BTreeMap<usize, MetricSeries> = o
            .hypocotyl_raw
            .iter()
            .map(|(&id, s)| (id, metrics::enforce_monotone(s)))
            .collect();
        write_track_metrics(&cleaned, &format!("{}_hypocotyl_mm.csv", o.name))?;
        write_track_metrics(&o.plant_area, &format!("{}_plant_area_mm2.csv", o.name))?;
        write_track_metrics(&o.root_length, &format!("{}_root_length_mm.csv", o.name))?;

        // FPCA across tracks on root length
        let collection: Vec<MetricSeries> = o
            .root_length
            .values()
            .filter(|s| s.samples.len() >= config.fda.degree + 2)
            .cloned()
            .collect();
        if let Some(w) = write_fpca(out, &format!("{}_root_length_mm", o.name), &collection, config)? {
            warnings.push(w);
        }
    }

    // group comparisons on germination times
    let mut summary = String::new();
    summary.push_str("screening summary\n");
    summary.push_str("significance: * p<0.05, ** p<0.001\n\n");
    for o in &outcomes {
        summary.push_str(&format!(
            "group {}: {}/{} germinated ({}%)\n",
            o.name,
            o.fit.per_seed_times.len(),
            o.fit.total_seeds,
            fmt_sig(o.fit.final_percent)
        ));
        if let Some(c) = &o.fit.curve {
            summary.push_str(&format!(
                "  hill fit: g0={} g_max={} n={} t50={} h tmgr={} h rmse={}\n",
                fmt_sig(c.g0),
                fmt_sig(c.g_max),
                fmt_sig(c.n),
                fmt_sig(c.t50),
                fmt_sig(c.tmgr),
                fmt_sig(c.rmse)
            ));
        }
        let flagged: Vec<usize> = o
            .snapshots
            .iter()
            .map(|s| s.track_id)
            .filter(|&id| o.qc.is_flagged(id, usize::MAX) || o.qc.abnormal_motion.contains(&id))
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        if !flagged.is_empty() {
            summary.push_str(&format!("  qc-flagged tracks: {flagged:?}\n"));
        }
    }
    for i in 0..outcomes.len() {
        for j in i + 1..outcomes.len() {
            let a: Vec<f64> = outcomes[i].fit.per_seed_times.values().copied().collect();
            let b: Vec<f64> = outcomes[j].fit.per_seed_times.values().copied().collect();
            if a.is_empty() || b.is_empty() {
                continue;
            }
            if let Ok((u, p)) = mann_whitney(&a, &b) {
                summary.push_str(&format!(
                    "germination times {} vs {}: U={} p={}{}{}\n",
                    outcomes[i].name,
                    outcomes[j].name,
                    fmt_sig(u),
                    fmt_sig(p),
                    if significance_marker(p).is_empty() { "" } else { " " },
                    significance_marker(p)
                ));
            }
        }
    }
    if !warnings.is_empty() {
        summary.push_str("\nwarnings:\n");
        for w in &warnings {
            summary.push_str(&format!("  {w}\n"));
        }
    }
    write_file(&out.join("stats").join("summary.txt"), &summary)?;

    Ok(RunSummary {
        out_dir: out.clone(),
        warnings,
    })
}

// -------------------------------------------------------------------- eval

fn run_eval(config: &ExperimentConfig) -> Result<RunSummary> {
    let out = &config.out_dir;
    let mut csv =
        String::from("pair,image_id,class,dice,hausdorff_mm,completeness,correctness\n");
    for (pi, pair) in config.eval_pairs.iter().enumerate() {
        let pred = FrameSequence::load(&pair.pred_manifest)?;
        let truth = FrameSequence::load(&pair.truth_manifest)?;
        if pred.frames.len() != truth.frames.len() {
            return Err(PipelineError::Eval(format!(
                "pair {pi}: frame count mismatch ({} vs {})",
                pred.frames.len(),
                truth.frames.len()
            )));
        }
        for (i, ((pm, _), (tm, _))) in pred.frames.iter().zip(&truth.frames).enumerate() {
            for class in 1..=6u8 {
                let pg = pm.class_mask(&[class]);
                let tg = tm.class_mask(&[class]);
                if pg.count_on() == 0 && tg.count_on() == 0 {
                    continue;
                }
                let d = eval::dice(&pg, &tg)?;
                let h = eval::hausdorff(&pg, &tg, truth.mm_per_pixel)?;
                let (comp, corr) =
                    eval::skeleton_completeness_correctness(&pg, &tg, config.eval_tolerance_px)?;
                csv.push_str(&format!(
                    "{pi},{i},{class},{},{},{},{}\n",
                    fmt_sig(d),
                    if h.is_finite() { fmt_sig(h) } else { "inf".into() },
                    fmt_opt(comp),
                    fmt_opt(corr)
                ));
            }
        }
    }
    write_file(&out.join("eval.csv"), &csv)?;
    Ok(RunSummary {
        out_dir: out.clone(),
        warnings: Vec::new(),
    })
}

// -------------------------------------------------------------------- fpca

/// Reads a metrics CSV as written by `metric_csv` (time_hours column
/// plus one column per plant) into per-plant series.
pub fn read_metric_csv(path: &Path, metric_name: &str) -> Result<Vec<MetricSeries>> {
    let text = fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| PipelineError::Config("empty metrics csv".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 2 || cols[0] != "time_hours" {
        return Err(PipelineError::Config(
            "metrics csv must start with a time_hours column".into(),
        ));
    }
    let mut series: Vec<MetricSeries> = cols[1..]
        .iter()
        .map(|&c| MetricSeries::new(c, metric_name, ""))
        .collect();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let t: f64 = fields[0]
            .parse()
            .map_err(|_| PipelineError::Config(format!("bad time value {:?}", fields[0])))?;
        for (k, s) in series.iter_mut().enumerate() {
            if let Some(f) = fields.get(k + 1) {
                if !f.is_empty() {
                    if let Ok(v) = f.parse() {
                        s.push(t, v);
                    }
                }
            }
        }
    }
    Ok(series)
}

fn run_fpca(config: &ExperimentConfig) -> Result<RunSummary> {
    let input = config.fpca_input.as_ref().unwrap();
    let label = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "metric".into());
    let series = read_metric_csv(input, &label)?;
    let out = &config.out_dir;
    fs::create_dir_all(out).map_err(|source| PipelineError::Io {
        path: out.clone(),
        source,
    })?;
    let mut warnings = Vec::new();
    match write_fpca(out, &label, &series, config)? {
        Some(w) => warnings.push(w),
        None if series.len() < 2 => {
            warnings.push("fewer than 2 series; no decomposition".into())
        }
        None => {}
    }
    Ok(RunSummary {
        out_dir: out.clone(),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn standard_config(manifest: PathBuf, out: PathBuf, rois: Vec<RoiSpec>) -> ExperimentConfig {
        let v = serde_json::json!({
            "mode": "standard",
            "manifest": manifest,
            "out_dir": out,
            "rois": rois.iter().map(|r| serde_json::json!({
                "plant_id": r.plant_id, "x": r.x, "y": r.y, "w": r.w, "h": r.h,
                "seed_hint": r.seed_hint,
            })).collect::<Vec<_>>(),
            "groups": [
                {"name": "g0", "plants": ["plant0"]},
                {"name": "g1", "plants": ["plant1"]},
            ],
        });
        serde_json::from_value(v).unwrap()
    }

    #[test]
    fn standard_end_to_end_bundle() {
        let dir = tempfile::tempdir().unwrap();
        let (seq, rois) = synth::generate_standard(&synth::StandardParams {
            width: 360,
            height: 300,
            n_frames: 80,
            ..Default::default()
        });
        let manifest = synth::write_sequence(&dir.path().join("seq"), &seq).unwrap();
        let out = dir.path().join("out");
        let cfg = standard_config(manifest, out.clone(), rois);
        let summary = run(&cfg).unwrap();
        assert!(out.join("metrics/main_root_length_mm.csv").exists());
        assert!(out.join("metrics/total_root_length_mm.csv").exists());
        assert!(out.join("rsml/plant0.rsml").exists());
        assert!(out.join("rsml/plant1.rsml").exists());
        assert!(out.join("stats/comparisons.csv").exists());
        assert!(out.join("stats/summary.txt").exists());
        // main root length column is monotone for plant0
        let csv = fs::read_to_string(out.join("metrics/main_root_length_mm.csv")).unwrap();
        let mut prev = -1.0f64;
        for line in csv.lines().skip(1) {
            let v: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
            assert!(v >= prev);
            prev = v;
        }
        assert!(prev > 0.0);
        for w in &summary.warnings {
            assert!(!w.contains("skipped:"), "unexpected warning {w}");
        }
    }

    #[test]
    fn standard_rerun_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (seq, rois) = synth::generate_standard(&synth::StandardParams {
            width: 300,
            height: 240,
            n_frames: 30,
            ..Default::default()
        });
        let manifest = synth::write_sequence(&dir.path().join("seq"), &seq).unwrap();
        let out1 = dir.path().join("out1");
        let out2 = dir.path().join("out2");
        run(&standard_config(manifest.clone(), out1.clone(), rois.clone())).unwrap();
        run(&standard_config(manifest, out2.clone(), rois)).unwrap();
        let mut files: Vec<PathBuf> = walk(&out1);
        files.sort();
        assert!(!files.is_empty());
        for f in files {
            let rel = f.strip_prefix(&out1).unwrap();
            let a = fs::read(&f).unwrap();
            let b = fs::read(out2.join(rel)).unwrap();
            assert_eq!(a, b, "{rel:?} differs between reruns");
        }
    }

    fn walk(dir: &Path) -> Vec<PathBuf> {
        let mut out = Vec::new();
        for entry in fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                out.extend(walk(&p));
            } else {
                out.push(p);
            }
        }
        out
    }

    #[test]
    fn failed_plant_isolated() {
        let dir = tempfile::tempdir().unwrap();
        let (seq, mut rois) = synth::generate_standard(&synth::StandardParams {
            width: 300,
            height: 240,
            n_frames: 20,
            ..Default::default()
        });
        // second ROI points at an empty corner with no seed
        rois[1] = RoiSpec {
            plant_id: "empty".into(),
            x: 0,
            y: 200,
            w: 40,
            h: 40,
            seed_hint: None,
        };
        let manifest = synth::write_sequence(&dir.path().join("seq"), &seq).unwrap();
        let out = dir.path().join("out");
        let cfg = standard_config(manifest, out.clone(), rois);
        let summary = run(&cfg).unwrap();
        assert!(summary.warnings.iter().any(|w| w.contains("empty")));
        assert!(out.join("rsml/plant0.rsml").exists());
        assert!(!out.join("rsml/empty.rsml").exists());
    }

    #[test]
    fn screening_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let seq = synth::generate_screening(&synth::ScreeningParams {
            width: 400,
            height: 300,
            n_frames: 120,
            n_seeds: 25,
            ..Default::default()
        });
        let manifest = synth::write_sequence(&dir.path().join("seq"), &seq).unwrap();
        let out = dir.path().join("out");
        let cfg: ExperimentConfig = serde_json::from_value(serde_json::json!({
            "mode": "screening",
            "manifest": manifest,
            "out_dir": out,
            "groups": [{"name": "plate", "expected_seed_count": 25}],
        }))
        .unwrap();
        run(&cfg).unwrap();
        assert!(out.join("germination/plate.json").exists());
        assert!(out.join("germination/plate.csv").exists());
        assert!(out.join("tracks/tracks.csv").exists());
        let fit: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("germination/plate.json")).unwrap())
                .unwrap();
        assert!(fit["curve"]["t50"].as_f64().unwrap() > 0.0);
        assert!(fit["final_percent"].as_f64().unwrap() > 50.0);
    }

    #[test]
    fn eval_self_comparison_all_ones() {
        let dir = tempfile::tempdir().unwrap();
        let (seq, _) = synth::generate_standard(&synth::StandardParams {
            width: 200,
            height: 160,
            n_frames: 3,
            ..Default::default()
        });
        let manifest = synth::write_sequence(&dir.path().join("seq"), &seq).unwrap();
        let out = dir.path().join("out");
        let cfg: ExperimentConfig = serde_json::from_value(serde_json::json!({
            "mode": "eval",
            "out_dir": out,
            "eval_pairs": [{"pred_manifest": manifest, "truth_manifest": manifest}],
        }))
        .unwrap();
        run(&cfg).unwrap();
        let csv = fs::read_to_string(out.join("eval.csv")).unwrap();
        let mut rows = 0;
        for line in csv.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            assert_eq!(f[3], "1"); // dice
            assert_eq!(f[4], "0"); // hausdorff
            rows += 1;
        }
        assert!(rows > 0);
    }

    #[test]
    fn fpca_mode_reads_metric_csv() {
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("len.csv");
        let mut csv = String::from("time_hours,a,b,c\n");
        for i in 0..50 {
            let t = i as f64;
            csv.push_str(&format!("{t},{},{},{}\n", t * 0.1, t * 0.12, t * 0.08));
        }
        fs::write(&csv_path, csv).unwrap();
        let out = dir.path().join("out");
        let cfg: ExperimentConfig = serde_json::from_value(serde_json::json!({
            "mode": "fpca",
            "out_dir": out,
            "fpca_input": csv_path,
        }))
        .unwrap();
        run(&cfg).unwrap();
        assert!(out.join("fpca/len.json").exists());
    }
}
