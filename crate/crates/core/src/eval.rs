//! Trajectory metrics: sim(3) alignment, ATE, AOE, Correct Rate, and the
//! summary tables and plot built from several runs.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::dataio::{associate, associate_times, Trajectory};
use crate::geometry::rotation_angle;
use crate::vo::{FrameRecord, FrameStatus};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(&'static str),
    #[error("too few associated pairs: {0}")]
    TooFewPairs(usize),
    #[error("ground truth is empty or has zero duration")]
    EmptyGroundTruth,
    #[error("point lists differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("bad errors.csv line {0}")]
    Parse(usize),
}

/// `x ↦ s·R·x + t`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sim3 {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Sim3 {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }
}

/// Least-squares similarity taking `est` onto `gt`.
pub fn umeyama_align(est: &[Vector3<f64>], gt: &[Vector3<f64>], with_scale: bool) -> Result<Sim3, EvalError> {
    if est.len() != gt.len() {
        return Err(EvalError::LengthMismatch(est.len(), gt.len()));
    }
    let n = est.len();
    if n < 3 {
        return Err(EvalError::DegenerateGeometry("fewer than 3 points"));
    }
    let nf = n as f64;
    let mu_x = est.iter().sum::<Vector3<f64>>() / nf;
    let mu_y = gt.iter().sum::<Vector3<f64>>() / nf;
    let mut cov = Matrix3::zeros();
    let mut scatter = Matrix3::zeros();
    let mut var_x = 0.0;
    for (x, y) in est.iter().zip(gt) {
        let (dx, dy) = (x - mu_x, y - mu_y);
        cov += dy * dx.transpose();
        scatter += dx * dx.transpose();
        var_x += dx.norm_squared();
    }
    cov /= nf;
    var_x /= nf;
    let sv = scatter.symmetric_eigenvalues();
    let mut sv: Vec<f64> = sv.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if sv[0] <= 0.0 {
        return Err(EvalError::DegenerateGeometry("coincident points"));
    }
    if sv[1] <= 1e-12 * sv[0] {
        return Err(EvalError::DegenerateGeometry("collinear points"));
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let d = svd.singular_values;
    let mut s = Matrix3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        // flip the direction of the smallest singular value
        let k = (0..3).min_by(|&a, &b| d[a].total_cmp(&d[b])).expect("3 values");
        s[(k, k)] = -1.0;
    }
    let rotation = u * s * v_t;
    let scale = if with_scale {
        (d.transpose() * s.diagonal())[0] / var_x
    } else {
        1.0
    };
    Ok(Sim3 {
        scale,
        rotation,
        translation: mu_y - scale * rotation * mu_x,
    })
}

/// Per-pair errors after alignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairError {
    pub est_idx: usize,
    pub gt_idx: usize,
    pub timestamp: f64,
    pub est: Vector3<f64>,
    pub gt: Vector3<f64>,
    pub trans_err: f64,
    pub rot_err: f64,
}

fn rmse(v: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in v {
        s += x * x;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        (s / n as f64).sqrt()
    }
}

/// Associates, aligns camera centers with scale, and returns per-pair errors.
pub fn align_trajectories(est: &Trajectory, gt: &Trajectory, max_dt: f64) -> Result<(Sim3, Vec<PairError>), EvalError> {
    let pairs = associate(est, gt, max_dt);
    if pairs.len() < 3 {
        return Err(EvalError::TooFewPairs(pairs.len()));
    }
    let pe: Vec<Vector3<f64>> = pairs.iter().map(|&(i, _)| est.samples[i].pose.center()).collect();
    let pg: Vec<Vector3<f64>> = pairs.iter().map(|&(_, j)| gt.samples[j].pose.center()).collect();
    let sim = umeyama_align(&pe, &pg, true)?;
    let errors = pairs
        .iter()
        .zip(pe.iter().zip(&pg))
        .map(|(&(i, j), (e, g))| {
            let aligned = sim.apply(e);
            PairError {
                est_idx: i,
                gt_idx: j,
                timestamp: gt.samples[j].timestamp,
                est: aligned,
                gt: *g,
                trans_err: (g - aligned).norm(),
                rot_err: orientation_error(&est.samples[i].pose, &gt.samples[j].pose, &sim),
            }
        })
        .collect();
    Ok((sim, errors))
}

/// Geodesic angle between camera-to-world orientations after alignment.
fn orientation_error(est: &crate::geometry::PoseSE3, gt: &crate::geometry::PoseSE3, sim: &Sim3) -> f64 {
    let r_est = sim.rotation * est.rotation().transpose();
    let r_gt = gt.rotation().transpose();
    rotation_angle(&(r_gt * r_est.transpose()))
}

pub fn ate_rmse(est: &Trajectory, gt: &Trajectory, max_dt: f64) -> Result<(f64, Sim3), EvalError> {
    let (sim, errs) = align_trajectories(est, gt, max_dt)?;
    Ok((rmse(errs.iter().map(|e| e.trans_err)), sim))
}

/// RMSE of rotation errors in radians under a given alignment.
pub fn aoe(est: &Trajectory, gt: &Trajectory, alignment: &Sim3, max_dt: f64) -> Result<f64, EvalError> {
    let pairs = associate(est, gt, max_dt);
    if pairs.is_empty() {
        return Err(EvalError::TooFewPairs(0));
    }
    Ok(rmse(pairs.iter().map(|&(i, j)| {
        orientation_error(&est.samples[i].pose, &gt.samples[j].pose, alignment)
    })))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalParams {
    pub ate_thresh: f64,
    /// Radians.
    pub aoe_thresh: f64,
    pub max_dt: f64,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            ate_thresh: 0.3,
            aoe_thresh: 10f64.to_radians(),
            max_dt: 0.02,
        }
    }
}

/// `[start, end)` covered by each record, clipped to `[lo, hi]`; the last
/// record spans the median spacing.
fn frame_intervals(records: &[FrameRecord], lo: f64, hi: f64) -> Vec<f64> {
    let t: Vec<f64> = records.iter().map(|r| r.timestamp).collect();
    let mut gaps: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.sort_by(f64::total_cmp);
    let median = gaps.get(gaps.len() / 2).copied().unwrap_or(0.0);
    (0..t.len())
        .map(|i| {
            let end = t.get(i + 1).copied().unwrap_or(t[i] + median);
            (end.min(hi) - t[i].max(lo)).max(0.0)
        })
        .collect()
}

struct FrameEval {
    intervals: Vec<f64>,
    duration: f64,
    /// Per record: aligned errors when the frame was tracked and paired.
    errors: Vec<Option<(f64, f64)>>,
}

type Evaluated = (FrameEval, Option<Vec<PairError>>, Option<Sim3>);

fn evaluate_frames(
    est: &Trajectory,
    gt: &Trajectory,
    records: &[FrameRecord],
    max_dt: f64,
) -> Result<Evaluated, EvalError> {
    let (Some(first), Some(last)) = (gt.samples.first(), gt.samples.last()) else {
        return Err(EvalError::EmptyGroundTruth);
    };
    let (lo, hi) = (first.timestamp, last.timestamp);
    if hi <= lo {
        return Err(EvalError::EmptyGroundTruth);
    }
    let intervals = frame_intervals(records, lo, hi);
    let mut errors = vec![None; records.len()];
    let (pairs, sim) = match align_trajectories(est, gt, max_dt) {
        Ok((sim, pairs)) => {
            let tracked: Vec<usize> = (0..records.len())
                .filter(|&i| records[i].status == FrameStatus::Tracking)
                .collect();
            let times: Vec<f64> = tracked.iter().map(|&i| records[i].timestamp).collect();
            let mut by_est = vec![None; est.len()];
            for p in &pairs {
                by_est[p.est_idx] = Some((p.trans_err, p.rot_err));
            }
            for (a, b) in associate_times(&times, &est.timestamps(), max_dt) {
                errors[tracked[a]] = by_est[b];
            }
            (Some(pairs), Some(sim))
        }
        Err(EvalError::TooFewPairs(_)) | Err(EvalError::DegenerateGeometry(_)) => (None, None),
        Err(e) => return Err(e),
    };
    Ok((
        FrameEval {
            intervals,
            duration: hi - lo,
            errors,
        },
        pairs,
        sim,
    ))
}

/// Fraction of ground-truth time covered by correctly tracked frames.
/// Zero when fewer than 3 poses can be paired for alignment.
pub fn correct_rate(
    est: &Trajectory,
    gt: &Trajectory,
    records: &[FrameRecord],
    ate_thresh: f64,
    aoe_thresh: f64,
    max_dt: f64,
) -> Result<f64, EvalError> {
    let (fe, ..) = evaluate_frames(est, gt, records, max_dt)?;
    Ok(cr_of(&fe, ate_thresh, aoe_thresh))
}

fn cr_of(fe: &FrameEval, ate_thresh: f64, aoe_thresh: f64) -> f64 {
    let good: f64 = fe
        .errors
        .iter()
        .zip(&fe.intervals)
        .filter(|(e, _)| e.is_some_and(|(t, r)| t <= ate_thresh && r <= aoe_thresh))
        .map(|(_, d)| d)
        .sum();
    // + 0.0 turns -0.0 into 0.0
    (good / fe.duration).clamp(0.0, 1.0) + 0.0
}

fn sig9<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(round9(*x))
}

fn sig9_opt<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match x {
        Some(v) => s.serialize_some(&round9(*v)),
        None => s.serialize_none(),
    }
}

/// Rounds to 9 significant digits.
pub fn round9(x: f64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sequence: String,
    /// Luminosity or other grouping label.
    pub group: String,
    #[serde(serialize_with = "sig9_opt")]
    pub ate_rmse: Option<f64>,
    #[serde(serialize_with = "sig9_opt")]
    pub aoe_rmse: Option<f64>,
    #[serde(serialize_with = "sig9")]
    pub cr: f64,
    #[serde(serialize_with = "sig9_opt")]
    pub init_time: Option<f64>,
    pub n_paired: usize,
    pub n_frames: usize,
    pub n_tracked: usize,
    #[serde(serialize_with = "sig9")]
    pub tracked_duration: f64,
    #[serde(serialize_with = "sig9")]
    pub gt_duration: f64,
    #[serde(serialize_with = "sig9_opt")]
    pub scale: Option<f64>,
    #[serde(serialize_with = "sig9")]
    pub ate_thresh: f64,
    #[serde(serialize_with = "sig9")]
    pub aoe_thresh: f64,
    #[serde(serialize_with = "sig9")]
    pub max_dt: f64,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Full evaluation of one run; per-pair errors are returned for plotting.
pub fn evaluate(
    est: &Trajectory,
    gt: &Trajectory,
    records: &[FrameRecord],
    params: &EvalParams,
    sequence: &str,
    group: &str,
) -> Result<(MetricsReport, Vec<PairError>), EvalError> {
    let (fe, pairs, sim) = evaluate_frames(est, gt, records, params.max_dt)?;
    let tracked: Vec<usize> = (0..records.len())
        .filter(|&i| records[i].status == FrameStatus::Tracking)
        .collect();
    let init_time = tracked
        .first()
        .map(|&i| records[i].timestamp - records[0].timestamp);
    let pairs = pairs.unwrap_or_default();
    let report = MetricsReport {
        sequence: sequence.to_string(),
        group: group.to_string(),
        ate_rmse: sim.map(|_| rmse(pairs.iter().map(|p| p.trans_err))),
        aoe_rmse: sim.map(|_| rmse(pairs.iter().map(|p| p.rot_err))),
        cr: cr_of(&fe, params.ate_thresh, params.aoe_thresh),
        init_time,
        n_paired: pairs.len(),
        n_frames: records.len(),
        n_tracked: tracked.len(),
        tracked_duration: tracked.iter().map(|&i| fe.intervals[i]).sum(),
        gt_duration: fe.duration,
        scale: sim.map(|s| s.scale),
        ate_thresh: params.ate_thresh,
        aoe_thresh: params.aoe_thresh,
        max_dt: params.max_dt,
    };
    Ok((report, pairs))
}

const ERRORS_HEADER: &str = "timestamp,est_x,est_y,est_z,gt_x,gt_y,gt_z,trans_err,rot_err";

pub fn errors_csv(errors: &[PairError]) -> String {
    let mut s = format!("{ERRORS_HEADER}\n");
    for e in errors {
        let v = [
            e.timestamp,
            e.est.x,
            e.est.y,
            e.est.z,
            e.gt.x,
            e.gt.y,
            e.gt.z,
            e.trans_err,
            e.rot_err,
        ];
        let row: Vec<String> = v.iter().map(|x| round9(*x).to_string()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn parse_errors_csv(text: &str) -> Result<Vec<PairError>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with("timestamp") {
            continue;
        }
        let v: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| EvalError::Parse(i + 1))?;
        if v.len() != 9 {
            return Err(EvalError::Parse(i + 1));
        }
        out.push(PairError {
            est_idx: out.len(),
            gt_idx: out.len(),
            timestamp: v[0],
            est: Vector3::new(v[1], v[2], v[3]),
            gt: Vector3::new(v[4], v[5], v[6]),
            trans_err: v[7],
            rot_err: v[8],
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub group: String,
    pub n_runs: usize,
    pub mean_ate: Option<f64>,
    pub mean_cr: f64,
    pub mean_init_time: Option<f64>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Groups in order of first appearance.
pub fn group_runs(runs: &[MetricsReport]) -> Vec<GroupSummary> {
    let mut order: Vec<&str> = Vec::new();
    for r in runs {
        if !order.contains(&r.group.as_str()) {
            order.push(&r.group);
        }
    }
    order
        .into_iter()
        .map(|g| {
            let members: Vec<&MetricsReport> = runs.iter().filter(|r| r.group == g).collect();
            let ates: Vec<f64> = members.iter().filter_map(|r| r.ate_rmse).collect();
            let crs: Vec<f64> = members.iter().map(|r| r.cr).collect();
            let inits: Vec<f64> = members.iter().filter_map(|r| r.init_time).collect();
            GroupSummary {
                group: g.to_string(),
                n_runs: members.len(),
                mean_ate: mean(&ates),
                mean_cr: mean(&crs).unwrap_or(0.0),
                mean_init_time: mean(&inits),
            }
        })
        .collect()
}

fn opt(x: Option<f64>, digits: usize) -> String {
    x.map_or("NA".into(), |v| format!("{v:.digits$}"))
}

pub fn group_row(g: &GroupSummary) -> String {
    format!("{}, {}, {:.1}%", g.group, opt(g.mean_ate, 3), g.mean_cr * 100.0)
}

/// Per-group and per-run CSV.
pub fn summary_csv(runs: &[MetricsReport]) -> String {
    let mut s = String::from("kind,name,group,n_runs,ate_rmse_m,aoe_rmse_rad,cr,init_time_s,tracked_duration_s,gt_duration_s,ate_thresh_m,aoe_thresh_rad\n");
    let f = |x: Option<f64>| x.map_or("NA".into(), |v| round9(v).to_string());
    for g in group_runs(runs) {
        let _ = writeln!(
            s,
            "group,{0},{0},{1},{2},NA,{3},{4},NA,NA,NA,NA",
            g.group,
            g.n_runs,
            f(g.mean_ate),
            round9(g.mean_cr),
            f(g.mean_init_time)
        );
    }
    for r in runs {
        let _ = writeln!(
            s,
            "run,{},{},1,{},{},{},{},{},{},{},{}",
            r.sequence,
            r.group,
            f(r.ate_rmse),
            f(r.aoe_rmse),
            round9(r.cr),
            f(r.init_time),
            round9(r.tracked_duration),
            round9(r.gt_duration),
            round9(r.ate_thresh),
            round9(r.aoe_thresh)
        );
    }
    s
}

/// Plain-text tables: group means first, then one line per run.
pub fn summary_text(runs: &[MetricsReport]) -> String {
    let mut s = String::from("group, ate_rmse_m, cr\n");
    for g in group_runs(runs) {
        s.push_str(&group_row(&g));
        s.push('\n');
    }
    if runs.is_empty() {
        return s;
    }
    s.push_str("\nsequence, group, ate_rmse_m, aoe_deg, cr, tracked_s, gt_s, init_s, ate_thresh_m, aoe_thresh_deg\n");
    for r in runs {
        let _ = writeln!(
            s,
            "{}, {}, {}, {}, {:.1}%, {:.2}, {:.2}, {}, {}, {}",
            r.sequence,
            r.group,
            opt(r.ate_rmse, 3),
            opt(r.aoe_rmse.map(f64::to_degrees), 2),
            r.cr * 100.0,
            r.tracked_duration,
            r.gt_duration,
            opt(r.init_time, 2),
            r.ate_thresh,
            r.aoe_thresh.to_degrees()
        );
    }
    s
}

const COLORS: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn polyline(pts: &[(f64, f64)], color: &str, width: f64) -> String {
    let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    format!(
        "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"{width}\" points=\"{}\"/>\n",
        coords.join(" ")
    )
}

/// Top view (x, z) of aligned trajectories against ground truth on the left,
/// translational error over time on the right.
pub fn trajectories_svg(runs: &[(MetricsReport, Vec<PairError>)]) -> String {
    const W: f64 = 400.0;
    const PAD: f64 = 30.0;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" font-size=\"11\">\n",
        2.0 * W + 3.0 * PAD,
        W + 2.0 * PAD + 16.0 * runs.len() as f64
    );
    let all: Vec<&PairError> = runs.iter().flat_map(|r| &r.1).collect();
    let (mut xmin, mut xmax, mut zmin, mut zmax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    let (mut tmin, mut tmax, mut emax) = (f64::MAX, f64::MIN, 0.0f64);
    for p in &all {
        for v in [p.est, p.gt] {
            xmin = xmin.min(v.x);
            xmax = xmax.max(v.x);
            zmin = zmin.min(v.z);
            zmax = zmax.max(v.z);
        }
        tmin = tmin.min(p.timestamp);
        tmax = tmax.max(p.timestamp);
        emax = emax.max(p.trans_err);
    }
    let span = (xmax - xmin).max(zmax - zmin).max(1e-9);
    let top = |x: f64, z: f64| (PAD + (x - xmin) / span * W, PAD + W - (z - zmin) / span * W);
    let tspan = (tmax - tmin).max(1e-9);
    let emax = emax.max(1e-9);
    let err = |t: f64, e: f64| (2.0 * PAD + W + (t - tmin) / tspan * W, PAD + W - e / emax * W);
    let _ = writeln!(
        s,
        "<rect x=\"{PAD}\" y=\"{PAD}\" width=\"{W}\" height=\"{W}\" fill=\"none\" stroke=\"#999\"/>\n<rect x=\"{}\" y=\"{PAD}\" width=\"{W}\" height=\"{W}\" fill=\"none\" stroke=\"#999\"/>",
        2.0 * PAD + W
    );
    let _ = writeln!(s, "<text x=\"{PAD}\" y=\"20\">top view x-z [m], gray = ground truth</text>");
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"20\">translational error [m], max {:.3}</text>",
        2.0 * PAD + W,
        if all.is_empty() { 0.0 } else { emax }
    );
    for (k, (report, errs)) in runs.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let gt: Vec<_> = errs.iter().map(|p| top(p.gt.x, p.gt.z)).collect();
        let est: Vec<_> = errs.iter().map(|p| top(p.est.x, p.est.z)).collect();
        let e: Vec<_> = errs.iter().map(|p| err(p.timestamp, p.trans_err)).collect();
        s.push_str(&polyline(&gt, "#bbb", 2.0));
        s.push_str(&polyline(&est, color, 1.0));
        s.push_str(&polyline(&e, color, 1.0));
        let _ = writeln!(
            s,
            "<text x=\"{PAD}\" y=\"{}\" fill=\"{color}\">{} ({}): ATE {} m, CR {:.1}%</text>",
            W + 2.0 * PAD + 12.0 + 16.0 * k as f64,
            report.sequence,
            report.group,
            opt(report.ate_rmse, 3),
            report.cr * 100.0
        );
    }
    s.push_str("</svg>\n");
    s
}
