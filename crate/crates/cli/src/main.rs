use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{ArgAction, ArgGroup, Args, Parser, Subcommand};
use nalgebra::{Matrix4, Vector2, Vector3};
use serde_json::json;

use dimslam::dataio::{
    darken_sequence, load_trajectory, open_sequence_dir, parse_flat, save_trajectory,
    write_mapped_sequence, DarkLevel, INTRINSICS_FILE, META_FILE, TIMES_FILE,
};
use dimslam::eval::{
    errors_csv, evaluate, parse_errors_csv, round9, summary_csv, summary_text, trajectories_svg,
    EvalParams, MetricsReport,
};
use dimslam::features::OrbConfig;
use dimslam::geometry::pnp;
use dimslam::imgproc::{enhance, EnhancerConfig};
use dimslam::matching::{self, match_bench, pairs_csv, BenchParams, RansacParams};
use dimslam::pipeline::{FrameSource, PipelineError};
use dimslam::vo::{run_vo, VoConfig};
use dimslam::CameraIntrinsics;

const SUBCOMMANDS: [&str; 7] = ["enhance", "match-bench", "vo", "eval", "calib", "darksim", "report"];

#[derive(Parser, Debug)]
#[command(
    name = "dimslam",
    version,
    about = "Low-light visual odometry: enhancement, feature matching benchmarks, tracking and trajectory metrics",
    args_override_self = true
)]
struct Cli {
    /// Seed for every randomized step
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,

    /// Worker threads [default: available cores]. Outputs do not depend on it
    #[arg(long, global = true, value_parser = clap::value_parser!(u32).range(1..))]
    threads: Option<u32>,

    /// More log output on stderr (-v info, -vv debug)
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    /// Flat `key: value` file of flags for the subcommand; command-line flags win
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Apply one enhancer to every frame of a sequence
    Enhance(EnhanceArgs),
    /// Count RANSAC-verified matches between consecutive frames per enhancer
    MatchBench(MatchBenchArgs),
    /// Run the monocular tracker over a sequence
    Vo(VoArgs),
    /// Score an estimated trajectory against ground truth
    Eval(EvalArgs),
    /// Camera-to-rig extrinsics from chessboard correspondences in the mocap frame
    Calib(CalibArgs),
    /// Write a synthetically darkened copy of a sequence
    Darksim(DarksimArgs),
    /// Combine several eval outputs into grouped tables and one plot
    Report(ReportArgs),
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("method").required(true).multiple(false)))]
struct EnhanceArgs {
    /// Input sequence directory
    #[arg(long = "in", value_name = "DIR")]
    input: PathBuf,
    /// Output sequence directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Gamma correction `255·(p/255)^(1/G)`
    #[arg(long, group = "method", value_name = "G")]
    gamma: Option<f64>,
    /// Global histogram equalization on luma
    #[arg(long, group = "method")]
    histeq: bool,
    /// CLAHE with this clip limit (see --tiles)
    #[arg(long, group = "method", value_name = "CLIP")]
    clahe: Option<f64>,
    /// CLAHE tile grid, `COLSxROWS`
    #[arg(long, default_value = "8x8", requires = "clahe")]
    tiles: String,
    /// Illumination-attention blend over a base enhancer spec, e.g. `gamma:2`
    #[arg(long, group = "method", value_name = "BASE")]
    attention: Option<String>,
    /// External plugin command, invoked as `<command> <in_dir> <out_dir>`
    #[arg(long, group = "method", value_name = "COMMAND")]
    external: Option<String>,
    /// Any enhancer spec: none, gamma:G, histeq, clahe:CLIP:CxR, attention:BASE, external:CMD
    #[arg(long, group = "method", value_name = "SPEC")]
    enhancer: Option<EnhancerConfig>,
}

#[derive(Args, Debug, Clone)]
struct OrbArgs {
    /// Keypoints per frame
    #[arg(long, default_value_t = 1000)]
    n_features: usize,
    /// Pyramid levels
    #[arg(long, default_value_t = 8)]
    n_levels: usize,
    /// Pyramid scale factor
    #[arg(long, default_value_t = 1.2)]
    scale_factor: f64,
    /// FAST intensity threshold
    #[arg(long, default_value_t = 20)]
    fast_threshold: u8,
}

impl OrbArgs {
    fn config(&self) -> OrbConfig {
        OrbConfig {
            n_features: self.n_features,
            n_levels: self.n_levels,
            scale_factor: self.scale_factor,
            fast_threshold: self.fast_threshold,
            ..OrbConfig::default()
        }
    }
}

#[derive(Args, Debug)]
struct MatchBenchArgs {
    /// Sequence directories; each becomes one summary row
    #[arg(long, required = true, num_args = 1.., value_name = "DIR")]
    seq: Vec<PathBuf>,
    /// Comma-separated enhancer specs; each becomes one summary column
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "none,histeq,gamma:2,gamma:4,attention:gamma:2"
    )]
    enhancers: Vec<EnhancerConfig>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Lowe ratio for descriptor matching
    #[arg(long, default_value_t = 0.8)]
    ratio: f64,
    /// Sampson distance threshold in pixels
    #[arg(long, default_value_t = 1.0)]
    ransac_threshold: f64,
    /// RANSAC confidence
    #[arg(long, default_value_t = 0.99)]
    confidence: f64,
    /// RANSAC iteration cap
    #[arg(long, default_value_t = 2000)]
    max_iters: usize,
    #[command(flatten)]
    orb: OrbArgs,
}

#[derive(Args, Debug)]
struct VoArgs {
    /// Sequence directory
    #[arg(long, value_name = "DIR")]
    seq: PathBuf,
    /// Output directory (trajectory.txt, status.csv, run.json)
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Enhancer spec applied before feature extraction
    #[arg(long, default_value = "none")]
    enhancer: EnhancerConfig,
    /// Triangulated points needed to initialize
    #[arg(long, default_value_t = 100)]
    min_init_inliers: usize,
    /// Pose inliers needed to keep tracking
    #[arg(long, default_value_t = 15)]
    min_track_inliers: usize,
    /// New keyframe when tracked points fall below this share of the last keyframe's
    #[arg(long, default_value_t = 0.5)]
    keyframe_ratio: f64,
    /// Reprojection inlier threshold in pixels
    #[arg(long, default_value_t = 2.0)]
    reproj_threshold: f64,
    /// Lowe ratio for descriptor matching
    #[arg(long, default_value_t = 0.8)]
    ratio: f64,
    /// Minimum parallax in degrees for initialization and new points
    #[arg(long, default_value_t = 1.0)]
    min_parallax: f64,
    /// Consecutive lost frames before the map is dropped and initialization restarts
    #[arg(long, default_value_t = 20)]
    lost_patience: usize,
    #[command(flatten)]
    orb: OrbArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Estimated trajectory (TUM)
    #[arg(long, value_name = "FILE")]
    est: PathBuf,
    /// Ground-truth trajectory (TUM)
    #[arg(long, value_name = "FILE")]
    gt: PathBuf,
    /// Per-frame status from `vo`
    #[arg(long, value_name = "FILE")]
    status: PathBuf,
    /// Translational error threshold for Correct Rate, meters
    #[arg(long, default_value_t = 0.3)]
    ate_thresh: f64,
    /// Rotational error threshold for Correct Rate, degrees
    #[arg(long, default_value_t = 10.0)]
    aoe_thresh: f64,
    /// Maximum timestamp gap when pairing poses, seconds
    #[arg(long, default_value_t = 0.02)]
    max_dt: f64,
    /// Sequence name in reports
    #[arg(long, default_value = "run")]
    sequence: String,
    /// Group label in reports, e.g. the luminosity level
    #[arg(long, default_value = "all")]
    group: String,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CalibArgs {
    /// Lines `X Y Z u v`: board corners in the mocap frame and their pixels
    #[arg(long, value_name = "FILE")]
    correspondences: PathBuf,
    /// Camera intrinsics (flat `key: value`)
    #[arg(long, value_name = "FILE")]
    intrinsics: PathBuf,
    /// 4×4 rig-to-mocap matrix, row-major
    #[arg(long, value_name = "FILE")]
    rig_pose: PathBuf,
    /// Output directory (camera_to_rig.txt, calib.json)
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DarksimArgs {
    /// Bright input sequence
    #[arg(long = "in", value_name = "DIR")]
    input: PathBuf,
    /// shaded, semi-dark or dark
    #[arg(long)]
    level: DarkLevel,
    /// Output sequence directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Directories written by `eval`
    #[arg(long, num_args = 0.., value_name = "DIR")]
    runs: Vec<PathBuf>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

/// Invalid flag values found after parsing; exit code 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Inserts `--key value` pairs from the config file right after the
/// subcommand, ahead of every command-line flag so those win.
fn expand_config(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut path = None;
    for (i, a) in argv.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == "--config" {
            path = argv.get(i + 1).cloned();
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(p.into());
        }
    }
    let Some(path) = path else { return Ok(argv) };
    let Some(sub) = argv.iter().position(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref())) else {
        return Ok(argv);
    };
    let path = PathBuf::from(path);
    let text = fs::read_to_string(&path).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    let entries = parse_flat(&text, &path.display().to_string()).map_err(|e| usage(e.to_string()))?;
    let mut out = vec![argv[0].clone(), argv[sub].clone()];
    for (key, (_, value)) in entries {
        let flag = format!("--{}", key.replace('_', "-"));
        match value.as_str() {
            "true" => out.push(flag.into()),
            "false" => {}
            _ => {
                out.push(flag.into());
                out.push(value.into());
            }
        }
    }
    out.extend(argv.iter().enumerate().filter(|(i, _)| *i != 0 && *i != sub).map(|(_, a)| a.clone()));
    Ok(out)
}

/// Command line without `--threads`, which never changes outputs.
fn echo_args(argv: &[OsString]) -> Vec<String> {
    let mut out = Vec::new();
    let mut skip = false;
    for a in argv.iter().skip(1) {
        let s = a.to_string_lossy().into_owned();
        if skip {
            skip = false;
            continue;
        }
        if s == "--threads" {
            skip = true;
            continue;
        }
        if s.starts_with("--threads=") {
            continue;
        }
        out.push(s);
    }
    out
}

fn main() -> ExitCode {
    let argv: Vec<OsString> = std::env::args_os().collect();
    let argv = match expand_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n as usize).build_global() {
            log::warn!("thread pool: {e}");
        }
    }
    match run(&cli, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli, argv: &[OsString]) -> Result<()> {
    match &cli.command {
        Command::Enhance(a) => cmd_enhance(a),
        Command::MatchBench(a) => cmd_match_bench(a, cli.seed),
        Command::Vo(a) => cmd_vo(a, cli.seed, argv),
        Command::Eval(a) => cmd_eval(a),
        Command::Calib(a) => cmd_calib(a),
        Command::Darksim(a) => cmd_darksim(a, cli.seed),
        Command::Report(a) => cmd_report(a),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Copies top-level files that are not part of the sequence layout, such as
/// ground truth.
fn copy_extras(from: &Path, to: &Path) -> Result<()> {
    for entry in fs::read_dir(from).with_context(|| format!("reading {}", from.display()))? {
        let path = entry?.path();
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if path.is_file() && ![TIMES_FILE, INTRINSICS_FILE, META_FILE].contains(&name.as_str()) {
            fs::copy(&path, to.join(&name)).with_context(|| format!("copying {}", path.display()))?;
        }
    }
    Ok(())
}

impl EnhanceArgs {
    fn enhancer(&self) -> Result<EnhancerConfig> {
        let cfg = if let Some(g) = self.gamma {
            EnhancerConfig::Gamma(g)
        } else if self.histeq {
            EnhancerConfig::HistEq
        } else if let Some(clip) = self.clahe {
            let (c, r) = self
                .tiles
                .split_once('x')
                .and_then(|(c, r)| Some((c.parse().ok()?, r.parse().ok()?)))
                .ok_or_else(|| usage(format!("bad --tiles `{}`, expected COLSxROWS", self.tiles)))?;
            EnhancerConfig::Clahe {
                clip_limit: clip,
                tiles: (c, r),
            }
        } else if let Some(base) = &self.attention {
            EnhancerConfig::Attention(Box::new(base.parse().map_err(usage)?))
        } else if let Some(cmd) = &self.external {
            EnhancerConfig::External(cmd.clone())
        } else if let Some(e) = &self.enhancer {
            e.clone()
        } else {
            return Err(usage("no enhancer selected"));
        };
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }
}

fn cmd_enhance(a: &EnhanceArgs) -> Result<()> {
    let cfg = a.enhancer()?;
    let seq = open_sequence_dir(&a.input)?;
    log::info!("enhancing {} frames with {}", seq.len(), cfg);
    let src = FrameSource::new(&seq, &cfg)?;
    let mut meta = seq.meta.clone();
    meta.insert("enhancer".into(), cfg.label());
    create_out(&a.out)?;
    write_mapped_sequence(&seq, &a.out, &meta, |i, img| {
        if cfg.is_external() {
            src.color(i)
        } else {
            Ok::<_, PipelineError>(enhance(&img, &cfg)?)
        }
    })?;
    copy_extras(&a.input, &a.out)
}

fn sequence_name(dir: &Path) -> String {
    dir.canonicalize()
        .ok()
        .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| dir.display().to_string())
}

fn cmd_match_bench(a: &MatchBenchArgs, seed: u64) -> Result<()> {
    let orb = a.orb.config();
    orb.validate().map_err(|e| usage(e.to_string()))?;
    for e in &a.enhancers {
        e.validate().map_err(|e| usage(e.to_string()))?;
    }
    let params = BenchParams {
        ratio: a.ratio,
        ransac: RansacParams {
            threshold_px: a.ransac_threshold,
            confidence: a.confidence,
            max_iters: a.max_iters,
            seed,
        },
    };
    create_out(&a.out)?;
    let mut rows = Vec::new();
    for dir in &a.seq {
        let name = sequence_name(dir);
        let seq = open_sequence_dir(dir)?;
        log::info!("match bench on {name}: {} frames, {} enhancers", seq.len(), a.enhancers.len());
        let runs = match_bench(&seq, &a.enhancers, &orb, &params).with_context(|| name.clone())?;
        for r in &runs {
            match &r.error {
                Some(e) => log::warn!("{name}/{}: {e}", r.label),
                None => log::info!("{name}/{}: mean inliers {:.1}", r.label, r.mean_inliers()),
            }
        }
        write(&a.out.join(format!("pairs_{name}.csv")), pairs_csv(&runs))?;
        rows.push((name, runs));
    }
    write(&a.out.join("summary.csv"), matching::summary_csv(&rows))
}

fn cmd_vo(a: &VoArgs, seed: u64, argv: &[OsString]) -> Result<()> {
    let cfg = VoConfig {
        min_init_inliers: a.min_init_inliers,
        min_track_inliers: a.min_track_inliers,
        keyframe_inlier_ratio: a.keyframe_ratio,
        reproj_threshold_px: a.reproj_threshold,
        enhancer: a.enhancer.clone(),
        orb: a.orb.config(),
        match_ratio: a.ratio,
        ransac: RansacParams {
            seed,
            ..RansacParams::default()
        },
        min_parallax_deg: a.min_parallax,
        lost_patience: a.lost_patience,
        ..VoConfig::default()
    };
    cfg.validate().map_err(usage)?;
    let seq = open_sequence_dir(&a.seq)?;
    log::info!("tracking {} frames with enhancer {}", seq.len(), cfg.enhancer);
    let out = run_vo(&seq, &cfg)?;
    create_out(&a.out)?;
    save_trajectory(&out.trajectory, &a.out.join("trajectory.txt"))?;
    write(&a.out.join("status.csv"), out.status_csv())?;
    let first = seq.frames.first().map(|f| f.timestamp);
    let run = json!({
        "args": echo_args(argv),
        "seed": seed,
        "config": cfg,
        "n_frames": seq.len(),
        "init_timestamp": out.init_time.map(round9),
        "init_time": out.init_time.zip(first).map(|(t, f)| round9(t - f)),
        "tracking_fraction": round9(out.tracking_fraction()),
    });
    write(&a.out.join("run.json"), serde_json::to_string_pretty(&run)? + "\n")?;
    log::info!("tracked {:.1}% of frames", 100.0 * out.tracking_fraction());
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    if !(a.ate_thresh > 0.0 && a.aoe_thresh > 0.0 && a.max_dt >= 0.0) {
        return Err(usage("thresholds must be positive"));
    }
    let est = load_trajectory(&a.est)?;
    let gt = load_trajectory(&a.gt)?;
    let text = fs::read_to_string(&a.status).with_context(|| format!("reading {}", a.status.display()))?;
    let records = dimslam::vo::parse_status_csv(&text).map_err(|e| anyhow::anyhow!("{}: {e}", a.status.display()))?;
    let params = EvalParams {
        ate_thresh: a.ate_thresh,
        aoe_thresh: a.aoe_thresh.to_radians(),
        max_dt: a.max_dt,
    };
    let (report, errors) = evaluate(&est, &gt, &records, &params, &a.sequence, &a.group)?;
    create_out(&a.out)?;
    write(&a.out.join("metrics.json"), report.to_json())?;
    write(&a.out.join("errors.csv"), errors_csv(&errors))?;
    let runs = [report];
    write(&a.out.join("summary.csv"), summary_csv(&runs))?;
    write(&a.out.join("summary.txt"), summary_text(&runs))?;
    let [report] = runs;
    write(&a.out.join("trajectories.svg"), trajectories_svg(&[(report, errors)]))
}

fn parse_numbers(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<f64>, _>>()
            .with_context(|| format!("{}:{}: bad number", path.display(), i + 1))?;
        rows.push(row);
    }
    Ok(rows)
}

fn cmd_calib(a: &CalibArgs) -> Result<()> {
    let k = CameraIntrinsics::load(&a.intrinsics)?;
    let mut p3 = Vec::new();
    let mut p2 = Vec::new();
    for row in parse_numbers(&a.correspondences)? {
        if row.len() != 5 {
            bail!("{}: expected `X Y Z u v` per line", a.correspondences.display());
        }
        p3.push(Vector3::new(row[0], row[1], row[2]));
        p2.push(k.undistort_pixel(Vector2::new(row[3], row[4])));
    }
    let rig: Vec<f64> = parse_numbers(&a.rig_pose)?.concat();
    if rig.len() != 16 {
        bail!("{}: expected 16 numbers, got {}", a.rig_pose.display(), rig.len());
    }
    let rig_to_mocap = Matrix4::from_row_slice(&rig);
    let mocap_to_rig = rig_to_mocap
        .try_inverse()
        .ok_or_else(|| anyhow::anyhow!("{}: singular matrix", a.rig_pose.display()))?;
    let res = pnp(&p3, &p2, &k)?;
    if res.planar {
        log::info!("planar target: homography initializer used");
    }
    // pnp gives mocap → camera
    let camera_to_rig = mocap_to_rig * res.pose.inverse().to_matrix();
    create_out(&a.out)?;
    let mut s = String::new();
    for r in 0..4 {
        let row: Vec<String> = (0..4).map(|c| format!("{:.12}", camera_to_rig[(r, c)])).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    write(&a.out.join("camera_to_rig.txt"), s)?;
    let info = json!({
        "n_points": p3.len(),
        "rms_px": round9(res.rms),
        "planar": res.planar,
    });
    write(&a.out.join("calib.json"), serde_json::to_string_pretty(&info)? + "\n")?;
    log::info!("reprojection RMS {:.3e} px", res.rms);
    Ok(())
}

fn cmd_darksim(a: &DarksimArgs, seed: u64) -> Result<()> {
    let seq = open_sequence_dir(&a.input)?;
    log::info!("darkening {} frames to {}", seq.len(), a.level.label());
    create_out(&a.out)?;
    darken_sequence(&seq, &a.out, a.level, seed)?;
    copy_extras(&a.input, &a.out)
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let mut runs = Vec::new();
    for dir in &a.runs {
        let p = dir.join("metrics.json");
        let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        let report = MetricsReport::from_json(&text).with_context(|| p.display().to_string())?;
        let e = dir.join("errors.csv");
        let errors = if e.is_file() {
            parse_errors_csv(&fs::read_to_string(&e)?).with_context(|| e.display().to_string())?
        } else {
            Vec::new()
        };
        runs.push((report, errors));
    }
    let reports: Vec<MetricsReport> = runs.iter().map(|r| r.0.clone()).collect();
    create_out(&a.out)?;
    write(&a.out.join("summary.csv"), summary_csv(&reports))?;
    write(&a.out.join("summary.txt"), summary_text(&reports))?;
    write(&a.out.join("trajectories.svg"), trajectories_svg(&runs))
}
