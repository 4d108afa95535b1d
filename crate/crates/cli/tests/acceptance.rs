//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{Matrix4, UnitQuaternion, Vector2, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dimslam::dataio::{darken_sequence, load_trajectory, open_sequence_dir, DarkLevel};
use dimslam::eval::{ate_rmse, correct_rate, umeyama_align};
use dimslam::features::{orb_detect_and_describe, Descriptor, Keypoint, OrbConfig};
use dimslam::geometry::{
    decompose_essential, pnp, project_jacobian, refine_pose, skew, so3_exp, triangulate, PoseSE3,
};
use dimslam::imgproc::EnhancerConfig;
use dimslam::matching::{eight_point, match_bench, ransac_fundamental_points, BenchParams, RansacParams};
use dimslam::synth::{default_intrinsics, orbit_poses, room_scene, write_orbit_sequence, GROUNDTRUTH_FILE};
use dimslam::vo::{run_vo, FrameRecord, FrameStatus, VoConfig};
use dimslam::{CameraIntrinsics, GrayImage, Trajectory};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_rotation(r: &mut ChaCha8Rng, max_angle: f64) -> UnitQuaternion<f64> {
    let axis = Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
    UnitQuaternion::from_scaled_axis(axis.normalize() * r.random_range(0.0..max_angle))
}

/// Points 3-8 m in front of the world origin, spread across the view.
fn cloud(r: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
    (0..n)
        .map(|_| {
            let z = r.random_range(3.0..8.0);
            Vector3::new(r.random_range(-0.5..0.5) * z, r.random_range(-0.4..0.4) * z, z)
        })
        .collect()
}

fn pose_error(a: &PoseSE3, b: &PoseSE3) -> f64 {
    a.rotation_distance(b).max((a.translation() - b.translation()).norm())
}

// ---------------------------------------------------------------------------
// Geometry

fn geometry() -> Check {
    let k = default_intrinsics();
    let mut worst = [0.0f64; 6];
    for seed in 0..20 {
        let mut r = rng(seed);
        let pts = cloud(&mut r, 40);
        let b = PoseSE3::new(random_rotation(&mut r, 0.2), Vector3::new(r.random_range(-1.0..1.0), r.random_range(-0.3..0.3), r.random_range(-0.3..0.3)));
        let a = PoseSE3::identity();
        let px_a: Vec<Vector2<f64>> = pts.iter().map(|x| k.project(&a.transform(x)).unwrap()).collect();
        let px_b: Vec<Vector2<f64>> = pts.iter().map(|x| k.project(&b.transform(x)).unwrap()).collect();

        let f = eight_point(&px_a, &px_b).map_err(|e| e.to_string())?;
        let kinv = k.matrix().try_inverse().unwrap();
        let f_true = kinv.transpose() * skew(&b.translation()) * b.rotation() * kinv;
        let f_true = f_true / f_true.norm();
        let f_unit = f / f.norm();
        let mut residual = (f_unit - f_true).norm().min((f_unit + f_true).norm());
        for (pa, pb) in px_a.iter().zip(&px_b) {
            let r = pb.push(1.0).transpose() * f_unit * pa.push(1.0);
            residual = residual.max(r[0].abs());
        }
        worst[0] = worst[0].max(residual);

        let na: Vec<Vector2<f64>> = px_a.iter().map(|p| k.normalize(*p)).collect();
        let nb: Vec<Vector2<f64>> = px_b.iter().map(|p| k.normalize(*p)).collect();
        let e_true = skew(&b.translation()) * b.rotation();
        let rel = decompose_essential(&(e_true / e_true.norm()), &na, &nb).map_err(|e| e.to_string())?;
        let unit_b = PoseSE3::from_matrix(&b.rotation(), b.translation().normalize());
        worst[1] = worst[1].max(pose_error(&rel, &unit_b));

        for (i, x) in pts.iter().enumerate() {
            let t = triangulate(&a, &b, &na[i], &nb[i]).map_err(|e| e.to_string())?;
            worst[2] = worst[2].max((t.point - x).norm());
        }

        let est = pnp(&pts, &px_b, &k).map_err(|e| e.to_string())?;
        worst[3] = worst[3].max(pose_error(&est.pose, &b));
        let planar: Vec<Vector3<f64>> = pts.iter().map(|x| Vector3::new(x.x, x.y, 5.0)).collect();
        let planar_px: Vec<Vector2<f64>> = planar.iter().map(|x| k.project(&b.transform(x)).unwrap()).collect();
        let est = pnp(&planar, &planar_px, &k).map_err(|e| e.to_string())?;
        worst[3] = worst[3].max(pose_error(&est.pose, &b));

        let start = PoseSE3::new(
            random_rotation(&mut r, 0.05) * b.quaternion(),
            b.translation() + Vector3::new(0.05, -0.03, 0.04),
        );
        let refined = refine_pose(&start, &pts, &px_b, &k, 50, 1e-14).map_err(|e| e.to_string())?;
        worst[4] = worst[4].max(pose_error(&refined.pose, &b));

        for x in pts.iter().take(10) {
            let j = project_jacobian(&b, x, &k);
            let h = 1e-6;
            let mut fd = nalgebra::Matrix2x6::zeros();
            for c in 0..6 {
                let mut step = Vector6::zeros();
                step[c] = h;
                let perturb = |s: &Vector6<f64>| {
                    let w = Vector3::new(s[0], s[1], s[2]);
                    let d = Vector3::new(s[3], s[4], s[5]);
                    let p = PoseSE3::from_matrix(&(so3_exp(&w) * b.rotation()), b.translation() + d);
                    k.project(&p.transform(x)).unwrap()
                };
                let col = (perturb(&step) - perturb(&-step)) / (2.0 * h);
                fd.set_column(c, &col);
            }
            worst[5] = worst[5].max((j - fd).norm() / j.norm());
        }
    }
    let limits = [1e-6, 1e-6, 1e-9, 1e-6, 1e-6, 1e-5];
    let names = ["eight_point", "decompose_essential", "triangulate", "pnp", "refine_pose", "jacobian"];
    for i in 0..6 {
        ensure(worst[i] < limits[i], || format!("{} error {:.3e} >= {:.0e}", names[i], worst[i], limits[i]))?;
    }
    Ok(format!(
        "worst: F {:.1e}, E {:.1e}, tri {:.1e} m, pnp {:.1e}, refine {:.1e}, J rel {:.1e}",
        worst[0], worst[1], worst[2], worst[3], worst[4], worst[5]
    ))
}

// ---------------------------------------------------------------------------
// Alignment and metrics

fn moving_trajectory(n: usize, dt: f64) -> Trajectory {
    let mut t = Trajectory::new();
    for (i, p) in orbit_poses(n, 1.0).into_iter().enumerate() {
        t.push(i as f64 * dt, p);
    }
    t
}

fn transformed(t: &Trajectory, s: f64, q: &UnitQuaternion<f64>, shift: &Vector3<f64>) -> Trajectory {
    let mut out = Trajectory::new();
    for smp in &t.samples {
        let c = s * (q * smp.pose.center()) + shift;
        out.push(smp.timestamp, PoseSE3::from_center(q * smp.pose.orientation(), c));
    }
    out
}

fn records(n: usize, dt: f64, tracked: impl Fn(usize) -> bool) -> Vec<FrameRecord> {
    (0..n)
        .map(|i| FrameRecord {
            frame: i,
            timestamp: i as f64 * dt,
            status: if tracked(i) { FrameStatus::Tracking } else { FrameStatus::Lost },
            n_inliers: 0,
        })
        .collect()
}

fn alignment() -> Check {
    let mut r = rng(7);
    let pts: Vec<Vector3<f64>> = (0..50)
        .map(|_| Vector3::new(r.random_range(-2.0..2.0), r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)))
        .collect();
    let (s, q, t) = (2.5, random_rotation(&mut r, 3.0), Vector3::new(0.3, -1.2, 4.0));
    let moved: Vec<Vector3<f64>> = pts.iter().map(|p| s * (q * p) + t).collect();
    let sim = umeyama_align(&pts, &moved, true).map_err(|e| e.to_string())?;
    let sim_err = (sim.scale - s)
        .abs()
        .max((sim.rotation - q.to_rotation_matrix().into_inner()).norm())
        .max((sim.translation - t).norm());
    ensure(sim_err < 1e-9, || format!("umeyama error {sim_err:.3e}"))?;

    let gt = moving_trajectory(101, 0.05);
    let mut noisy = Trajectory::new();
    for smp in &gt.samples {
        let c = smp.pose.center() + Vector3::new(r.random_range(-0.05..0.05), r.random_range(-0.05..0.05), r.random_range(-0.05..0.05));
        noisy.push(smp.timestamp, PoseSE3::from_center(smp.pose.orientation(), c));
    }
    let (ate0, _) = ate_rmse(&noisy, &gt, 0.02).map_err(|e| e.to_string())?;
    let mut ate_dev = 0.0f64;
    for seed in 0..5 {
        let mut r = rng(100 + seed);
        let q = random_rotation(&mut r, 3.0);
        let perturbed = transformed(&noisy, r.random_range(0.2..5.0), &q, &Vector3::new(r.random_range(-9.0..9.0), 1.0, -2.0));
        let (ate, _) = ate_rmse(&perturbed, &gt, 0.02).map_err(|e| e.to_string())?;
        ate_dev = ate_dev.max((ate - ate0).abs());
    }
    ensure(ate_dev < 1e-9, || format!("ATE changed by {ate_dev:.3e} under sim(3)"))?;

    let recs = records(101, 0.05, |i| i % 7 != 3);
    let mut prev_row: Option<Vec<f64>> = None;
    for ate_t in [0.0, 0.01, 0.02, 0.04, 0.08, 1.0] {
        let row: Vec<f64> = [0.0, 0.5, 2.0, 10.0, 180.0]
            .iter()
            .map(|a: &f64| correct_rate(&noisy, &gt, &recs, ate_t, a.to_radians(), 0.02).unwrap())
            .collect();
        ensure(row.windows(2).all(|w| w[1] >= w[0]), || format!("CR not monotone in AOE threshold: {row:?}"))?;
        if let Some(p) = &prev_row {
            ensure(row.iter().zip(p).all(|(a, b)| a >= b), || format!("CR not monotone in ATE threshold: {p:?} -> {row:?}"))?;
        }
        prev_row = Some(row);
    }

    let est = Trajectory::from_samples(gt.samples[..60].to_vec());
    let cr = correct_rate(&est, &gt, &records(101, 0.05, |i| i < 60), 0.3, 10f64.to_radians(), 0.02).map_err(|e| e.to_string())?;
    ensure((cr - 0.6).abs() < 1e-9, || format!("60% coverage gave CR {cr}"))?;
    Ok(format!("umeyama err {sim_err:.1e}, ATE drift {ate_dev:.1e}, CR(60%) = {cr:.12}"))
}

// ---------------------------------------------------------------------------
// ORB

/// Bilinear rotation about the image center; outside pixels are black.
fn rotate_image(img: &GrayImage, angle: f64) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (s, c) = angle.sin_cos();
    GrayImage::from_fn(w, h, |x, y| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        let sx = c * dx + s * dy + cx;
        let sy = -s * dx + c * dy + cy;
        if sx < 0.0 || sy < 0.0 || sx > (w - 1) as f64 || sy > (h - 1) as f64 {
            return 0;
        }
        let (x0, y0) = (sx.floor() as u32, sy.floor() as u32);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
        let v = img.get(x0, y0) as f64 * (1.0 - fx) * (1.0 - fy)
            + img.get(x1, y0) as f64 * fx * (1.0 - fy)
            + img.get(x0, y1) as f64 * (1.0 - fx) * fy
            + img.get(x1, y1) as f64 * fx * fy;
        v.round() as u8
    })
}

fn nearest(d: &Descriptor, pool: &[Descriptor]) -> usize {
    (0..pool.len()).min_by_key(|&j| d.hamming(&pool[j])).unwrap()
}

fn orb_suite() -> Check {
    let k = default_intrinsics();
    let img = room_scene(1.0).render(&orbit_poses(36, 1.0)[4], &k);
    let cfg = OrbConfig::default();
    let angle = 15f64.to_radians();
    let rotated = rotate_image(&img, angle);
    let (ka, da) = orb_detect_and_describe(&img, &cfg).map_err(|e| e.to_string())?;
    let (kb, db) = orb_detect_and_describe(&rotated, &cfg).map_err(|e| e.to_string())?;
    let (cx, cy) = ((img.width() as f64 - 1.0) / 2.0, (img.height() as f64 - 1.0) / 2.0);
    let (s, c) = angle.sin_cos();
    let expected = |p: &Keypoint| {
        let (dx, dy) = (p.x as f64 - cx, p.y as f64 - cy);
        Vector2::new(c * dx - s * dy + cx, s * dx + c * dy + cy)
    };
    let close = |q: &Vector2<f64>, p: &Keypoint, tol: f64| (Vector2::new(p.x as f64, p.y as f64) - q).norm() <= tol;
    let (mut pairs, mut hits) = (0, 0);
    for (i, p) in ka.iter().enumerate() {
        let q = expected(p);
        let tol = 2.0 * cfg.scale_factor.powi(p.octave as i32);
        if !kb.iter().any(|b| b.octave == p.octave && close(&q, b, tol)) {
            continue;
        }
        pairs += 1;
        let j = nearest(&da[i], &db);
        if close(&q, &kb[j], tol) {
            hits += 1;
        }
    }
    let recall = hits as f64 / pairs.max(1) as f64;
    ensure(pairs >= 100, || format!("only {pairs} ground-truth correspondences"))?;
    ensure(recall >= 0.7, || format!("recall {:.1}% over {pairs} correspondences", 100.0 * recall))?;

    let again = orb_detect_and_describe(&img, &cfg).map_err(|e| e.to_string())?;
    ensure(again == (ka.clone(), da.clone()), || "two runs differ".into())?;
    let n = std::thread::available_parallelism().map_or(2, |n| n.get()).max(2);
    for threads in [1, n] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let out = pool.install(|| orb_detect_and_describe(&img, &cfg)).map_err(|e| e.to_string())?;
        ensure(out == (ka.clone(), da.clone()), || format!("{threads} threads differ"))?;
    }

    let mut r = rng(3);
    let mut desc = || Descriptor { bits: [r.random(), r.random(), r.random(), r.random()] };
    for _ in 0..1000 {
        let (a, b, c) = (desc(), desc(), desc());
        let popcount = |x: &Descriptor, y: &Descriptor| (0..256).filter(|&i| x.bit(i) != y.bit(i)).count() as u32;
        ensure(a.hamming(&a) == 0, || "d(a,a) != 0".into())?;
        ensure(a.hamming(&b) == b.hamming(&a), || "asymmetric".into())?;
        ensure((a.hamming(&b) == 0) == (a == b), || "d(a,b) = 0 for distinct a, b".into())?;
        ensure(a.hamming(&c) <= a.hamming(&b) + b.hamming(&c), || "triangle inequality".into())?;
        ensure(a.hamming(&b) == popcount(&a, &b), || "disagrees with bitwise count".into())?;
    }
    Ok(format!("15° recall {:.1}% over {pairs} correspondences; deterministic at 1 and {n} threads; axioms hold on 1000 triples", 100.0 * recall))
}

// ---------------------------------------------------------------------------
// Fixtures shared by the trend criteria

struct Fixtures {
    _dir: tempfile::TempDir,
    bright: PathBuf,
    dark: [PathBuf; 3],
}

const ORBIT_FRAMES: usize = 100;

fn fixtures() -> Result<Fixtures, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let bright = dir.path().join("bright");
    write_orbit_sequence(&bright, ORBIT_FRAMES, 1.0, None).map_err(|e| e.to_string())?;
    let seq = open_sequence_dir(&bright).map_err(|e| e.to_string())?;
    let mut dark = Vec::new();
    for level in DarkLevel::ALL {
        let p = dir.path().join(level.label());
        darken_sequence(&seq, &p, level, 42).map_err(|e| e.to_string())?;
        dark.push(p);
    }
    Ok(Fixtures {
        bright,
        dark: dark.try_into().unwrap(),
        _dir: dir,
    })
}

fn table_trend(fx: &Fixtures) -> Check {
    const FRAMES: usize = 60;
    let orb = OrbConfig::default();
    let params = BenchParams::default();
    let mean = |dir: &Path, specs: &[&str]| -> Result<Vec<f64>, String> {
        let mut seq = open_sequence_dir(dir).map_err(|e| e.to_string())?;
        seq.frames.truncate(FRAMES);
        let enh: Vec<EnhancerConfig> = specs.iter().map(|s| s.parse().unwrap()).collect();
        let runs = match_bench(&seq, &enh, &orb, &params).map_err(|e| e.to_string())?;
        runs.iter()
            .map(|r| r.error.as_ref().map_or(Ok(r.mean_inliers()), |e| Err(e.clone())))
            .collect()
    };
    let [shaded, semi, dark] = &fx.dark;
    let d = mean(dark, &["none", "histeq", "attention:gamma:2"])?;
    let sd = mean(semi, &["none"])?[0];
    let sh = mean(shaded, &["none"])?[0];
    let (orig, he, att) = (d[0], d[1], d[2]);
    let table = format!("dark original {orig:.1}, histeq {he:.1}, attention(gamma 2) {att:.1}; original semi-dark {sd:.1}, shaded {sh:.1}");
    ensure(he > orig, || format!("histeq not above original: {table}"))?;
    ensure(att > orig, || format!("attention not above original: {table}"))?;
    ensure(orig < sd && sd < sh, || format!("darkness ordering broken: {table}"))?;
    Ok(format!("{FRAMES} frames, mean inliers: {table}"))
}

fn vo_trend(fx: &Fixtures) -> Check {
    let dark = open_sequence_dir(&fx.dark[2]).map_err(|e| e.to_string())?;
    let plain = run_vo(&dark, &VoConfig::default()).map_err(|e| e.to_string())?;
    let cfg = VoConfig {
        enhancer: "attention:gamma:2".parse().unwrap(),
        ..VoConfig::default()
    };
    let enhanced = run_vo(&dark, &cfg).map_err(|e| e.to_string())?;
    let (f0, f1) = (plain.tracking_fraction(), enhanced.tracking_fraction());
    ensure(f1 > 0.0 && f1 >= 2.0 * f0, || format!("tracked fraction enhanced {f1:.3} vs plain {f0:.3}"))?;

    let bright = open_sequence_dir(&fx.bright).map_err(|e| e.to_string())?;
    let out = run_vo(&bright, &VoConfig::default()).map_err(|e| e.to_string())?;
    let gt = load_trajectory(&fx.bright.join(GROUNDTRUTH_FILE)).map_err(|e| e.to_string())?;
    let (ate, _) = ate_rmse(&out.trajectory, &gt, 0.02).map_err(|e| e.to_string())?;
    let centers: Vec<Vector3<f64>> = gt.samples.iter().map(|s| s.pose.center()).collect();
    let extent = centers
        .iter()
        .flat_map(|a| centers.iter().map(move |b| (a - b).norm()))
        .fold(0.0, f64::max);
    ensure(ate < 0.05 * extent, || format!("bright ATE {ate:.4} m vs extent {extent:.3} m"))?;
    Ok(format!(
        "dark tracked {:.1}% enhanced vs {:.1}% plain; bright ATE {:.4} m, extent {:.3} m, tracked {:.1}%",
        100.0 * f1,
        100.0 * f0,
        ate,
        extent,
        100.0 * out.tracking_fraction()
    ))
}

// ---------------------------------------------------------------------------
// RANSAC

fn ransac() -> Check {
    let k = default_intrinsics();
    let (mut worst_true, mut worst_false) = (usize::MAX, 0);
    for seed in 0..20u64 {
        let mut r = rng(1000 + seed);
        let pts = cloud(&mut r, 100);
        let b = PoseSE3::new(random_rotation(&mut r, 0.15), Vector3::new(0.5, 0.1, 0.05));
        let mut pa: Vec<Vector2<f64>> = pts.iter().map(|x| k.project(x).unwrap()).collect();
        let mut pb: Vec<Vector2<f64>> = pts.iter().map(|x| k.project(&b.transform(x)).unwrap()).collect();
        for _ in 0..50 {
            pa.push(Vector2::new(r.random_range(0.0..640.0), r.random_range(0.0..480.0)));
            pb.push(Vector2::new(r.random_range(0.0..640.0), r.random_range(0.0..480.0)));
        }
        let params = RansacParams { seed, ..RansacParams::default() };
        let res = ransac_fundamental_points(&pa, &pb, &params).map_err(|e| e.to_string())?;
        let n_true = res.inlier_mask[..100].iter().filter(|&&m| m).count();
        let n_false = res.inlier_mask[100..].iter().filter(|&&m| m).count();
        worst_true = worst_true.min(n_true);
        worst_false = worst_false.max(n_false);
    }
    ensure(worst_true >= 99 && worst_false <= 2, || format!("worst seed: {worst_true} true, {worst_false} false inliers"))?;
    Ok(format!("over 20 seeds: at least {worst_true}/100 true inliers, at most {worst_false}/50 false"))
}

// ---------------------------------------------------------------------------
// CLI

fn cli(args: &[&str]) -> Result<(i32, String), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_dimslam"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    Ok((o.status.code().unwrap_or(-1), String::from_utf8_lossy(&o.stderr).into_owned()))
}

fn cli_ok(args: &[&str]) -> Result<(), String> {
    let (code, err) = cli(args)?;
    ensure(code == 0, || format!("{args:?} exited {code}: {err}"))
}

fn read_tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Returns the expected camera-to-rig matrix for an identity rig pose.
fn calib_fixture(dir: &Path, k: &CameraIntrinsics) -> Result<Matrix4<f64>, String> {
    let cam = PoseSE3::look_at(Vector3::new(0.2, 0.1, -0.5), Vector3::new(0.0, 0.0, 2.0), Vector3::y());
    let mut r = rng(11);
    let mut corr = String::new();
    for _ in 0..30 {
        let x = Vector3::new(r.random_range(-0.5..0.5), r.random_range(-0.4..0.4), r.random_range(1.5..2.5));
        let uv = k.project(&cam.transform(&x)).unwrap();
        corr.push_str(&format!("{} {} {} {} {}\n", x.x, x.y, x.z, uv.x, uv.y));
    }
    fs::write(dir.join("corr.txt"), corr).map_err(|e| e.to_string())?;
    fs::write(dir.join("k.yaml"), k.to_flat_string()).map_err(|e| e.to_string())?;
    fs::write(dir.join("rig.txt"), "1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n").map_err(|e| e.to_string())?;
    Ok(cam.inverse().to_matrix())
}

fn cli_suite(fx: &Fixtures) -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let t = |name: &str| tmp.path().join(name);
    let s = |p: &Path| p.to_str().unwrap().to_string();

    let short = t("short");
    let mut seq = open_sequence_dir(&fx.bright).map_err(|e| e.to_string())?;
    seq.frames.truncate(30);
    let mut times = String::new();
    fs::create_dir_all(&short).map_err(|e| e.to_string())?;
    for f in &seq.frames {
        times.push_str(&format!("{} {}\n", f.timestamp, f.path.file_name().unwrap().to_str().unwrap()));
    }
    for entry in ["images", "intrinsics.yaml", "meta.txt", GROUNDTRUTH_FILE] {
        let src = fx.bright.join(entry);
        if src.is_dir() {
            fs::create_dir_all(short.join(entry)).map_err(|e| e.to_string())?;
            for f in &seq.frames {
                let name = f.path.file_name().unwrap();
                fs::copy(&f.path, short.join(entry).join(name)).map_err(|e| e.to_string())?;
            }
        } else {
            fs::copy(&src, short.join(entry)).map_err(|e| e.to_string())?;
        }
    }
    fs::write(short.join("times.txt"), times).map_err(|e| e.to_string())?;
    ensure(open_sequence_dir(&short).map_err(|e| e.to_string())?.len() == 30, || "fixture subset".into())?;

    for sub in ["enhance", "match-bench", "vo", "eval", "calib", "darksim", "report"] {
        cli_ok(&[sub, "--help"])?;
    }
    let (code, _) = cli(&[])?;
    ensure(code == 2, || format!("no arguments exited {code}"))?;
    let (code, _) = cli(&["enhance", "--in", &s(&short), "--out", &s(&t("x")), "--gamma", "2", "--histeq"])?;
    ensure(code == 2, || format!("conflicting enhancers exited {code}"))?;
    let (code, _) = cli(&["vo", "--seq", &s(&t("missing")), "--out", &s(&t("x"))])?;
    ensure(code == 1, || format!("missing sequence exited {code}"))?;

    cli_ok(&["enhance", "--in", &s(&short), "--gamma", "2", "--out", &s(&t("enh"))])?;
    cli_ok(&["darksim", "--in", &s(&short), "--level", "dark", "--out", &s(&t("dark"))])?;
    cli_ok(&["match-bench", "--seq", &s(&t("dark")), "--enhancers", "none,gamma:2", "--out", &s(&t("mb"))])?;
    cli_ok(&["vo", "--seq", &s(&short), "--out", &s(&t("vo"))])?;
    cli_ok(&[
        "eval", "--est", &s(&t("vo").join("trajectory.txt")), "--gt", &s(&short.join(GROUNDTRUTH_FILE)),
        "--status", &s(&t("vo").join("status.csv")), "--out", &s(&t("ev")),
    ])?;
    cli_ok(&["report", "--runs", &s(&t("ev")), "--out", &s(&t("rep"))])?;
    let cal = t("cal");
    fs::create_dir_all(&cal).map_err(|e| e.to_string())?;
    let expect = calib_fixture(&cal, &seq.intrinsics)?;
    cli_ok(&[
        "calib", "--correspondences", &s(&cal.join("corr.txt")), "--intrinsics", &s(&cal.join("k.yaml")),
        "--rig-pose", &s(&cal.join("rig.txt")), "--out", &s(&cal.join("out")),
    ])?;
    let got: Vec<f64> = fs::read_to_string(cal.join("out/camera_to_rig.txt"))
        .map_err(|e| e.to_string())?
        .split_whitespace()
        .map(|v| v.parse().unwrap())
        .collect();
    let calib_err = (Matrix4::from_row_slice(&got) - expect).abs().max();
    ensure(calib_err < 1e-6, || format!("calib extrinsic error {calib_err:.3e}"))?;

    let n = std::thread::available_parallelism().map_or(2, |n| n.get()).max(2).to_string();
    let out = t("det");
    let jobs: [Vec<String>; 3] = [
        vec!["vo".into(), "--seq".into(), s(&short), "--out".into(), s(&out)],
        vec!["match-bench".into(), "--seq".into(), s(&short), "--enhancers".into(), "none,histeq".into(), "--out".into(), s(&out)],
        vec!["darksim".into(), "--in".into(), s(&short), "--level".into(), "semi-dark".into(), "--out".into(), s(&out)],
    ];
    for job in &jobs {
        let mut trees = Vec::new();
        for threads in ["1", n.as_str()] {
            let _ = fs::remove_dir_all(&out);
            let mut args = vec!["--threads", threads];
            args.extend(job.iter().map(String::as_str));
            cli_ok(&args)?;
            trees.push(read_tree(&out));
        }
        ensure(trees[0] == trees[1], || format!("{} output differs between 1 and {n} threads", job[0]))?;
    }
    Ok(format!("7 subcommands ran; exit codes 0/1/2 as specified; vo, match-bench, darksim identical at 1 and {n} threads"))
}

// ---------------------------------------------------------------------------

fn report(name: &str, limit: Duration, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let res = f();
    let took = start.elapsed();
    let res = res.and_then(|msg| {
        if took > limit {
            Err(format!("took {:.1} s, limit {} s", took.as_secs_f64(), limit.as_secs()))
        } else {
            Ok(msg)
        }
    });
    match res {
        Ok(msg) => {
            println!("PASS {name} ({:.1} s): {msg}", took.as_secs_f64());
            true
        }
        Err(msg) => {
            println!("FAIL {name} ({:.1} s): {msg}", took.as_secs_f64());
            false
        }
    }
}

fn main() {
    let secs = Duration::from_secs;
    let mut ok = true;
    ok &= report("geometric oracles", secs(10), geometry);
    ok &= report("alignment and metrics", secs(5), alignment);
    ok &= report("ORB", secs(30), orb_suite);
    ok &= report("RANSAC robustness", secs(10), ransac);
    let start = Instant::now();
    match fixtures() {
        Ok(fx) => {
            let render = start.elapsed().as_secs_f64();
            println!("     rendered {ORBIT_FRAMES}-frame orbit and its darkened copies in {render:.1} s");
            ok &= report("match-count trend", secs(180), || table_trend(&fx));
            ok &= report("VO trend", secs(300), || vo_trend(&fx));
            ok &= report("CLI integration", secs(300), || cli_suite(&fx));
        }
        Err(e) => {
            for name in ["match-count trend", "VO trend", "CLI integration"] {
                println!("FAIL {name}: fixture rendering failed: {e}");
            }
            ok = false;
        }
    }
    if !ok {
        std::process::exit(1);
    }
}
