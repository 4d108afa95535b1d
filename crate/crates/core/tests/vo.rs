use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use nalgebra::{UnitQuaternion, Vector3};

use dimslam::dataio::{open_sequence_dir, write_sequence_header};
use dimslam::geometry::PoseSE3;
use dimslam::synth::{default_intrinsics, room_scene, write_orbit_sequence};
use dimslam::vo::{run_vo, try_initialize, FrameFeatures, FrameStatus, VoConfig, VoOutput};
use dimslam::{ColorImage, ImageSequence};

fn scratch() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| tempfile::tempdir().unwrap()).path()
}

fn orbit_200() -> &'static Path {
    static P: OnceLock<PathBuf> = OnceLock::new();
    P.get_or_init(|| {
        let p = scratch().join("orbit200");
        write_orbit_sequence(&p, 200, 1.0, None).unwrap();
        p
    })
}

fn first_tracking(out: &VoOutput) -> usize {
    out.records
        .iter()
        .position(|r| r.status == FrameStatus::Tracking)
        .expect("never initialized")
}

#[test]
fn two_views_ten_degrees_apart_initialize() {
    let k = default_intrinsics();
    let scene = room_scene(1.0);
    let target = Vector3::new(0.0, 0.0, 3.0);
    let eye = |deg: f64| {
        let q = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), deg.to_radians());
        target + q * Vector3::new(0.0, 0.0, -3.0)
    };
    let a = PoseSE3::look_at(eye(-5.0), target, Vector3::y());
    let b = PoseSE3::look_at(eye(5.0), target, Vector3::y());
    assert!((a.rotation_distance(&b).to_degrees() - 10.0).abs() < 1e-9);

    let cfg = VoConfig::default();
    let fa = FrameFeatures::extract(&scene.render(&a, &k), &cfg.orb).unwrap();
    let fb = FrameFeatures::extract(&scene.render(&b, &k), &cfg.orb).unwrap();
    let init = try_initialize(&fa, &fb, &k, &cfg).unwrap();
    assert!(init.points.len() >= 100, "{} landmarks", init.points.len());

    let rel = b.compose(&a.inverse());
    assert!(init.pose.rotation_distance(&rel) < 0.5f64.to_radians());
    let dir = rel.translation().normalize();
    assert!(init.pose.translation().normalize().dot(&dir) > 0.999);
}

#[test]
fn all_black_sequence_never_initializes() {
    let root = scratch().join("black");
    let k = default_intrinsics();
    let frames: Vec<(f64, String)> = (0..8).map(|i| (i as f64 * 0.05, format!("{i:06}.png"))).collect();
    let images = write_sequence_header(&root, &frames, &k, &Default::default()).unwrap();
    for (_, name) in &frames {
        ColorImage::filled_gray(k.width, k.height, 0).save(&images.join(name)).unwrap();
    }
    let out = run_vo(&open_sequence_dir(&root).unwrap(), &VoConfig::default()).unwrap();
    assert!(out.trajectory.samples.is_empty());
    assert_eq!(out.records.len(), 8);
    assert!(out.records.iter().all(|r| r.status == FrameStatus::NotInitialized));
    assert_eq!(out.init_time, None);
}

#[test]
fn orbit_is_tracked_after_initialization() {
    let seq = open_sequence_dir(orbit_200()).unwrap();
    let out = run_vo(&seq, &VoConfig::default()).unwrap();
    let start = first_tracking(&out);
    let after = &out.records[start..];
    let tracked = after.iter().filter(|r| r.status == FrameStatus::Tracking).count();
    assert!(
        tracked as f64 >= 0.95 * after.len() as f64,
        "{tracked}/{} after init at frame {start}",
        after.len()
    );
    assert_eq!(out.trajectory.len(), out.records.iter().filter(|r| r.status == FrameStatus::Tracking).count());
    assert_eq!(out.init_time, Some(out.records[start].timestamp));
}

fn prefix(seq: &ImageSequence, n: usize) -> ImageSequence {
    let mut s = seq.clone();
    s.frames.truncate(n);
    s
}

#[test]
fn output_does_not_depend_on_thread_count() {
    let seq = prefix(&open_sequence_dir(orbit_200()).unwrap(), 40);
    let cfg = VoConfig::default();
    let runs: Vec<VoOutput> = [1, 3]
        .iter()
        .map(|&n| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
            pool.install(|| run_vo(&seq, &cfg).unwrap())
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0], run_vo(&seq, &cfg).unwrap());
    assert!(runs[0].tracking_fraction() > 0.5);
}

#[test]
fn doubling_scene_scale_keeps_the_trajectory() {
    let a = scratch().join("scale1");
    let b = scratch().join("scale2");
    write_orbit_sequence(&a, 100, 1.0, None).unwrap();
    write_orbit_sequence(&b, 100, 2.0, None).unwrap();
    let cfg = VoConfig::default();
    let sa = prefix(&open_sequence_dir(&a).unwrap(), 25);
    let sb = prefix(&open_sequence_dir(&b).unwrap(), 25);
    let (oa, ob) = (run_vo(&sa, &cfg).unwrap(), run_vo(&sb, &cfg).unwrap());
    assert!(oa.trajectory.len() > 5);
    assert_eq!(oa, ob);
}
