use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use ugvkit::commands::{
    cmd_calibrate, cmd_decode, cmd_eval, cmd_init_weights, cmd_pose, cmd_synth, SynthOptions, ANNOTATIONS_FILE,
    CAMERA_FILE, MAP_DIR, MAP_INDEX_FILE, REFERENCE_FILE, SCENES_FILE,
};
use ugvkit::formats::{read_jsonl, AnnotationRecord, CameraConfig, DetectionRecord, PoseFrame, SceneRecord};
use ugvkit_core::decoding::DecodeParams;
use ugvkit_core::geometry::RobotModel;
use ugvkit_core::network::{forward, init_parameters, NetworkConfig, Variant};
use ugvkit_core::Tensor;

fn synth(dir: &Path, n: usize, seed: u64) {
    let opts = SynthOptions {
        n,
        seed,
        ..SynthOptions::default()
    };
    cmd_synth(&opts, dir).unwrap();
}

fn as_detection(a: &AnnotationRecord) -> DetectionRecord {
    DetectionRecord {
        image_id: a.image_id.clone(),
        complete: true,
        kps: a.kps.map(|(x, y, _)| Some([x, y, 1.0])),
        score: 4.0,
    }
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ugvkit"))
}

fn all_files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_is_byte_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    synth(a.path(), 3, 11);
    synth(b.path(), 3, 11);
    let files = all_files(a.path());
    assert_eq!(files, all_files(b.path()));
    assert!(files.len() >= 5 + 6);
    for f in files {
        assert_eq!(fs::read(a.path().join(&f)).unwrap(), fs::read(b.path().join(&f)).unwrap(), "{}", f.display());
    }
}

#[test]
fn noiseless_annotations_are_exact_projections() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 5, 2);
    let anns: Vec<AnnotationRecord> = read_jsonl(&dir.path().join(ANNOTATIONS_FILE)).unwrap();
    let poses: Vec<SceneRecord> = read_jsonl(&dir.path().join(SCENES_FILE)).unwrap();
    let cam = CameraConfig::load(&dir.path().join(CAMERA_FILE)).unwrap().intrinsics().unwrap();
    let model = RobotModel::default();
    for (a, p) in anns.iter().zip(&poses) {
        assert_eq!(a.image_id, p.image_id);
        let pose = p.robot_to_camera.to_pose().unwrap();
        for (k, x) in a.kps.iter().zip(model.keypoints()) {
            let q = cam.project(&pose, &x).unwrap();
            assert_eq!((k.0, k.1, k.2), (q.x, q.y, 1));
        }
    }
}

#[test]
fn gt_versus_gt_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 10, 3);
    let anns: Vec<AnnotationRecord> = read_jsonl(&dir.path().join(ANNOTATIONS_FILE)).unwrap();
    let dets: Vec<_> = anns.iter().map(as_detection).collect();
    let cam = CameraConfig::load(&dir.path().join(CAMERA_FILE)).unwrap().intrinsics().unwrap();
    let model = RobotModel::default();
    let r = cmd_eval(&dets, &anns, 0.8, Some((&model, &cam)), false).unwrap();
    assert_eq!((r.tp, r.fp, r.fn_), (10, 0, 0));
    assert_eq!((r.precision, r.recall, r.mean_iou, r.mean_dist), (Some(1.0), Some(1.0), Some(1.0), Some(0.0)));
    assert!(r.pose_reproj_err.unwrap() < 1e-6);
}

#[test]
fn synth_maps_decode_to_annotations() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 20, 4);
    let anns: Vec<AnnotationRecord> = read_jsonl(&dir.path().join(ANNOTATIONS_FILE)).unwrap();
    let dets = cmd_decode(&dir.path().join(MAP_DIR).join(MAP_INDEX_FILE), &DecodeParams::default(), true).unwrap();
    let r = cmd_eval(&dets, &anns, 0.8, None, false).unwrap();
    // far robots can fall below the decoder's resolution; most must match
    assert!(r.tp >= 16, "{r:?}");
    assert!(r.mean_iou.unwrap() > 0.85, "{r:?}");
}

#[test]
fn calibrate_then_pose_is_self_consistent() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 10, 5);
    let config = dir.path().join(CAMERA_FILE);
    let reference: Vec<AnnotationRecord> = read_jsonl(&dir.path().join(REFERENCE_FILE)).unwrap();
    let model = RobotModel::default();
    cmd_calibrate(&reference[0], &config, &model).unwrap();
    assert!(!dir.path().join("camera.json.bak").exists());
    let camera = CameraConfig::load(&config).unwrap();

    let (poses, summary) = cmd_pose(&[as_detection(&reference[0])], &camera, &model).unwrap();
    assert_eq!(summary.solved, 1);
    assert_eq!(poses[0].frame, PoseFrame::World);
    assert!(poses[0].t.iter().all(|v| v.abs() < 1e-6), "{:?}", poses[0].t);

    // known world poses of the generated scenes
    let anns: Vec<AnnotationRecord> = read_jsonl(&dir.path().join(ANNOTATIONS_FILE)).unwrap();
    let truth: Vec<SceneRecord> = read_jsonl(&dir.path().join(SCENES_FILE)).unwrap();
    let dets: Vec<_> = anns.iter().map(as_detection).collect();
    let (poses, _) = cmd_pose(&dets, &camera, &model).unwrap();
    for (p, t) in poses.iter().zip(&truth) {
        for k in 0..3 {
            assert!((p.t[k] - t.robot_to_world.t[k]).abs() < 1e-6);
        }
        assert!((p.euler.theta_z - t.euler.theta_z).abs() < 1e-6);
    }

    // rerun keeps a backup of the previous block
    cmd_calibrate(&reference[0], &config, &model).unwrap();
    let bak = CameraConfig::load(&dir.path().join("camera.json.bak")).unwrap();
    assert_eq!(bak, camera);
}

#[test]
fn pose_skips_incomplete_and_falls_back_to_camera_frame() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 2, 6);
    let camera = CameraConfig::load(&dir.path().join(CAMERA_FILE)).unwrap();
    let anns: Vec<AnnotationRecord> = read_jsonl(&dir.path().join(ANNOTATIONS_FILE)).unwrap();
    let mut partial = as_detection(&anns[1]);
    partial.kps[2] = None;
    partial.complete = false;
    let (poses, summary) = cmd_pose(&[as_detection(&anns[0]), partial], &camera, &RobotModel::default()).unwrap();
    assert_eq!((summary.solved, summary.skipped_incomplete, summary.failures), (1, 1, 0));
    assert_eq!(poses[0].frame, PoseFrame::Camera);
    let truth: Vec<SceneRecord> = read_jsonl(&dir.path().join(SCENES_FILE)).unwrap();
    assert!((0..3).all(|k| (poses[0].t[k] - truth[0].robot_to_camera.t[k]).abs() < 1e-6));
}

#[test]
fn forward_is_independent_of_thread_count() {
    let cfg = NetworkConfig {
        input_size: (64, 96),
        ..NetworkConfig::full()
    };
    let store = init_parameters(&cfg, 9).unwrap();
    let img = Tensor::new([3, 64, 96], (0..3 * 64 * 96).map(|i| ((i * 37) % 101) as f32 / 100.0).collect()).unwrap();
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| forward(&img, &store, &cfg).unwrap())
    };
    let (a, b) = (run(1), run(4));
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(a.heatmap.dims(), &[5, 16, 24]);
    assert_eq!(bits(&a.heatmap), bits(&b.heatmap));
    assert_eq!(bits(&a.paf), bits(&b.paf));
}

#[test]
fn init_weights_manifest_loads() {
    let dir = tempfile::tempdir().unwrap();
    let m = cmd_init_weights(Variant::Star, 1, dir.path()).unwrap();
    let (cfg, store) = ugvkit::weights::load_parameters(&m).unwrap();
    assert_eq!(cfg, NetworkConfig::star());
    assert_eq!(store.num_values(), ugvkit_core::network::model_stats(&cfg).unwrap().params);
}

#[test]
fn binary_pipeline_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |args: &[&str]| {
        let out = bin().args(args).current_dir(d).output().unwrap();
        (out.status.code(), String::from_utf8_lossy(&out.stdout).into_owned())
    };

    assert_eq!(run(&["synth", "--n", "8", "--seed", "1", "--out", "s", "--no-maps"]).0, Some(0));
    assert_eq!(run(&["encode", "s/annotations.jsonl", "--out", "maps"]).0, Some(0));
    assert_eq!(run(&["decode", "maps/index.jsonl", "--single-ugv", "--out", "det.jsonl"]).0, Some(0));
    assert_eq!(run(&["calibrate", "s/reference.jsonl", "--config", "s/camera.json"]).0, Some(0));
    assert_eq!(run(&["pose", "det.jsonl", "--config", "s/camera.json", "--out", "poses.jsonl"]).0, Some(0));
    let (code, report) = run(&["eval", "det.jsonl", "s/annotations.jsonl", "--iou-thresh", "0.8"]);
    assert_eq!(code, Some(0));
    assert!(report.contains("precision") && report.contains("recall"), "{report}");
    let poses = fs::read_to_string(d.join("poses.jsonl")).unwrap();
    assert!(poses.lines().count() >= 6);
    assert!(poses.contains("\"frame\":\"world\""));

    let (code, stats) = run(&["stats", "--variant", "full"]);
    assert_eq!(code, Some(0));
    let params: usize = stats
        .lines()
        .find_map(|l| l.strip_prefix("params"))
        .and_then(|l| l.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    assert!((2_500_000..=3_300_000).contains(&params));

    // I/O error
    assert_eq!(run(&["decode", "missing/index.jsonl"]).0, Some(2));
    // validation errors
    fs::write(d.join("bad.jsonl"), "{not json}\n").unwrap();
    assert_eq!(run(&["pose", "bad.jsonl", "--config", "s/camera.json"]).0, Some(1));
    assert_eq!(run(&["stats", "--variant", "huge"]).0, Some(1));
    assert_eq!(run(&["synth", "--n", "0", "--out", "z"]).0, Some(1));
}

#[test]
fn infer_and_overlay_run_on_images() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let img = d.join("frame.png");
    image::RgbImage::from_fn(64, 36, |x, y| image::Rgb([(x * 4) as u8, (y * 7) as u8, 90])).save(&img).unwrap();
    let manifest = cmd_init_weights(Variant::Star, 2, &d.join("w")).unwrap();
    let index = ugvkit::commands::cmd_infer(&manifest, &[img.clone()], &d.join("maps")).unwrap();
    let heat = ugvkit::io::tensor_read(&d.join("maps/frame.heat.ugvt")).unwrap();
    assert_eq!(heat.dims(), &[5, 90, 160]);
    cmd_decode(&index, &DecodeParams::default(), false).unwrap();

    let det = DetectionRecord {
        image_id: "frame".into(),
        complete: true,
        kps: [Some([10.0, 10.0, 1.0]), Some([50.0, 10.0, 1.0]), Some([50.0, 30.0, 1.0]), Some([10.0, 30.0, 1.0])],
        score: 4.0,
    };
    let out = d.join("overlay.png");
    let cam = ugvkit_core::geometry::CameraIntrinsics::new(60.0, 60.0, 32.0, 18.0).unwrap();
    let model = RobotModel::default();
    let n = ugvkit::commands::cmd_overlay(&img, &[det], None, Some((&cam, &model)), &out).unwrap();
    assert_eq!(n, 1);
    let drawn = image::open(&out).unwrap().to_rgb8();
    assert_eq!(drawn.dimensions(), (64, 36));
    assert_eq!(drawn.get_pixel(30, 10).0, [255, 0, 0]);
}
