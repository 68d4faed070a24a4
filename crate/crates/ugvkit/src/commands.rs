//! Subcommand implementations. Each command reads its inputs, runs the core
//! pipeline over a rayon pool and writes outputs in input order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use ugvkit_core::decoding::{best_detection, decode_maps, to_raw_coordinates, DecodeParams, Detection};
use ugvkit_core::encoding::{encode_ground_truth, Annotation, EncodeParams, GroundTruthMaps, Keypoint};
use ugvkit_core::evaluation::{evaluate, EvalReport, Frame, Quad};
use ugvkit_core::geometry::{
    camera_extrinsics_from_reference, extract_euler_zxy, pose_to_world, solve_p4p_lm, CameraIntrinsics, LmSettings,
    Point2, RigidPose, RobotModel,
};
use ugvkit_core::network::{forward, init_parameters, model_stats, ModelStats, NetworkConfig, Variant};
use ugvkit_core::synth::{SceneGenerator, SceneParams};

use crate::error::{Error, Result};
use crate::formats::{
    read_jsonl, write_json, write_jsonl, AnnotationRecord, CameraConfig, DetectionRecord, EulerJson, MapIndexRecord,
    PoseFrame, PoseJson, PoseRecord, SceneRecord,
};
use crate::{io, weights};

pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const SCENES_FILE: &str = "poses.jsonl";
pub const REFERENCE_FILE: &str = "reference.jsonl";
pub const CAMERA_FILE: &str = "camera.json";
pub const MAP_DIR: &str = "maps";
pub const MAP_INDEX_FILE: &str = "index.jsonl";

fn euler_json(r: &nalgebra::Matrix3<f64>) -> (EulerJson, bool) {
    let (e, lock) = extract_euler_zxy(r);
    (
        EulerJson {
            theta_z: e.theta_z,
            theta_x: e.theta_x,
            theta_y: e.theta_y,
        },
        lock,
    )
}

fn quad_pixels(q: &Quad) -> Vec<Point2> {
    q.iter().map(|&(x, y)| Point2::new(x, y)).collect()
}

/// Encode one raw-resolution annotation into maps for an `input_size` network input.
pub fn encode_annotation(ann: &Annotation, input_size: (usize, usize), params: &EncodeParams) -> Result<GroundTruthMaps> {
    let (ih, iw) = input_size;
    let s = params.stride.round() as usize;
    if s == 0 || params.stride.fract() != 0.0 {
        return Err(Error::invalid("stride must be a positive integer"));
    }
    let scaled = ann.scaled_to(iw, ih);
    let (maps, warnings) = encode_ground_truth(&scaled, ih.div_ceil(s), iw.div_ceil(s), params)?;
    for w in warnings {
        warn!("{}: {w:?}", ann.image_id);
    }
    Ok(maps)
}

/// Write maps for many images plus their index; returns the index path.
fn write_maps(dir: &Path, items: &[(String, (usize, usize), GroundTruthMaps)]) -> Result<PathBuf> {
    io::create_dir(dir)?;
    let records = items
        .par_iter()
        .map(|(id, (h, w), m)| {
            let rec = MapIndexRecord {
                image_id: id.clone(),
                w: *w,
                h: *h,
                heat: format!("{id}.heat.ugvt"),
                paf: format!("{id}.paf.ugvt"),
            };
            io::tensor_write(&dir.join(&rec.heat), &m.heatmap)?;
            io::tensor_write(&dir.join(&rec.paf), &m.paf)?;
            Ok(rec)
        })
        .collect::<Result<Vec<_>>>()?;
    let index = dir.join(MAP_INDEX_FILE);
    write_jsonl(&index, &records)?;
    Ok(index)
}

fn check_image_id(id: &str) -> Result<()> {
    let ok = !id.is_empty() && !id.starts_with('.') && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(format!("image_id `{id}` is not usable as a file name")))
    }
}

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub n: usize,
    pub seed: u64,
    pub noise_sigma: f64,
    pub camera: Option<CameraIntrinsics>,
    pub image_size: (usize, usize),
    pub input_size: (usize, usize),
    pub encode: EncodeParams,
    pub write_maps: bool,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            n: 100,
            seed: 0,
            noise_sigma: 0.0,
            camera: None,
            image_size: SceneParams::default().image_size,
            input_size: NetworkConfig::full().input_size,
            encode: EncodeParams::default(),
            write_maps: true,
        }
    }
}

/// Generate scenes into `out`: annotations, ground-truth poses, the camera
/// config, a reference-placement annotation and (optionally) encoded maps.
pub fn cmd_synth(opts: &SynthOptions, out: &Path) -> Result<usize> {
    if opts.n == 0 {
        return Err(Error::invalid("scene count must be at least 1"));
    }
    let mut params = SceneParams {
        noise_sigma: opts.noise_sigma,
        image_size: opts.image_size,
        ..SceneParams::default()
    };
    if let Some(cam) = &opts.camera {
        params.cam = *cam;
    }
    let gen = SceneGenerator::new(params.clone(), opts.seed)?;
    let scenes = (0..opts.n as u64)
        .into_par_iter()
        .map(|i| gen.scene(i))
        .collect::<Result<Vec<_>, _>>()?;
    io::create_dir(out)?;
    let anns: Vec<Annotation> = scenes
        .iter()
        .map(|s| s.annotation(s.default_image_id(), params.image_size))
        .collect();
    let records: Vec<_> = anns.iter().map(AnnotationRecord::from_annotation).collect();
    write_jsonl(&out.join(ANNOTATIONS_FILE), &records)?;
    let poses: Vec<_> = scenes
        .iter()
        .map(|s| SceneRecord {
            image_id: s.default_image_id(),
            robot_to_camera: PoseJson::from_pose(&s.pose),
            robot_to_world: PoseJson::from_pose(&s.world_pose),
            euler: euler_json(&s.world_pose.rotation).0,
        })
        .collect();
    write_jsonl(&out.join(SCENES_FILE), &poses)?;
    write_json(&out.join(CAMERA_FILE), &CameraConfig::from_intrinsics(&params.cam))?;

    let reference = params.reference_pose();
    let mut kps = [Keypoint {
        x: 0.0,
        y: 0.0,
        visible: true,
    }; 4];
    for (k, p) in kps.iter_mut().zip(params.model.keypoints()) {
        let q = params.cam.project(&reference, &p)?;
        (k.x, k.y) = (q.x, q.y);
    }
    let ref_ann = Annotation {
        image_id: "reference".into(),
        width: params.image_size.1,
        height: params.image_size.0,
        keypoints: kps,
    };
    write_jsonl(&out.join(REFERENCE_FILE), &[AnnotationRecord::from_annotation(&ref_ann)])?;

    if opts.write_maps {
        let maps = anns
            .par_iter()
            .map(|a| Ok((a.image_id.clone(), (a.height, a.width), encode_annotation(a, opts.input_size, &opts.encode)?)))
            .collect::<Result<Vec<_>>>()?;
        write_maps(&out.join(MAP_DIR), &maps)?;
    }
    info!("wrote {} scenes to {}", opts.n, out.display());
    Ok(opts.n)
}

/// Encode every annotation of a JSON-lines file; returns the map index path.
pub fn cmd_encode(annotations: &Path, out: &Path, input_size: (usize, usize), params: &EncodeParams) -> Result<PathBuf> {
    let recs: Vec<AnnotationRecord> = read_jsonl(annotations)?;
    let maps = recs
        .par_iter()
        .map(|r| {
            check_image_id(&r.image_id)?;
            let a = r.to_annotation()?;
            Ok((a.image_id.clone(), (a.height, a.width), encode_annotation(&a, input_size, params)?))
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.context(annotations.display()))?;
    write_maps(out, &maps)
}

/// Run the network on each image; returns the map index path.
pub fn cmd_infer(manifest: &Path, images: &[PathBuf], out: &Path) -> Result<PathBuf> {
    let (cfg, store) = weights::load_parameters(manifest)?;
    let (ih, iw) = cfg.input_size;
    let maps = images
        .par_iter()
        .map(|p| {
            let id = p
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::invalid(format!("{}: no usable file stem", p.display())))?
                .to_string();
            check_image_id(&id)?;
            let img = io::image_load(p)?;
            let input = img.resize_bilinear(ih, iw)?.to_tensor();
            let y = forward(&input, &store, &cfg).map_err(|e| Error::from(e).context(p.display()))?;
            let m = GroundTruthMaps {
                heatmap: y.heatmap,
                paf: y.paf,
                stride: cfg.output_stride as f64,
            };
            Ok((id, (img.height(), img.width()), m))
        })
        .collect::<Result<Vec<_>>>()?;
    write_maps(out, &maps)
}

/// Decode every entry of a map index into detections in raw-image pixels.
pub fn cmd_decode(index: &Path, params: &DecodeParams, single_ugv: bool) -> Result<Vec<DetectionRecord>> {
    params.validate()?;
    let entries: Vec<MapIndexRecord> = read_jsonl(index)?;
    let base = index.parent().unwrap_or(Path::new("."));
    let per_image = entries
        .par_iter()
        .map(|e| {
            let heat = io::tensor_read(&base.join(&e.heat))?;
            let paf = io::tensor_read(&base.join(&e.paf))?;
            let mut dets = decode_maps(&heat, &paf, params).map_err(|x| Error::from(x).context(&e.image_id))?;
            let (_, mh, mw) = heat.chw()?;
            let s = params.stride;
            let input = ((mh as f64 * s).round() as usize, (mw as f64 * s).round() as usize);
            if single_ugv {
                dets = best_detection(&dets).cloned().into_iter().collect();
            }
            let dets = to_raw_coordinates(dets, input, (e.h, e.w));
            Ok(dets.iter().map(|d| DetectionRecord::from_detection(&e.image_id, d)).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_image.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PoseSummary {
    pub solved: usize,
    pub skipped_incomplete: usize,
    pub failures: usize,
}

/// Solve each complete detection and chain it into the world frame. Without a
/// `cam_to_world` block poses stay in the camera frame.
pub fn cmd_pose(
    detections: &[DetectionRecord],
    camera: &CameraConfig,
    model: &RobotModel,
) -> Result<(Vec<PoseRecord>, PoseSummary)> {
    let cam = camera.intrinsics()?;
    let (to_world, frame) = match &camera.cam_to_world {
        Some(p) => (p.to_pose()?, PoseFrame::World),
        None => {
            warn!("camera config has no cam_to_world block; poses are in the camera frame");
            (RigidPose::identity(), PoseFrame::Camera)
        }
    };
    let pts = model.keypoints();
    let results: Vec<Option<Option<PoseRecord>>> = detections
        .par_iter()
        .map(|d| {
            let q = d.to_detection().quad()?;
            let sol = match solve_p4p_lm(&pts, &quad_pixels(&q), &cam, None, &LmSettings::default()) {
                Ok(s) => s,
                Err(e) => {
                    warn!("{}: pose solve failed: {e}", d.image_id);
                    return Some(None);
                }
            };
            let w = pose_to_world(&sol.pose, &to_world);
            let pj = PoseJson::from_pose(&w.pose);
            Some(Some(PoseRecord {
                image_id: d.image_id.clone(),
                frame,
                t: pj.t,
                r: pj.r,
                euler: euler_json(&w.pose.rotation).0,
                gimbal_lock: w.gimbal_lock,
                reproj_err: sol.mean_reprojection_error,
            }))
        })
        .collect();
    let mut summary = PoseSummary::default();
    let mut out = Vec::new();
    for r in results {
        match r {
            None => summary.skipped_incomplete += 1,
            Some(None) => summary.failures += 1,
            Some(Some(p)) => {
                summary.solved += 1;
                out.push(p);
            }
        }
    }
    if summary.skipped_incomplete > 0 {
        warn!("skipped {} incomplete detections", summary.skipped_incomplete);
    }
    Ok((out, summary))
}

/// Fit the reference-placement annotation and store the camera-to-world pose in
/// the camera config. A previous config with a `cam_to_world` block is copied to
/// `<config>.bak` first.
pub fn cmd_calibrate(reference: &AnnotationRecord, config_path: &Path, model: &RobotModel) -> Result<RigidPose> {
    let mut config = CameraConfig::load(config_path)?;
    let cam = config.intrinsics()?;
    let q = reference
        .quad()
        .ok_or_else(|| Error::invalid("reference annotation needs four visible keypoints"))?;
    let sol = solve_p4p_lm(&model.keypoints(), &quad_pixels(&q), &cam, None, &LmSettings::default())
        .map_err(|e| Error::invalid(format!("calibration failed: {e}")))?;
    let cam_to_world = camera_extrinsics_from_reference(&sol.pose);
    if config.cam_to_world.is_some() {
        let mut bak = config_path.as_os_str().to_owned();
        bak.push(".bak");
        write_json(Path::new(&bak), &config)?;
    }
    config.cam_to_world = Some(PoseJson::from_pose(&cam_to_world));
    write_json(config_path, &config)?;
    Ok(cam_to_world)
}

/// Match detections to annotations per image. Annotation order fixes frame order.
pub fn cmd_eval(
    detections: &[DetectionRecord],
    annotations: &[AnnotationRecord],
    iou_threshold: f64,
    pose: Option<(&RobotModel, &CameraIntrinsics)>,
    single_ugv: bool,
) -> Result<EvalReport> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::invalid("IoU threshold must be in (0, 1]"));
    }
    let mut order: Vec<&str> = Vec::new();
    let mut frames: BTreeMap<&str, ((usize, usize), Vec<Quad>, Vec<Detection>)> = BTreeMap::new();
    for a in annotations {
        let q = a
            .quad()
            .ok_or_else(|| Error::invalid(format!("{}: ground truth needs four visible keypoints", a.image_id)))?;
        let e = frames.entry(&a.image_id).or_insert_with(|| {
            order.push(&a.image_id);
            ((a.h, a.w), Vec::new(), Vec::new())
        });
        if e.0 != (a.h, a.w) {
            return Err(Error::invalid(format!("{}: inconsistent image size", a.image_id)));
        }
        e.1.push(q);
    }
    for d in detections {
        let e = frames
            .get_mut(d.image_id.as_str())
            .ok_or_else(|| Error::invalid(format!("detection for unannotated image `{}`", d.image_id)))?;
        e.2.push(d.to_detection());
    }
    if single_ugv {
        for e in frames.values_mut() {
            e.2 = best_detection(&e.2).cloned().into_iter().collect();
        }
    }
    let list: Vec<Frame<'_>> = order
        .iter()
        .map(|id| {
            let (res, gts, dets) = &frames[id];
            Frame {
                detections: dets,
                ground_truth: gts,
                res: *res,
            }
        })
        .collect();
    Ok(evaluate(&list, iou_threshold, pose))
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.digits$}"))
}

pub fn format_report(r: &EvalReport, iou_threshold: f64) -> String {
    let mut s = String::new();
    let mut row = |k: &str, v: String| writeln!(s, "{k:<22}{v:>12}").expect("string write");
    row("iou threshold", format!("{iou_threshold:.2}"));
    row("true positives", r.tp.to_string());
    row("false positives", r.fp.to_string());
    row("false negatives", r.fn_.to_string());
    row("precision", opt(r.precision, 4));
    row("recall", opt(r.recall, 4));
    row("mean iou", opt(r.mean_iou, 4));
    for k in 0..4 {
        row(&format!("dist kp{} (px)", k + 1), opt(r.per_channel_dist.map(|d| d[k]), 3));
    }
    row("dist mean (px)", opt(r.mean_dist, 3));
    row("pose reproj (px)", opt(r.pose_reproj_err, 3));
    row("pose failures", r.pose_failures.to_string());
    s
}

pub fn cmd_stats(variant: Variant) -> Result<(NetworkConfig, ModelStats)> {
    let cfg = NetworkConfig::for_variant(variant);
    let stats = model_stats(&cfg)?;
    Ok((cfg, stats))
}

pub fn format_stats(cfg: &NetworkConfig, s: &ModelStats) -> String {
    format!(
        "variant      {}\ninput        {}x{}\nconv layers  {}\nparams       {} ({:.3} M)\nflops        {} ({:.3} G)\n",
        cfg.variant.as_str(),
        cfg.input_size.0,
        cfg.input_size.1,
        s.conv_layers,
        s.params,
        s.params as f64 / 1e6,
        s.flops,
        s.flops as f64 / 1e9
    )
}

/// Write He-uniform weights and a manifest under `out`; returns the manifest path.
pub fn cmd_init_weights(variant: Variant, seed: u64, out: &Path) -> Result<PathBuf> {
    let cfg = NetworkConfig::for_variant(variant);
    let store = init_parameters(&cfg, seed)?;
    weights::save_parameters(out, &cfg, &store)
}

/// Draw detections for one image (selected by `image_id`, default the file
/// stem) and write a PNG; returns the number of detections drawn.
pub fn cmd_overlay(
    image: &Path,
    detections: &[DetectionRecord],
    image_id: Option<&str>,
    pose: Option<(&CameraIntrinsics, &RobotModel)>,
    out: &Path,
) -> Result<usize> {
    let id = match image_id {
        Some(id) => id.to_string(),
        None => image
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::invalid(format!("{}: no usable file stem", image.display())))?
            .to_string(),
    };
    let decoded = image::ImageReader::open(image)
        .map_err(|e| Error::io(image, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(image, e))?
        .decode()
        .map_err(|e| Error::invalid(format!("{}: {e}", image.display())))?;
    let mut rgb = decoded.to_rgb8();
    let mine: Vec<&DetectionRecord> = detections.iter().filter(|d| d.image_id == id).collect();
    crate::overlay::draw_detections(&mut rgb, &mine, pose);
    let mut bytes = std::io::Cursor::new(Vec::new());
    rgb.write_to(&mut bytes, image::ImageFormat::Png)
        .map_err(|e| Error::invalid(format!("PNG encoding failed: {e}")))?;
    io::write_file(out, &bytes.into_inner())?;
    Ok(mine.len())
}
