use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ugvkit::commands::{self, SynthOptions};
use ugvkit::formats::{read_jsonl, AnnotationRecord, CameraConfig, DetectionRecord};
use ugvkit::{Error, Result};
use ugvkit_core::decoding::DecodeParams;
use ugvkit_core::encoding::EncodeParams;
use ugvkit_core::geometry::RobotModel;
use ugvkit_core::network::{NetworkConfig, Variant};

/// UGV keypoint detection and pose estimation toolkit.
#[derive(Parser, Debug)]
#[command(name = "ugvkit", version)]
struct Cli {
    #[command(flatten)]
    run: RunConfig,
    #[command(subcommand)]
    cmd: Command,
}

/// Options shared by all subcommands.
#[derive(Args, Debug)]
struct RunConfig {
    /// Camera config JSON (intrinsics, optional cam_to_world).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Weight manifest.
    #[arg(long, global = true)]
    weights: Option<PathBuf>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value = "full", value_parser = parse_variant)]
    variant: Variant,
    /// Output stride of the maps.
    #[arg(long, global = true, default_value_t = 4)]
    stride: u32,
    /// Heatmap disk radius in map pixels.
    #[arg(long, global = true, default_value_t = 3.0)]
    radius: f64,
    #[arg(long, global = true, default_value_t = 0.5)]
    peak_thresh: f64,
    /// Minimum PAF line-integral score for a connection.
    #[arg(long, global = true, default_value_t = 0.05)]
    paf_thresh: f64,
    #[arg(long, global = true, default_value_t = 0.8)]
    iou_thresh: f64,
    /// Per-axis Gaussian keypoint noise, pixels.
    #[arg(long, global = true, default_value_t = 0.0)]
    noise_sigma: f64,
    /// Keep only the best-scoring detection per image.
    #[arg(long, global = true)]
    single_ugv: bool,
    /// Robot box size LxWxH in meters.
    #[arg(long, global = true, default_value = "0.72x0.48x0.23", value_parser = parse_robot)]
    robot: RobotModel,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic scenes with exact ground truth.
    Synth {
        #[arg(long, default_value_t = 100)]
        n: usize,
        /// Raw image size WxH.
        #[arg(long, default_value = "1920x1080", value_parser = parse_size)]
        image_size: (usize, usize),
        /// Skip writing encoded maps.
        #[arg(long)]
        no_maps: bool,
    },
    /// Encode annotations into heatmap and PAF tensors.
    Encode { annotations: PathBuf },
    /// Run the network on images.
    Infer {
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Decode a map index into detections.
    Decode { index: PathBuf },
    /// Solve 6-DoF poses for detections.
    Pose { detections: PathBuf },
    /// Store the camera-to-world pose from a reference-placement annotation.
    Calibrate { reference: PathBuf },
    /// Score detections against annotations.
    Eval { detections: PathBuf, annotations: PathBuf },
    /// Print parameter and FLOP counts.
    Stats,
    /// Write randomly initialized weights and a manifest.
    InitWeights,
    /// Draw detections and pose axes onto an image.
    Overlay {
        image: PathBuf,
        detections: PathBuf,
        /// Detections to draw; defaults to the image file stem.
        #[arg(long)]
        image_id: Option<String>,
    },
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: ugvkit_core::network::NetworkError| e.to_string())
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s.split_once('x').ok_or("expected WxH")?;
    let w: usize = w.parse().map_err(|_| "bad width")?;
    let h: usize = h.parse().map_err(|_| "bad height")?;
    if w == 0 || h == 0 {
        return Err("size must be positive".into());
    }
    Ok((h, w))
}

fn parse_robot(s: &str) -> std::result::Result<RobotModel, String> {
    let v: Vec<f64> = s.split('x').map(str::parse).collect::<std::result::Result<_, _>>().map_err(|_| "expected LxWxH")?;
    match v[..] {
        [l, w, h] => RobotModel::new(l, w, h).map_err(|e| e.to_string()),
        _ => Err("expected LxWxH".into()),
    }
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::invalid(format!("--{flag} is required for this command")))
}

impl RunConfig {
    fn encode_params(&self) -> EncodeParams {
        EncodeParams {
            stride: self.stride as f64,
            radius: self.radius,
            ..EncodeParams::default()
        }
    }

    fn decode_params(&self) -> DecodeParams {
        DecodeParams {
            peak_threshold: self.peak_thresh,
            min_paf_score: self.paf_thresh,
            stride: self.stride as f64,
            ..DecodeParams::default()
        }
    }

    fn camera(&self) -> Result<Option<CameraConfig>> {
        self.config.as_deref().map(CameraConfig::load).transpose()
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => ugvkit::io::write_file(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let rc = &cli.run;
    let input_size = NetworkConfig::for_variant(rc.variant).input_size;
    match cli.cmd {
        Command::Synth { n, image_size, no_maps } => {
            let opts = SynthOptions {
                n,
                seed: rc.seed,
                noise_sigma: rc.noise_sigma,
                camera: rc.camera()?.map(|c| c.intrinsics()).transpose()?,
                image_size,
                input_size,
                encode: rc.encode_params(),
                write_maps: !no_maps,
            };
            commands::cmd_synth(&opts, required(&rc.out, "out")?)?;
        }
        Command::Encode { annotations } => {
            let index = commands::cmd_encode(&annotations, required(&rc.out, "out")?, input_size, &rc.encode_params())?;
            println!("{}", index.display());
        }
        Command::Infer { images } => {
            let index = commands::cmd_infer(required(&rc.weights, "weights")?, &images, required(&rc.out, "out")?)?;
            println!("{}", index.display());
        }
        Command::Decode { index } => {
            let dets = commands::cmd_decode(&index, &rc.decode_params(), rc.single_ugv)?;
            emit(rc.out.as_deref(), &ugvkit::formats::to_jsonl(&dets))?;
        }
        Command::Pose { detections } => {
            let dets: Vec<DetectionRecord> = read_jsonl(&detections)?;
            let camera = rc.camera()?.ok_or_else(|| Error::invalid("--config is required for this command"))?;
            let (poses, summary) = commands::cmd_pose(&dets, &camera, &rc.robot)?;
            emit(rc.out.as_deref(), &ugvkit::formats::to_jsonl(&poses))?;
            eprintln!(
                "solved {}, skipped incomplete {}, failed {}",
                summary.solved, summary.skipped_incomplete, summary.failures
            );
        }
        Command::Calibrate { reference } => {
            let recs: Vec<AnnotationRecord> = read_jsonl(&reference)?;
            let first = recs
                .first()
                .ok_or_else(|| Error::invalid(format!("{}: no annotation", reference.display())))?;
            let pose = commands::cmd_calibrate(first, required(&rc.config, "config")?, &rc.robot)?;
            let t = pose.translation;
            println!("camera position in world: ({:.6}, {:.6}, {:.6})", t.x, t.y, t.z);
        }
        Command::Eval { detections, annotations } => {
            let dets: Vec<DetectionRecord> = read_jsonl(&detections)?;
            let anns: Vec<AnnotationRecord> = read_jsonl(&annotations)?;
            let camera = rc.camera()?.map(|c| c.intrinsics()).transpose()?;
            let pose = camera.as_ref().map(|c| (&rc.robot, c));
            let report = commands::cmd_eval(&dets, &anns, rc.iou_thresh, pose, rc.single_ugv)?;
            emit(rc.out.as_deref(), &commands::format_report(&report, rc.iou_thresh))?;
        }
        Command::Stats => {
            let (cfg, stats) = commands::cmd_stats(rc.variant)?;
            emit(rc.out.as_deref(), &commands::format_stats(&cfg, &stats))?;
        }
        Command::InitWeights => {
            let manifest = commands::cmd_init_weights(rc.variant, rc.seed, required(&rc.out, "out")?)?;
            println!("{}", manifest.display());
        }
        Command::Overlay {
            image,
            detections,
            image_id,
        } => {
            let dets: Vec<DetectionRecord> = read_jsonl(&detections)?;
            let camera = rc.camera()?.map(|c| c.intrinsics()).transpose()?;
            let pose = camera.as_ref().map(|c| (c, &rc.robot));
            commands::cmd_overlay(&image, &dets, image_id.as_deref(), pose, required(&rc.out, "out")?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = std::env::var("UGVKIT_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("UGVKIT_THREADS ignored: {e}");
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
