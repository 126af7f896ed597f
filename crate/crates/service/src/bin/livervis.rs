use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use livervis_core::crf::{mean_field_refine, CrfParams};
use livervis_core::kmeans::{kmeans_segment, KMeansParams};
use livervis_core::metrics::{score_masks, score_slices, SegmentationScore};
use livervis_core::render::{default_camera, encode_ppm, render_frame, Quat, SceneState, Vec3};
use livervis_core::roi::{
    agreement_filter, classify_box, crop_roi, fit_slice_gaussian, place_detector_boxes, select_slice_range, BoxRecord, DetectorBox,
    LesionCountClassifier, DEFAULT_CROP_MARGIN, DEFAULT_K_SIGMA,
};
use livervis_core::volume::{clip_and_normalize, parse_nifti, read_raw_sidecar, write_raw_sidecar, WindowLevel};
use livervis_core::{LabelMask, ProbabilityVolume, Volume3D};
use livervis_service::catalog::Catalog;
use livervis_service::config::ServerConfig;
use livervis_service::orchestrator::job::{liver_cluster, normalized};
use livervis_service::orchestrator::{Orchestrator, WatchConfig};
use livervis_service::service::Service;
use livervis_service::session::CatalogVolumes;
use serde_json::json;

#[derive(Parser)]
#[command(name = "livervis", version, about = "CT liver segmentation, refinement and remote volume rendering")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// NIfTI to raw voxels plus a JSON sidecar.
    Convert {
        input: PathBuf,
        output: PathBuf,
        /// Clip to [LO, HI] and scale to [0, 1].
        #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
        normalize: Option<Vec<f64>>,
    },
    /// Precision, recall and Dice of a predicted mask against the truth.
    Score {
        pred: PathBuf,
        truth: PathBuf,
        #[arg(long)]
        per_slice: bool,
    },
    /// Intensity clustering.
    Segment {
        #[arg(long, default_value = "kmeans")]
        method: String,
        #[arg(long, default_value_t = 4)]
        k: usize,
        /// Write only the liver cluster as a binary mask.
        #[arg(long)]
        binary: bool,
        /// HU range scaled to [0, 1] before clustering CT input.
        #[arg(long, default_value = "-150,250", allow_hyphen_values = true)]
        clip: String,
        input: PathBuf,
        output: PathBuf,
    },
    /// Dense CRF refinement of a probability volume.
    Refine {
        #[arg(long)]
        params: Option<PathBuf>,
        prob: PathBuf,
        intensity: PathBuf,
        out_mask: PathBuf,
    },
    /// Region-of-interest tools: slice fit, cropping, detector boxes.
    #[command(subcommand)]
    Roi(RoiCommand),
    /// Renders one frame to a binary PPM.
    Render(RenderArgs),
    /// Signaling and render streaming.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        catalog: PathBuf,
    },
    /// Watch a folder and process new scans.
    Watch {
        #[arg(long)]
        config: PathBuf,
        /// Stop after this many polls.
        #[arg(long)]
        max_polls: Option<u64>,
    },
}

#[derive(Subcommand)]
enum RoiCommand {
    /// Gaussian fit of the per-slice mask counts and the selected slice range.
    Fit {
        mask: PathBuf,
        #[arg(long, default_value_t = DEFAULT_K_SIGMA)]
        k_sigma: f64,
    },
    /// Crops a volume to the bounding box of a mask.
    Crop {
        volume: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        output: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CROP_MARGIN)]
        margin: usize,
    },
    /// Detector windows over a liver mask, optionally classified against a lesion mask.
    Boxes {
        liver: PathBuf,
        #[arg(long)]
        lesion: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Keeps lesion voxels inside positive boxes.
    Filter {
        lesion: PathBuf,
        #[arg(long)]
        boxes: PathBuf,
        output: PathBuf,
    },
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    nii: PathBuf,
    /// px,py,pz,qx,qy,qz,qw
    #[arg(long, allow_hyphen_values = true)]
    cam: Option<String>,
    /// WxH
    #[arg(long, default_value = "256x256")]
    size: String,
    /// L,W
    #[arg(long, allow_hyphen_values = true)]
    window: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

fn sidecar_of(raw: &Path) -> PathBuf {
    raw.with_extension("json")
}

fn read_volume(path: &Path) -> Result<Volume3D> {
    if path.extension().is_some_and(|e| e == "nii") {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        return parse_nifti(&bytes).with_context(|| format!("parsing {}", path.display()));
    }
    read_raw_sidecar(path, sidecar_of(path)).with_context(|| format!("reading {} and its sidecar", path.display()))
}

fn write_volume(vol: &Volume3D, path: &Path) -> Result<()> {
    write_raw_sidecar(vol, path, sidecar_of(path)).with_context(|| format!("writing {}", path.display()))
}

fn read_mask(path: &Path) -> Result<LabelMask> {
    Ok(LabelMask::from_volume(&read_volume(path)?))
}

fn parse_floats(s: &str, n: usize, what: &str) -> Result<Vec<f64>> {
    let v: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().with_context(|| format!("{what}: {s:?}"))?;
    if v.len() != n {
        bail!("{what} needs {n} comma-separated numbers, got {}", v.len());
    }
    Ok(v)
}

fn score_json(s: &SegmentationScore) -> serde_json::Value {
    json!({ "precision": s.precision, "recall": s.recall, "dice": s.dice(), "tp": s.tp, "fp": s.fp, "fn": s.fn_ })
}

fn print_json(v: &serde_json::Value) {
    use std::io::Write;
    // a closed pipe (`| head`) is not an error worth reporting
    let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(v).expect("values serialize"));
}

fn crf_params(path: Option<&Path>) -> Result<CrfParams> {
    let mut merged = serde_json::to_value(CrfParams::default())?;
    if let Some(path) = path {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let given: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let Some(obj) = given.as_object() else { bail!("{} must hold a JSON object", path.display()) };
        for (k, v) in obj {
            if merged.get(k).is_none() {
                bail!("unknown CRF parameter {k:?}");
            }
            merged[k] = v.clone();
        }
    }
    let params: CrfParams = serde_json::from_value(merged)?;
    params.validate()?;
    Ok(params)
}

fn roi(cmd: RoiCommand) -> Result<()> {
    match cmd {
        RoiCommand::Fit { mask, k_sigma } => {
            let mask = read_mask(&mask)?;
            let fit = fit_slice_gaussian(&mask)?;
            let (lo, hi) = select_slice_range(&fit, k_sigma, mask.dims().nz);
            print_json(&json!({ "mean": fit.mean, "variance": fit.variance, "total_positive": fit.total_positive, "slices": [lo, hi] }));
        }
        RoiCommand::Crop { volume, mask, output, margin } => {
            let vol = read_volume(&volume)?;
            let mask = read_mask(&mask)?;
            if mask.dims() != vol.dims() {
                bail!("mask dims {:?} differ from volume dims {:?}", mask.dims(), vol.dims());
            }
            let (data, b) = crop_roi(vol.voxels(), &mask, margin)?;
            let out = Volume3D::with_scalar(b.dims(), vol.spacing(), data, vol.intensity_kind(), vol.scalar_type())?;
            write_volume(&out, &output)?;
            print_json(&serde_json::to_value(b)?);
        }
        RoiCommand::Boxes { liver, lesion, out } => {
            let liver = read_mask(&liver)?;
            let lesion = lesion.map(|p| read_mask(&p)).transpose()?;
            if let Some(l) = &lesion {
                if l.dims() != liver.dims() {
                    bail!("lesion dims {:?} differ from liver dims {:?}", l.dims(), liver.dims());
                }
            }
            let classifier = LesionCountClassifier::default();
            let mut records: Vec<BoxRecord> = Vec::new();
            for z in 0..liver.dims().nz {
                let mut boxes = place_detector_boxes(&liver.slice(z), z)?;
                if let Some(l) = &lesion {
                    let s = l.slice(z);
                    for b in &mut boxes {
                        classify_box(b, &s, &classifier);
                    }
                }
                records.extend(boxes.iter().map(DetectorBox::record));
            }
            let text = serde_json::to_string_pretty(&records)?;
            match out {
                Some(p) => std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
                None => println!("{text}"),
            }
        }
        RoiCommand::Filter { lesion, boxes, output } => {
            let lesion_mask = read_mask(&lesion)?;
            let dims = lesion_mask.dims();
            let text = std::fs::read_to_string(&boxes).with_context(|| format!("reading {}", boxes.display()))?;
            let records: Vec<BoxRecord> = serde_json::from_str(&text)?;
            let placed: Vec<DetectorBox> = records
                .iter()
                .map(|r| DetectorBox { verdict: r.verdict, ..DetectorBox::at(r.slice, r.x, r.y, dims.nx, dims.ny) })
                .collect();
            let kept = agreement_filter(&lesion_mask, &placed);
            write_volume(&kept.to_volume(read_volume(&lesion)?.spacing())?, &output)?;
            print_json(&json!({ "input_voxels": lesion_mask.count_nonzero(), "kept_voxels": kept.count_nonzero() }));
        }
    }
    Ok(())
}

fn render(a: RenderArgs) -> Result<()> {
    let vol = read_volume(&a.nii)?;
    let (w, h) = a.size.split_once(['x', 'X']).context("--size must be WxH")?;
    let (w, h): (usize, usize) = (w.parse().context("--size width")?, h.parse().context("--size height")?);
    let window = match &a.window {
        Some(s) => {
            let v = parse_floats(s, 2, "--window")?;
            WindowLevel::new(v[0], v[1])?
        }
        None => livervis_service::session::initial_window(vol.intensity_kind()),
    };
    let scene = SceneState::new(Arc::new(vol), window);
    let e = scene.extent_mm();
    let mut cam = default_camera(e.x.max(e.y).max(e.z));
    if let Some(s) = &a.cam {
        let v = parse_floats(s, 7, "--cam")?;
        cam.position = Vec3::new(v[0], v[1], v[2]);
        cam.rotation = Quat { x: v[3], y: v[4], z: v[5], w: v[6] }.normalized().context("--cam quaternion is zero")?;
    }
    let frame = render_frame(&scene, &cam, w, h)?;
    std::fs::write(&a.out, encode_ppm(&frame)).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Command::Convert { input, output, normalize } => {
            let mut vol = read_volume(&input)?;
            if let Some(r) = normalize {
                vol = clip_and_normalize(&vol, r[0], r[1])?;
            }
            write_volume(&vol, &output)?;
        }
        Command::Score { pred, truth, per_slice } => {
            let (p, t) = (read_mask(&pred)?, read_mask(&truth)?);
            let mut report = score_json(&score_masks(&p, &t)?);
            if per_slice {
                let slices: Vec<_> = score_slices(&p, &t)?
                    .iter()
                    .enumerate()
                    .map(|(z, s)| {
                        let mut v = score_json(s);
                        v["slice"] = json!(z);
                        v
                    })
                    .collect();
                report["slices"] = json!(slices);
            }
            print_json(&report);
        }
        Command::Segment { method, k, binary, clip, input, output } => {
            if method != "kmeans" {
                bail!("unknown method {method:?}; only kmeans is available");
            }
            let clip = parse_floats(&clip, 2, "--clip")?;
            let vol = read_volume(&input)?;
            let norm = normalized(&vol, [clip[0], clip[1]])?;
            let result = kmeans_segment(&norm, KMeansParams::new(k))?;
            let liver = liver_cluster(&result);
            let labels = if binary {
                LabelMask::from_fn(vol.dims(), |x, y, z| u8::from(usize::from(result.labels.get(x, y, z)) == liver))
            } else {
                result.labels.clone()
            };
            write_volume(&labels.to_volume(vol.spacing())?, &output)?;
            print_json(&json!({
                "centroids": result.centroids,
                "sizes": result.cluster_sizes(),
                "iterations": result.iterations,
                "converged": result.converged,
                "liver_cluster": liver,
            }));
        }
        Command::Refine { params, prob, intensity, out_mask } => {
            let params = crf_params(params.as_deref())?;
            let prob = ProbabilityVolume::from_volume(&read_volume(&prob)?)?;
            let vol = read_volume(&intensity)?;
            let out = mean_field_refine(&prob, &vol, &params)?;
            write_volume(&out.labels.to_volume(vol.spacing())?, &out_mask)?;
            print_json(&json!({ "foreground_voxels": out.labels.count_nonzero(), "normalization_error": out.normalization_error }));
        }
        Command::Roi(cmd) => roi(cmd)?,
        Command::Render(a) => render(a)?,
        Command::Serve { config, catalog } => {
            let cfg = match config {
                Some(p) => ServerConfig::load(&p).with_context(|| format!("loading {}", p.display()))?,
                None => ServerConfig::default(),
            };
            let volumes = Arc::new(CatalogVolumes::new(Catalog::new(catalog)));
            runtime()?.block_on(async move {
                let service = Service::start(&cfg, volumes).await?;
                println!("signaling {} stream {}", service.signaling.local_addr, service.stream.local_addr);
                tokio::signal::ctrl_c().await?;
                service.stop().await;
                anyhow::Ok(())
            })?;
        }
        Command::Watch { config, max_polls } => {
            let cfg = WatchConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let mut orch = Orchestrator::from_config(cfg)?;
            match max_polls {
                Some(n) => {
                    let interval = std::time::Duration::from_secs_f64(orch.config().poll_interval_s);
                    for i in 0..n {
                        orch.tick()?;
                        if i + 1 < n {
                            std::thread::sleep(interval);
                        }
                    }
                }
                None => {
                    let stop = Arc::new(AtomicBool::new(false));
                    let flag = stop.clone();
                    let rt = runtime()?;
                    rt.spawn(async move {
                        if tokio::signal::ctrl_c().await.is_ok() {
                            flag.store(true, Ordering::Relaxed);
                        }
                    });
                    orch.run(&stop);
                }
            }
            orch.close();
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
