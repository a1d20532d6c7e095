//! Command-line pipeline driver.
//!
//! Subcommands mirror the pipeline stages and communicate through files:
//!
//! ```text
//! synth      -> scene_NNNN_lidar.bin + scene_NNNN_radar.bin
//! preprocess -> same names, cropped/filtered
//! project    -> scene_NNNN_lidar.ri + scene_NNNN_radar.ri
//! detect     -> detections.bin + detections.ply from a .pm power map
//! train      -> model.ck + loss_curve.csv
//! sample     -> scene_NNNN_pred.ri + scene_NNNN_pred.ply
//! eval       -> report.csv + report.txt (+ scene_NNNN_cdf.txt with --cdf)
//! export     -> one .ply per .ri
//! ```
//!
//! Every run echoes its effective config (with the effective seed) into the
//! output directory as `config.toml`, so a run is reproducible from the
//! output directory alone. Exit codes: 0 success, 2 configuration/usage
//! error, 1 runtime failure.

use crate::diffusion::heun_sample;
use crate::geom::PointCloud;
use crate::io::{checkpoint, lidar_bin, ply, range_bin, PipelineConfig};
use crate::model::{measure_data_std, train as train_model, ToyDenoiser, TrainSample};
use crate::preprocess::{radar_guided_filter, remove_ground_and_ceiling, shared_fov_crop};
use crate::projection::{
    backproject, denormalize, interpret_sample, normalize, normalize_stack, project,
    slice_multichannel, SAMPLE_INVALID_BELOW,
};
use crate::rng::SeededRng;
use crate::synth::{generate_scene, BoxWorldParams};
use crate::{Error, Result};
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "mmwave-sr",
    version,
    about = "Radar point-cloud super-resolution pipeline: synthesis, preprocessing, \
             diffusion training/sampling, CFAR detection, and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic box-world dataset of paired LiDAR/radar clouds.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the number of scenes.
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Crop to the shared FOV, remove ground/ceiling, radar-filter LiDAR.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Project cloud pairs to range-image files.
    Project {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the radar channel count.
        #[arg(long)]
        channels: Option<usize>,
    },
    /// Run OS-CFAR on a power map and emit the detected cloud.
    Detect {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the conditional denoiser on preprocessed cloud pairs.
    Train {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the training step count.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Sample predicted range images conditioned on radar clouds.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Zero the condition (ablation baseline).
        #[arg(long)]
        zero_condition: bool,
    },
    /// Evaluate predicted clouds against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write per-scene CDF tables.
        #[arg(long)]
        cdf: bool,
    },
    /// Convert range-image files to PLY point clouds.
    Export {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `std::env::args` and runs. Returns the process exit code.
pub fn run_from_env() -> i32 {
    run_args(std::env::args())
}

/// Runs the CLI on explicit arguments (the first is the program name).
/// Returns the process exit code: 0 success, 2 usage/config error, 1 runtime
/// failure.
pub fn run_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap reports its own usage errors; keep its exit code (2 for
            // usage, 0 for --help/--version).
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                2
            } else {
                1
            }
        }
    }
}

// Per-stage child-stream offsets: later stages never replay the scene
// generator's streams for the same seed (the training loop itself draws from
// the base stream).
const STREAM_PREPROCESS: u64 = 2 << 20;
const STREAM_MODEL_INIT: u64 = 3 << 20;
const STREAM_SAMPLE: u64 = 4 << 20;

fn load_config(path: &Option<PathBuf>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::io(format!("creating directory {}", dir.display()), e))
}

fn echo_config(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    cfg.save(&out.join("config.toml"))
}

fn scene_name(index: usize, suffix: &str) -> String {
    format!("scene_{index:04}_{suffix}")
}

/// Sorted scene indices found in `dir` for files named
/// `scene_NNNN_<suffix>`.
fn scene_indices(dir: &Path, suffix: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    let entries = std::fs::read_dir(dir)
        .map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(rest) = name.strip_prefix("scene_") {
            if let Some(idx) = rest.strip_suffix(&format!("_{suffix}")) {
                if let Ok(k) = idx.parse::<usize>() {
                    out.push(k);
                }
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth {
            out,
            config,
            seed,
            frames,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = frames {
                cfg.synth.scenes = n;
            }
            cfg.validate()?;
            ensure_dir(&out)?;
            echo_config(&cfg, &out)?;
            let lidar_geom = cfg.lidar_geometry()?;
            let params = BoxWorldParams {
                radar_keep_ratio: cfg.synth.radar_keep_ratio,
                range_jitter: cfg.synth.range_jitter,
                ghost_rate: cfg.synth.ghost_rate,
                boxes_min: cfg.synth.boxes_min,
                boxes_max: cfg.synth.boxes_max,
            };
            // Same per-scene child streams as synth::generate_dataset, so the
            // CLI and the library produce identical scenes for one seed.
            let root = SeededRng::new(cfg.seed);
            for k in 0..cfg.synth.scenes {
                let mut rng = root.child(k as u64);
                let scene = generate_scene(&lidar_geom, &params, &mut rng);
                lidar_bin::write_lidar_bin(&scene.lidar, &out.join(scene_name(k, "lidar.bin")))?;
                lidar_bin::write_lidar_bin(&scene.radar, &out.join(scene_name(k, "radar.bin")))?;
            }
            println!(
                "synth: wrote {} scene pairs to {} (seed {})",
                cfg.synth.scenes,
                out.display(),
                cfg.seed
            );
            Ok(())
        }

        Command::Preprocess { input, out, config } => {
            let cfg = load_config(&config)?;
            ensure_dir(&out)?;
            echo_config(&cfg, &out)?;
            let fov = cfg.shared_fov()?;
            let params = cfg.ground_removal_params();
            let indices = scene_indices(&input, "lidar.bin")?;
            if indices.is_empty() {
                return Err(Error::config(format!(
                    "no scene_NNNN_lidar.bin files in {}",
                    input.display()
                )));
            }
            let root = SeededRng::new(cfg.seed);
            let mut total_kept = 0usize;
            let mut total_in = 0usize;
            for &k in &indices {
                let lidar =
                    lidar_bin::read_lidar_bin(&input.join(scene_name(k, "lidar.bin")), "world")?;
                let radar =
                    lidar_bin::read_lidar_bin(&input.join(scene_name(k, "radar.bin")), "world")?;
                total_in += lidar.len();
                let lidar = shared_fov_crop(&lidar, &fov);
                let radar = shared_fov_crop(&radar, &fov);
                let mut rng = root.child(STREAM_PREPROCESS + k as u64);
                let no_planes = remove_ground_and_ceiling(&lidar, &params, &mut rng)?;
                let filtered = radar_guided_filter(
                    &no_planes.cloud,
                    &radar,
                    cfg.preprocess.dbscan_eps,
                    cfg.preprocess.dbscan_min_pts,
                )?;
                total_kept += filtered.len();
                lidar_bin::write_lidar_bin(&filtered, &out.join(scene_name(k, "lidar.bin")))?;
                lidar_bin::write_lidar_bin(&radar, &out.join(scene_name(k, "radar.bin")))?;
            }
            println!(
                "preprocess: {} scenes, kept {}/{} LiDAR points",
                indices.len(),
                total_kept,
                total_in
            );
            Ok(())
        }

        Command::Project {
            input,
            out,
            config,
            channels,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(c) = channels {
                cfg.radar.channels = c;
            }
            cfg.validate()?;
            ensure_dir(&out)?;
            echo_config(&cfg, &out)?;
            let lidar_geom = cfg.lidar_geometry()?;
            let radar_geom = cfg.radar_geometry()?;
            let indices = scene_indices(&input, "lidar.bin")?;
            if indices.is_empty() {
                return Err(Error::config(format!(
                    "no scene_NNNN_lidar.bin files in {}",
                    input.display()
                )));
            }
            for &k in &indices {
                let lidar =
                    lidar_bin::read_lidar_bin(&input.join(scene_name(k, "lidar.bin")), "world")?;
                let radar =
                    lidar_bin::read_lidar_bin(&input.join(scene_name(k, "radar.bin")), "world")?;
                let (img, _) = project(&lidar, &lidar_geom)?;
                range_bin::write_single_range_image(&img, &out.join(scene_name(k, "lidar.ri")))?;
                let (multi, _) = slice_multichannel(&radar, &radar_geom, cfg.radar.channels)?;
                range_bin::write_range_image(&multi, &out.join(scene_name(k, "radar.ri")))?;
            }
            println!(
                "project: {} scenes -> {} ({} radar channels)",
                indices.len(),
                out.display(),
                cfg.radar.channels
            );
            Ok(())
        }

        Command::Detect { map, out, config } => {
            let cfg = load_config(&config)?;
            ensure_dir(&out)?;
            echo_config(&cfg, &out)?;
            let power = range_bin::read_power_map(&map)?;
            let dets = crate::cfar::os_cfar(&power, &cfg.cfar_params())?;
            let cloud = crate::cfar::detections_to_cloud(&dets, "radar");
            lidar_bin::write_lidar_bin(&cloud, &out.join("detections.bin"))?;
            ply::write_ply(&cloud, &out.join("detections.ply"))?;
            println!(
                "detect: {} detections from {} cells (alpha {})",
                dets.len(),
                power.cells.len(),
                cfg.cfar.alpha
            );
            Ok(())
        }

        Command::Train {
            input,
            out,
            config,
            seed,
            steps,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = steps {
                cfg.train.steps = n;
            }
            cfg.validate()?;
            ensure_dir(&out)?;
            echo_config(&cfg, &out)?;
            let dataset = load_train_dataset(&input, &cfg)?;
            let mut model_cfg = cfg.model_config();
            model_cfg.data_std = measure_data_std(&dataset);
            let mut init_rng = SeededRng::new(cfg.seed).child(STREAM_MODEL_INIT);
            let mut model = ToyDenoiser::new(model_cfg, &mut init_rng)?;
            let report = train_model(&mut model, &dataset, &cfg.train_config())?;
            checkpoint::save_checkpoint(&mut model, &out.join("model.ck"))?;
            let mut curve = String::from("step,loss\n");
            for (step, loss) in &report.loss_curve {
                curve.push_str(&format!("{step},{loss:.9e}\n"));
            }
            std::fs::write(out.join("loss_curve.csv"), curve)
                .map_err(|e| Error::io("writing loss_curve.csv", e))?;
            println!(
                "train: {} scenes, {} steps, final loss {:.4e} -> {}",
                dataset.len(),
                cfg.train.steps,
                report.final_loss,
                out.join("model.ck").display()
            );
            Ok(())
        }

        Command::Sample {
            ckpt,
            input,
            out,
            config,
            seed,
            zero_condition,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            ensure_dir(&out)?;
            echo_config(&cfg, &out)?;
            let model = checkpoint::load_checkpoint(&ckpt)?;
            let radar_geom = cfg.radar_geometry()?;
            let lidar_geom = cfg.lidar_geometry()?;
            let schedule = cfg.noise_schedule()?;
            let indices = scene_indices(&input, "radar.bin")?;
            if indices.is_empty() {
                return Err(Error::config(format!(
                    "no scene_NNNN_radar.bin files in {}",
                    input.display()
                )));
            }
            let root = SeededRng::new(cfg.seed);
            for &k in &indices {
                let radar =
                    lidar_bin::read_lidar_bin(&input.join(scene_name(k, "radar.bin")), "world")?;
                let (multi, _) = slice_multichannel(&radar, &radar_geom, cfg.radar.channels)?;
                let cond = normalize_stack(&multi);
                let cond_opt = (!zero_condition).then_some(&cond);
                let mut rng = root.child(STREAM_SAMPLE + k as u64);
                let raw = heun_sample(
                    &model,
                    &schedule,
                    (lidar_geom.height, lidar_geom.width),
                    cond_opt,
                    &mut rng,
                )?;
                let pred = interpret_sample(lidar_geom, &raw, SAMPLE_INVALID_BELOW)?;
                let img = denormalize(&pred);
                range_bin::write_single_range_image(&img, &out.join(scene_name(k, "pred.ri")))?;
                let cloud = backproject(&img, "world");
                ply::write_ply(&cloud, &out.join(scene_name(k, "pred.ply")))?;
            }
            println!(
                "sample: {} scenes at {} steps{} -> {}",
                indices.len(),
                schedule.n_steps,
                if zero_condition {
                    " (condition zeroed)"
                } else {
                    ""
                },
                out.display()
            );
            Ok(())
        }

        Command::Eval {
            pred,
            truth,
            out,
            config,
            cdf,
        } => {
            let cfg = load_config(&config)?;
            ensure_dir(&out)?;
            echo_config(&cfg, &out)?;
            let tau = cfg.metrics.fscore_tau;
            let indices = scene_indices(&pred, "pred.ply")?;
            if indices.is_empty() {
                return Err(Error::config(format!(
                    "no scene_NNNN_pred.ply files in {}",
                    pred.display()
                )));
            }
            let mut csv = String::from("scene,cd_m,mhd_m,precision_pct,recall_pct,fscore_pct\n");
            let mut table = String::from(
                "scene      CD(m)     MHD(m)    P(%)      R(%)      F(%)\n",
            );
            let mut sums = [0.0f64; 5];
            let mut counted = 0usize;
            for &k in &indices {
                let pred_cloud = ply::read_ply(&pred.join(scene_name(k, "pred.ply")), "world")?;
                let truth_cloud = load_truth_cloud(&truth, k)?;
                if pred_cloud.is_empty() || truth_cloud.is_empty() {
                    table.push_str(&format!("{k:<10} skipped (empty cloud)\n"));
                    continue;
                }
                let rep = crate::metrics::evaluate(&pred_cloud, &truth_cloud, tau)?;
                csv.push_str(&format!(
                    "{k},{:.6},{:.6},{:.3},{:.3},{:.3}\n",
                    rep.cd, rep.mhd, rep.precision, rep.recall, rep.fscore
                ));
                table.push_str(&format!(
                    "{k:<10} {:<9.4} {:<9.4} {:<9.2} {:<9.2} {:<9.2}\n",
                    rep.cd, rep.mhd, rep.precision, rep.recall, rep.fscore
                ));
                sums[0] += rep.cd;
                sums[1] += rep.mhd;
                sums[2] += rep.precision;
                sums[3] += rep.recall;
                sums[4] += rep.fscore;
                counted += 1;
                if cdf {
                    let rows = crate::metrics::cdf_export(&rep.pred_to_truth)?;
                    let file = std::fs::File::create(out.join(scene_name(k, "cdf.txt")))
                        .map_err(|e| Error::io("creating cdf file", e))?;
                    crate::metrics::write_cdf(&rows, std::io::BufWriter::new(file))
                        .map_err(|e| Error::io("writing cdf file", e))?;
                }
            }
            if counted > 0 {
                let n = counted as f64;
                table.push_str(&format!(
                    "{:<10} {:<9.4} {:<9.4} {:<9.2} {:<9.2} {:<9.2}\n",
                    "mean",
                    sums[0] / n,
                    sums[1] / n,
                    sums[2] / n,
                    sums[3] / n,
                    sums[4] / n
                ));
            }
            std::fs::write(out.join("report.csv"), csv)
                .map_err(|e| Error::io("writing report.csv", e))?;
            std::fs::write(out.join("report.txt"), &table)
                .map_err(|e| Error::io("writing report.txt", e))?;
            if counted > 0 {
                println!(
                    "eval: {} scenes, mean CD {:.4} m, MHD {:.4} m, F {:.2}% -> {}",
                    counted,
                    sums[0] / counted as f64,
                    sums[1] / counted as f64,
                    sums[4] / counted as f64,
                    out.display()
                );
            } else {
                println!("eval: no scenes evaluated -> {}", out.display());
            }
            Ok(())
        }

        Command::Export { input, out } => {
            ensure_dir(&out)?;
            let entries = std::fs::read_dir(&input)
                .map_err(|e| Error::io(format!("listing {}", input.display()), e))?;
            let mut names: Vec<String> = Vec::new();
            for entry in entries {
                let entry =
                    entry.map_err(|e| Error::io(format!("listing {}", input.display()), e))?;
                let name = entry.file_name().to_string_lossy().into_owned();
                if name.ends_with(".ri") {
                    names.push(name);
                }
            }
            names.sort();
            if names.is_empty() {
                return Err(Error::config(format!(
                    "no .ri range images in {}",
                    input.display()
                )));
            }
            for name in &names {
                let multi = range_bin::read_range_image(&input.join(name))?;
                let mut points = Vec::new();
                for ch in &multi.channels {
                    points.extend(backproject(ch, "world").points);
                }
                let cloud = PointCloud::new(points, "world");
                let ply_name = format!("{}.ply", name.trim_end_matches(".ri"));
                ply::write_ply(&cloud, &out.join(ply_name))?;
            }
            println!("export: {} range images -> {}", names.len(), out.display());
            Ok(())
        }
    }
}

/// Loads preprocessed cloud pairs and projects them into training samples.
fn load_train_dataset(input: &Path, cfg: &PipelineConfig) -> Result<Vec<TrainSample>> {
    let lidar_geom = cfg.lidar_geometry()?;
    let radar_geom = cfg.radar_geometry()?;
    let indices = scene_indices(input, "lidar.bin")?;
    if indices.is_empty() {
        return Err(Error::config(format!(
            "no scene_NNNN_lidar.bin files in {}",
            input.display()
        )));
    }
    let mut dataset = Vec::with_capacity(indices.len());
    for &k in &indices {
        let lidar = lidar_bin::read_lidar_bin(&input.join(scene_name(k, "lidar.bin")), "world")?;
        let radar = lidar_bin::read_lidar_bin(&input.join(scene_name(k, "radar.bin")), "world")?;
        let (img, _) = project(&lidar, &lidar_geom)?;
        let x0 = normalize(&img);
        let (multi, _) = slice_multichannel(&radar, &radar_geom, cfg.radar.channels)?;
        dataset.push(TrainSample {
            mask: x0.valid.clone(),
            x0: x0.values,
            cond: normalize_stack(&multi),
        });
    }
    Ok(dataset)
}

/// Ground truth for scene `k`: a `scene_NNNN_lidar.bin` cloud, falling back
/// to `scene_NNNN_pred.ply` so a prediction directory can be evaluated
/// against itself.
fn load_truth_cloud(truth: &Path, k: usize) -> Result<PointCloud> {
    let bin = truth.join(scene_name(k, "lidar.bin"));
    if bin.exists() {
        return lidar_bin::read_lidar_bin(&bin, "world");
    }
    let ply_path = truth.join(scene_name(k, "pred.ply"));
    if ply_path.exists() {
        return ply::read_ply(&ply_path, "world");
    }
    Err(Error::config(format!(
        "no ground truth for scene {k} in {}",
        truth.display()
    )))
}
