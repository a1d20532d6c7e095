//! File formats and pipeline configuration.
//!
//! Every reader rejects malformed input with a positioned error instead of
//! returning a partial result. All multi-byte values are little-endian.
//!
//! - LiDAR `.bin`: packed `f32` records of `x, y, z, intensity`
//!   ([`lidar_bin`]).
//! - ASCII PLY point clouds ([`ply`]).
//! - Range images and power maps ([`range_bin`]).
//! - Model checkpoints ([`checkpoint`]).
//! - Pipeline configuration: a TOML file with nested sections; unknown keys
//!   are errors ([`PipelineConfig`]).

pub mod checkpoint;
pub mod lidar_bin;
pub mod ply;
pub mod range_bin;

use crate::geom::{AngularFov, ImageGeometry, PointCloud, RigidTransform};
use crate::losses::LossWeights;
use crate::model::{ModelConfig, TrainConfig};
use crate::preprocess::GroundRemovalParams;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// One time-aligned sensor frame.
#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub timestamp: f64,
    pub lidar: PointCloud,
    pub radar: PointCloud,
    pub pose: RigidTransform,
}

/// Associates LiDAR frames with the nearest-timestamp radar frame and pose.
/// Frames whose best match exceeds `max_skew` seconds are dropped; the count
/// of dropped frames is returned alongside.
pub fn associate_frames(
    lidar: Vec<(f64, PointCloud)>,
    radar: &[(f64, PointCloud)],
    poses: &[(f64, RigidTransform)],
    max_skew: f64,
) -> (Vec<FrameRecord>, usize) {
    let nearest = |ts: f64, stamps: &[f64]| -> Option<usize> {
        stamps
            .iter()
            .enumerate()
            .min_by(|a, b| {
                (a.1 - ts)
                    .abs()
                    .partial_cmp(&(b.1 - ts).abs())
                    .expect("finite timestamps")
            })
            .map(|(i, _)| i)
    };
    let radar_ts: Vec<f64> = radar.iter().map(|(t, _)| *t).collect();
    let pose_ts: Vec<f64> = poses.iter().map(|(t, _)| *t).collect();
    let mut out = Vec::new();
    let mut dropped = 0usize;
    for (ts, cloud) in lidar {
        let (Some(ri), Some(pi)) = (nearest(ts, &radar_ts), nearest(ts, &pose_ts)) else {
            dropped += 1;
            continue;
        };
        if (radar_ts[ri] - ts).abs() > max_skew || (pose_ts[pi] - ts).abs() > max_skew {
            dropped += 1;
            continue;
        }
        out.push(FrameRecord {
            timestamp: ts,
            lidar: cloud,
            radar: radar[ri].1.clone(),
            pose: poses[pi].1.clone(),
        });
    }
    (out, dropped)
}

/// Default maximum sensor-timestamp skew, seconds.
pub const DEFAULT_MAX_SKEW: f64 = 0.050;

// --- configuration ----------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FovSection {
    pub theta_min: f64,
    pub theta_max: f64,
    pub phi_min: f64,
    pub phi_max: f64,
    pub r_min: f64,
    pub r_max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LidarSection {
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RadarSection {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PreprocessSection {
    pub ransac_iterations: usize,
    pub ransac_dist_tol: f64,
    pub ransac_angle_tol_deg: f64,
    pub ransac_min_inlier_frac: f64,
    pub dbscan_eps: f64,
    pub dbscan_min_pts: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CfarSection {
    pub guard: usize,
    pub train: usize,
    pub k_rank: f64,
    pub alpha: f64,
    pub two_dim: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub sigma_log_mean: f64,
    pub sigma_log_std: f64,
    pub lambda_mse: f64,
    pub lambda_perceptual: f64,
    pub lambda_pixel: f64,
    pub base_channels: usize,
    pub cond_features: usize,
    pub emb_dim: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    pub fscore_tau: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub scenes: usize,
    pub radar_keep_ratio: f64,
    pub range_jitter: f64,
    pub ghost_rate: f64,
    pub boxes_min: usize,
    pub boxes_max: usize,
}

/// Whole-pipeline configuration. Loaded from TOML; unknown keys anywhere are
/// rejected (fail-closed).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub fov: FovSection,
    pub lidar: LidarSection,
    pub radar: RadarSection,
    pub preprocess: PreprocessSection,
    pub cfar: CfarSection,
    pub schedule: ScheduleSection,
    pub train: TrainSection,
    pub metrics: MetricsSection,
    pub synth: SynthSection,
}

impl Default for PipelineConfig {
    /// Desk-scale defaults: 32x128 LiDAR images, 16x16x16 radar stacks, a
    /// forward-looking 180-degree x 90-degree FOV out to 12 m.
    fn default() -> Self {
        use std::f64::consts::PI;
        PipelineConfig {
            seed: 0,
            fov: FovSection {
                theta_min: -PI / 2.0,
                theta_max: PI / 2.0,
                phi_min: PI / 4.0,
                phi_max: 3.0 * PI / 4.0,
                r_min: 0.5,
                r_max: 12.0,
            },
            lidar: LidarSection {
                height: 32,
                width: 128,
            },
            radar: RadarSection {
                height: 16,
                width: 16,
                channels: 16,
            },
            preprocess: PreprocessSection {
                ransac_iterations: 200,
                ransac_dist_tol: 0.1,
                ransac_angle_tol_deg: 15.0,
                ransac_min_inlier_frac: 0.05,
                dbscan_eps: 0.5,
                dbscan_min_pts: 5,
            },
            cfar: CfarSection {
                guard: 2,
                train: 8,
                k_rank: 0.75,
                alpha: crate::cfar::ALPHA_NEAR_ZERO,
                two_dim: false,
            },
            schedule: ScheduleSection {
                sigma_min: 0.002,
                sigma_max: 80.0,
                rho: 7.0,
                steps: 32,
            },
            train: TrainSection {
                learning_rate: 3e-3,
                steps: 2000,
                batch_size: 4,
                sigma_log_mean: -1.2,
                sigma_log_std: 1.2,
                lambda_mse: 1.0,
                lambda_perceptual: 0.5,
                lambda_pixel: 1.0,
                base_channels: 8,
                cond_features: 8,
                emb_dim: 16,
            },
            metrics: MetricsSection { fscore_tau: 0.25 },
            synth: SynthSection {
                scenes: 40,
                radar_keep_ratio: 0.08,
                range_jitter: 0.1,
                ghost_rate: 0.05,
                boxes_min: 2,
                boxes_max: 4,
            },
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        let cfg: PipelineConfig = toml::from_str(&text)
            .map_err(|e| Error::config(format!("config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::config(format!("serializing config: {e}")))?;
        std::fs::write(path, text)
            .map_err(|e| Error::io(format!("writing config {}", path.display()), e))
    }

    pub fn validate(&self) -> Result<()> {
        self.shared_fov()?;
        self.lidar_geometry()?;
        self.radar_geometry()?;
        if self.radar.channels == 0 || self.radar.channels > 32 {
            return Err(Error::config("radar.channels must be in 1..=32"));
        }
        crate::diffusion::make_schedule(
            self.schedule.sigma_min,
            self.schedule.sigma_max,
            self.schedule.rho,
            self.schedule.steps,
        )?;
        self.train_config().validate()?;
        if self.metrics.fscore_tau <= 0.0 {
            return Err(Error::config("metrics.fscore_tau must be > 0"));
        }
        if self.synth.scenes == 0 {
            return Err(Error::config("synth.scenes must be >= 1"));
        }
        if !(0.0 < self.synth.radar_keep_ratio && self.synth.radar_keep_ratio <= 0.1) {
            return Err(Error::config(
                "synth.radar_keep_ratio must be in (0, 0.1] to keep radar at \
                 least 10x sparser than LiDAR",
            ));
        }
        Ok(())
    }

    pub fn shared_fov(&self) -> Result<AngularFov> {
        AngularFov::new(
            self.fov.theta_min,
            self.fov.theta_max,
            self.fov.phi_min,
            self.fov.phi_max,
            self.fov.r_min,
            self.fov.r_max,
        )
    }

    pub fn lidar_geometry(&self) -> Result<ImageGeometry> {
        ImageGeometry::new(self.lidar.width, self.lidar.height, self.shared_fov()?)
    }

    pub fn radar_geometry(&self) -> Result<ImageGeometry> {
        ImageGeometry::new(self.radar.width, self.radar.height, self.shared_fov()?)
    }

    pub fn ground_removal_params(&self) -> GroundRemovalParams {
        GroundRemovalParams {
            iterations: self.preprocess.ransac_iterations,
            dist_tol: self.preprocess.ransac_dist_tol,
            angle_tol_deg: self.preprocess.ransac_angle_tol_deg,
            min_inlier_frac: self.preprocess.ransac_min_inlier_frac,
        }
    }

    pub fn cfar_params(&self) -> crate::cfar::CfarParams {
        crate::cfar::CfarParams {
            guard: self.cfar.guard,
            train: self.cfar.train,
            k_rank: self.cfar.k_rank,
            alpha: self.cfar.alpha,
            two_dim: self.cfar.two_dim,
        }
    }

    pub fn noise_schedule(&self) -> Result<crate::diffusion::NoiseSchedule> {
        crate::diffusion::make_schedule(
            self.schedule.sigma_min,
            self.schedule.sigma_max,
            self.schedule.rho,
            self.schedule.steps,
        )
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            mse: self.train.lambda_mse,
            perceptual: self.train.lambda_perceptual,
            pixel: self.train.lambda_pixel,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            steps: self.train.steps,
            batch_size: self.train.batch_size,
            sigma_log_mean: self.train.sigma_log_mean,
            sigma_log_std: self.train.sigma_log_std,
            weights: self.loss_weights(),
            seed: self.seed,
            divergence_factor: 1e3,
            log_every: 1,
        }
    }

    /// Model architecture implied by the image geometries. `data_std` is a
    /// placeholder until measured from the training set.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            target_h: self.lidar.height,
            target_w: self.lidar.width,
            cond_channels: self.radar.channels,
            cond_h: self.radar.height,
            cond_w: self.radar.width,
            base_channels: self.train.base_channels,
            cond_features: self.train.cond_features,
            emb_dim: self.train.emb_dim,
            data_std: 0.5,
        }
    }
}
