//! On-disk dataset layout.
//!
//! ```text
//! <dir>/meta.json          camera, trajectory, noise, seed, frame count
//! <dir>/canvas.csv         id,x,y            (metres)
//! <dir>/frames/NNNN.csv    id,u,v            (pixels)
//! <dir>/groundtruth.csv    frame,x,y,heading,phi,rho
//! ```
//!
//! `phi,rho` on row `k` is the motion from frame `k` to the next frame. On
//! closed trajectories the last row holds the motion back to frame 0; on
//! open ones both fields are empty.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Point2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraModel, Pixel, Pose2D};
use crate::metrics::Trajectory;
use crate::simulate::{SimulationConfig, SyntheticSequence, TrajectorySpec};

pub const FORMAT_VERSION: u32 = 1;
pub const RNG_DESCRIPTION: &str =
    "ChaCha8 (rand_chacha 0.9) seeded with seed_from_u64(seed); canvas on stream 0, frame k on stream k+1";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing {0}")]
    Missing(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

impl DatasetError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            DatasetError::Missing(path.to_path_buf())
        } else {
            DatasetError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }

    fn csv(path: &Path, source: csv::Error) -> Self {
        if let csv::ErrorKind::Io(e) = source.kind() {
            if e.kind() == std::io::ErrorKind::NotFound {
                return DatasetError::Missing(path.to_path_buf());
            }
        }
        DatasetError::Csv {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub camera: CameraModel,
    pub trajectory: TrajectorySpec,
    pub frames: usize,
    pub closed: bool,
    pub points: usize,
    pub extent: (f64, f64),
    /// Half-width of the uniform pixel noise.
    pub noise: f64,
    pub seed: u64,
    pub rng: String,
}

impl DatasetMeta {
    pub fn from_config(cfg: &SimulationConfig) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            camera: cfg.camera,
            trajectory: cfg.trajectory,
            frames: cfg.trajectory.frames(),
            closed: cfg.trajectory.closed(),
            points: cfg.points,
            extent: cfg.extent,
            noise: cfg.noise,
            seed: cfg.seed,
            rng: RNG_DESCRIPTION.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct CanvasRow {
    id: usize,
    x: f64,
    y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct KeypointRow {
    id: usize,
    u: f64,
    v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRow {
    pub frame: usize,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub phi: Option<f64>,
    pub rho: Option<f64>,
}

impl GroundTruthRow {
    pub fn pose(&self) -> Pose2D {
        Pose2D {
            x: self.x,
            y: self.y,
            heading: self.heading,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct PoseRow {
    frame: usize,
    x: f64,
    y: f64,
    heading: f64,
}

/// Keypoints of one frame; `ids` refer to canvas points.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Frame {
    pub ids: Vec<usize>,
    pub points: Vec<Pixel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub frames: Vec<Frame>,
    pub groundtruth: Vec<GroundTruthRow>,
}

impl Dataset {
    pub fn from_sequence(seq: &SyntheticSequence) -> Self {
        let meta = DatasetMeta::from_config(&seq.config);
        let frames = seq
            .observations
            .iter()
            .map(|o| Frame {
                ids: o.ids.clone(),
                points: o.points.clone(),
            })
            .collect();
        let groundtruth = seq
            .observations
            .iter()
            .enumerate()
            .map(|(k, o)| {
                let m = seq.motions.get(k).map(|g| g.motion);
                GroundTruthRow {
                    frame: k,
                    x: o.pose.x,
                    y: o.pose.y,
                    heading: o.pose.heading,
                    phi: m.map(|m| m.phi),
                    rho: m.map(|m| m.rho),
                }
            })
            .collect();
        Self {
            meta,
            frames,
            groundtruth,
        }
    }

    /// Ground-truth poses; closed trajectories repeat frame 0 as frame `n`
    /// so that they line up with an estimate that includes the closing pair.
    pub fn groundtruth_trajectory(&self) -> Trajectory {
        let mut poses: Vec<Pose2D> = self.groundtruth.iter().map(GroundTruthRow::pose).collect();
        if self.meta.closed && !poses.is_empty() {
            poses.push(poses[0]);
        }
        Trajectory::from_poses(poses)
    }
}

pub fn frame_path(dir: &Path, k: usize) -> PathBuf {
    dir.join("frames").join(format!("{k:04}.csv"))
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| DatasetError::csv(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| DatasetError::csv(path, e))?;
    }
    w.flush().map_err(|e| DatasetError::io(path, e))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, DatasetError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| DatasetError::csv(path, e))?;
    r.deserialize().collect::<Result<Vec<T>, _>>().map_err(|e| DatasetError::csv(path, e))
}

/// Writes canvas, frames, ground truth and metadata. Existing files are overwritten.
pub fn write_sequence(dir: &Path, seq: &SyntheticSequence) -> Result<(), DatasetError> {
    let frames_dir = dir.join("frames");
    fs::create_dir_all(&frames_dir).map_err(|e| DatasetError::io(&frames_dir, e))?;
    let ds = Dataset::from_sequence(seq);

    let meta_path = dir.join("meta.json");
    let json = serde_json::to_string_pretty(&ds.meta).map_err(|e| DatasetError::Json {
        path: meta_path.clone(),
        source: e,
    })?;
    fs::write(&meta_path, json + "\n").map_err(|e| DatasetError::io(&meta_path, e))?;

    write_csv(
        &dir.join("canvas.csv"),
        seq.canvas
            .points
            .iter()
            .enumerate()
            .map(|(id, p)| CanvasRow { id, x: p.x, y: p.y }),
    )?;
    for (k, f) in ds.frames.iter().enumerate() {
        write_csv(
            &frame_path(dir, k),
            f.ids.iter().zip(&f.points).map(|(&id, p)| KeypointRow { id, u: p.x, v: p.y }),
        )?;
    }
    write_csv(&dir.join("groundtruth.csv"), ds.groundtruth.iter().copied())
}

pub fn read_meta(dir: &Path) -> Result<DatasetMeta, DatasetError> {
    let path = dir.join("meta.json");
    let text = fs::read_to_string(&path).map_err(|e| DatasetError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| DatasetError::Json { path, source: e })
}

pub fn read_frame(dir: &Path, k: usize) -> Result<Frame, DatasetError> {
    let rows: Vec<KeypointRow> = read_csv(&frame_path(dir, k))?;
    Ok(Frame {
        ids: rows.iter().map(|r| r.id).collect(),
        points: rows.iter().map(|r| Pixel::new(r.u, r.v)).collect(),
    })
}

pub fn read_canvas(dir: &Path) -> Result<Vec<Point2<f64>>, DatasetError> {
    let rows: Vec<CanvasRow> = read_csv(&dir.join("canvas.csv"))?;
    Ok(rows.iter().map(|r| Point2::new(r.x, r.y)).collect())
}

pub fn read_groundtruth(path: &Path) -> Result<Vec<GroundTruthRow>, DatasetError> {
    read_csv(path)
}

/// Loads metadata, every frame listed in it, and the ground truth.
pub fn read_dataset(dir: &Path) -> Result<Dataset, DatasetError> {
    let meta = read_meta(dir)?;
    let frames = (0..meta.frames).map(|k| read_frame(dir, k)).collect::<Result<Vec<_>, _>>()?;
    let gt_path = dir.join("groundtruth.csv");
    let groundtruth = read_groundtruth(&gt_path)?;
    if groundtruth.len() != meta.frames {
        return Err(DatasetError::Invalid {
            path: gt_path,
            message: format!("{} rows for {} frames", groundtruth.len(), meta.frames),
        });
    }
    Ok(Dataset {
        meta,
        frames,
        groundtruth,
    })
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<(), DatasetError> {
    write_csv(
        path,
        traj.iter().map(|(frame, p)| PoseRow {
            frame,
            x: p.x,
            y: p.y,
            heading: p.heading,
        }),
    )
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory, DatasetError> {
    let rows: Vec<PoseRow> = read_csv(path)?;
    Trajectory::new(
        rows.iter()
            .map(|r| {
                (
                    r.frame,
                    Pose2D {
                        x: r.x,
                        y: r.y,
                        heading: r.heading,
                    },
                )
            })
            .collect(),
    )
    .map_err(|e| DatasetError::Invalid {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
