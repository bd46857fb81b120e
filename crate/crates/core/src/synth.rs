//! Synthetic gaze corpora with controllable demographic divergence.
//!
//! Each scene has a few salient centers shared by all observers. Every
//! gender-age cell shifts and widens its gaze clouds by its own offset, so
//! group differences are known ground truth.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data_model::{
    write_gaze_log, write_profiles, GazeFormat, GazeSample, Gender, GroupLabel, ObserverProfile,
    SceneManifest,
};
use crate::cgrpo::{PolicyContext, TrainExample};
use crate::geometry::GridPoint;
use crate::{Error, Result};

/// Per-group displacement and spread of gaze clouds, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupBias {
    pub dx: f64,
    pub dy: f64,
    pub spread: f64,
}

impl GroupBias {
    pub fn default_for(label: GroupLabel) -> GroupBias {
        let (dx, dy, spread) = match label {
            GroupLabel::MaleUnder30 => (-60.0, -20.0, 10.0),
            GroupLabel::MaleOver30 => (-40.0, 20.0, 13.0),
            GroupLabel::FemaleUnder30 => (40.0, -20.0, 18.0),
            GroupLabel::FemaleOver30 => (60.0, 20.0, 22.0),
            _ => (0.0, 0.0, 15.0),
        };
        GroupBias { dx, dy, spread }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub videos: usize,
    pub seconds: u32,
    pub observers_per_cell: usize,
    pub hz: u32,
    pub width: u32,
    pub height: u32,
    pub centers_per_scene: usize,
    /// Fixations per observer per second; samples split evenly among them.
    pub fixations_per_second: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            videos: 2,
            seconds: 3,
            observers_per_cell: 2,
            hz: 30,
            width: 960,
            height: 540,
            centers_per_scene: 3,
            fixations_per_second: 3,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub manifests: Vec<SceneManifest>,
    pub profiles: Vec<ObserverProfile>,
    pub samples: Vec<GazeSample>,
}

const CELLS: [GroupLabel; 4] = [
    GroupLabel::MaleUnder30,
    GroupLabel::MaleOver30,
    GroupLabel::FemaleUnder30,
    GroupLabel::FemaleOver30,
];

pub fn generate(cfg: &SynthConfig) -> SynthCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (w, h) = (f64::from(cfg.width), f64::from(cfg.height));

    let mut profiles = Vec::new();
    for (c, cell) in CELLS.iter().enumerate() {
        for k in 0..cfg.observers_per_cell {
            let (gender, ages) = match cell {
                GroupLabel::MaleUnder30 => (Gender::Male, 20..30),
                GroupLabel::MaleOver30 => (Gender::Male, 30..56),
                GroupLabel::FemaleUnder30 => (Gender::Female, 20..30),
                _ => (Gender::Female, 30..56),
            };
            profiles.push(ObserverProfile {
                observer_id: format!("o{c}{k:03}"),
                age: rng.random_range(ages),
                gender,
            });
        }
    }

    let mut manifests = Vec::new();
    let mut samples = Vec::new();
    let jitter = Normal::new(0.0, 8.0).unwrap();
    let per_fix = (cfg.hz as usize / cfg.fixations_per_second.max(1)).max(1);
    for v in 0..cfg.videos {
        let video_id = format!("v{v:03}");
        manifests.push(SceneManifest {
            video_id: video_id.clone(),
            width: cfg.width,
            height: cfg.height,
            seconds: cfg.seconds,
        });
        for sec in 0..cfg.seconds {
            let centers: Vec<(f64, f64)> = (0..cfg.centers_per_scene)
                .map(|_| (rng.random_range(0.15 * w..0.85 * w), rng.random_range(0.15 * h..0.85 * h)))
                .collect();
            for (c, cell) in CELLS.iter().enumerate() {
                let bias = GroupBias::default_for(*cell);
                let spread = Normal::new(0.0, bias.spread).unwrap();
                for k in 0..cfg.observers_per_cell {
                    let observer_id = format!("o{c}{k:03}");
                    let mut dwell = (0.0, 0.0);
                    for n in 0..cfg.hz as usize {
                        let fix = n / per_fix;
                        if n % per_fix == 0 {
                            let center = centers[(fix + k + sec as usize) % centers.len()];
                            dwell = (
                                center.0 + bias.dx + jitter.sample(&mut rng),
                                center.1 + bias.dy + jitter.sample(&mut rng),
                            );
                        }
                        let (cx, cy) = dwell;
                        let x = (cx + spread.sample(&mut rng)).clamp(0.0, w - 1e-3);
                        let y = (cy + spread.sample(&mut rng)).clamp(0.0, h - 1e-3);
                        samples.push(GazeSample {
                            observer_id: observer_id.clone(),
                            video_id: video_id.clone(),
                            t: f64::from(sec) + n as f64 / f64::from(cfg.hz),
                            x,
                            y,
                        });
                    }
                }
            }
        }
    }
    SynthCorpus {
        manifests,
        profiles,
        samples,
    }
}

/// Writes `gaze.csv`, `profiles.csv` and `manifest.json` into `dir`.
pub fn write_corpus(corpus: &SynthCorpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let gaze = dir.join("gaze.csv");
    let f = fs::File::create(&gaze).map_err(|e| Error::io(&gaze, e))?;
    write_gaze_log(&corpus.samples, std::io::BufWriter::new(f), GazeFormat::Csv)?;
    let prof = dir.join("profiles.csv");
    let f = fs::File::create(&prof).map_err(|e| Error::io(&prof, e))?;
    write_profiles(&corpus.profiles, std::io::BufWriter::new(f))?;
    let man = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&corpus.manifests)?;
    fs::write(&man, text).map_err(|e| Error::io(&man, e))?;
    Ok(())
}

/// Centre of each gender-age cell's target cloud on the grid. Male cells sit
/// on the left half, female cells on the right, and age moves them vertically.
pub fn toy_cell_center(label: GroupLabel) -> GridPoint {
    match label {
        GroupLabel::MaleUnder30 => GridPoint::new(250.0, 300.0),
        GroupLabel::MaleOver30 => GridPoint::new(250.0, 700.0),
        GroupLabel::FemaleUnder30 => GridPoint::new(750.0, 300.0),
        _ => GridPoint::new(750.0, 700.0),
    }
}

fn gender_of(cell: GroupLabel) -> GroupLabel {
    match cell {
        GroupLabel::MaleUnder30 | GroupLabel::MaleOver30 => GroupLabel::Male,
        _ => GroupLabel::Female,
    }
}

/// One training prompt per P2 group over a shared scene. Gender groups pool
/// the targets of their two age cells.
pub fn toy_group_dataset(points_per_cell: usize, seed: u64) -> Vec<TrainExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, 40.0).expect("valid normal");
    let cells: Vec<(GroupLabel, Vec<GridPoint>)> = CELLS
        .iter()
        .map(|&cell| {
            let c = toy_cell_center(cell);
            let pts = (0..points_per_cell)
                .map(|_| {
                    GridPoint::new(
                        (c.gx + jitter.sample(&mut rng)).clamp(0.0, 1000.0),
                        (c.gy + jitter.sample(&mut rng)).clamp(0.0, 1000.0),
                    )
                })
                .collect();
            (cell, pts)
        })
        .collect();
    GroupLabel::P2
        .iter()
        .map(|&group| {
            let targets = cells
                .iter()
                .filter(|(cell, _)| *cell == group || gender_of(*cell) == group)
                .flat_map(|(_, pts)| pts.iter().copied())
                .collect();
            TrainExample {
                context: PolicyContext {
                    group,
                    scene: "toy".into(),
                },
                targets,
            }
        })
        .collect()
}
