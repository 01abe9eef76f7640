//! Deterministic moving-sprites sandbox: slow squares and disks on a flat
//! background, with fast movers and striped triangles injected into test
//! videos as anomalies.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::io::frame_file_name;
use super::{
    write_detections, write_frame, write_labels, BoundingBox, Detection, DETECTIONS_FILE, LABELS_FILE, TEST_SPLIT,
    TRAIN_SPLIT,
};
use crate::error::{ensure, Error, Result};
use crate::imaging::GrayImage;
use crate::rng::{streams, substream};

pub const EVENTS_FILE: &str = "events.json";
const SUPERSAMPLE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpriteShape {
    Square,
    Disk,
    StripedTriangle,
}

impl SpriteShape {
    pub fn class_id(self) -> i64 {
        match self {
            SpriteShape::Square => 0,
            SpriteShape::Disk => 1,
            SpriteShape::StripedTriangle => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    /// A normal shape moving several times faster than normal sprites.
    FastMover,
    /// A striped triangle, never seen in training, moving at normal speed.
    NovelShape,
}

impl FromStr for AnomalyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fast_mover" => Ok(AnomalyKind::FastMover),
            "novel_shape" => Ok(AnomalyKind::NovelShape),
            other => Err(Error::Config(format!("unknown anomaly kind `{other}`"))),
        }
    }
}

impl fmt::Display for AnomalyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnomalyKind::FastMover => "fast_mover",
            AnomalyKind::NovelShape => "novel_shape",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub train_videos: usize,
    pub train_frames: usize,
    pub test_videos: usize,
    pub test_frames: usize,
    /// Normal sprites alive for the whole of every video.
    pub sprites_per_video: usize,
    pub normal_shapes: Vec<SpriteShape>,
    /// Test video `v` gets one event of kind `anomaly_kinds[v % len]`; empty
    /// means no anomalies at all.
    pub anomaly_kinds: Vec<AnomalyKind>,
    pub anomaly_duration: usize,
    /// Side length (square, triangle) or diameter (disk), in pixels.
    pub sprite_size: [f64; 2],
    pub normal_speed: [f64; 2],
    pub fast_speed: [f64; 2],
    /// Padding added around sprite extents in the detection boxes.
    pub box_margin: f64,
    /// Per-video background gray level range.
    pub background: [f64; 2],
    /// Per-sprite gray level range of solid sprites.
    pub intensity: [f64; 2],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 240,
            height: 180,
            train_videos: 4,
            train_frames: 48,
            test_videos: 8,
            test_frames: 100,
            sprites_per_video: 3,
            normal_shapes: vec![SpriteShape::Square, SpriteShape::Disk],
            anomaly_kinds: vec![AnomalyKind::FastMover, AnomalyKind::NovelShape],
            anomaly_duration: 40,
            sprite_size: [20.0, 28.0],
            normal_speed: [0.25, 0.75],
            fast_speed: [10.0, 14.0],
            box_margin: 4.0,
            background: [0.12, 0.18],
            intensity: [0.7, 0.8],
        }
    }
}

fn valid_range(r: [f64; 2]) -> bool {
    r[0].is_finite() && r[1].is_finite() && 0.0 <= r[0] && r[0] <= r[1]
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.train_frames >= 1 && self.test_frames >= 1, || "synth: videos must have at least one frame".into())?;
        ensure(self.width >= 1 && self.height >= 1, || "synth: frame size must be positive".into())?;
        ensure(valid_range(self.sprite_size) && self.sprite_size[0] > 0.0, || "synth: bad sprite_size range".into())?;
        ensure(
            self.sprite_size[1] < self.width.min(self.height) as f64,
            || "synth: sprites must fit inside the frame".into(),
        )?;
        ensure(valid_range(self.normal_speed) && valid_range(self.fast_speed), || "synth: bad speed range".into())?;
        ensure(
            [self.background, self.intensity].iter().all(|r| valid_range(*r) && r[1] <= 1.0),
            || "synth: gray level ranges must lie in [0, 1]".into(),
        )?;
        ensure(
            self.sprites_per_video == 0 || !self.normal_shapes.is_empty(),
            || "synth: normal_shapes is empty".into(),
        )?;
        ensure(
            !self.anomaly_kinds.contains(&AnomalyKind::FastMover) || !self.normal_shapes.is_empty(),
            || "synth: fast movers need at least one normal shape".into(),
        )?;
        ensure(
            self.anomaly_kinds.is_empty() || (1..=self.test_frames).contains(&self.anomaly_duration),
            || "synth: anomaly_duration must be in [1, test_frames]".into(),
        )?;
        ensure(self.box_margin >= 0.0 && self.box_margin.is_finite(), || "synth: box_margin must be >= 0".into())
    }
}

/// One sprite's lifetime record; `death` is exclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpriteEvent {
    pub split: String,
    pub video_id: String,
    pub sprite_id: usize,
    pub shape: SpriteShape,
    pub anomaly: Option<AnomalyKind>,
    pub birth: usize,
    pub death: usize,
    pub speed: f64,
}

impl SpriteEvent {
    pub fn alive_at(&self, t: usize) -> bool {
        (self.birth..self.death).contains(&t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthLog {
    pub seed: u64,
    pub config: SynthConfig,
    pub events: Vec<SpriteEvent>,
}

impl SynthLog {
    /// Frame labels implied by the event log: OR over anomalous sprites.
    pub fn labels(&self, split: &str, video_id: &str, frames: usize) -> Vec<u8> {
        (0..frames)
            .map(|t| {
                self.events
                    .iter()
                    .any(|e| e.split == split && e.video_id == video_id && e.anomaly.is_some() && e.alive_at(t))
                    as u8
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
struct Sprite {
    shape: SpriteShape,
    half: f64,
    intensity: f64,
    cx: f64,
    cy: f64,
    vx: f64,
    vy: f64,
}

impl Sprite {
    fn random<R: Rng>(shape: SpriteShape, speed: f64, cfg: &SynthConfig, rng: &mut R) -> Self {
        let size = rng.random_range(cfg.sprite_size[0]..=cfg.sprite_size[1]);
        let half = size / 2.0;
        let cx = rng.random_range(half..=cfg.width as f64 - half);
        let cy = rng.random_range(half..=cfg.height as f64 - half);
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let intensity = rng.random_range(cfg.intensity[0]..=cfg.intensity[1]);
        Self {
            shape,
            half,
            intensity,
            cx,
            cy,
            vx: speed * angle.cos(),
            vy: speed * angle.sin(),
        }
    }

    fn step(&mut self, width: usize, height: usize) {
        fn bounce(p: &mut f64, v: &mut f64, lo: f64, hi: f64) {
            *p += *v;
            if *p < lo {
                *p = 2.0 * lo - *p;
                *v = -*v;
            } else if *p > hi {
                *p = 2.0 * hi - *p;
                *v = -*v;
            }
            *p = p.clamp(lo, hi);
        }
        bounce(&mut self.cx, &mut self.vx, self.half, width as f64 - self.half);
        bounce(&mut self.cy, &mut self.vy, self.half, height as f64 - self.half);
    }

    /// Color at sample point `(x, y)` if covered.
    fn sample(&self, x: f64, y: f64) -> Option<f64> {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let r = self.half;
        match self.shape {
            SpriteShape::Square => (dx.abs() <= r && dy.abs() <= r).then_some(self.intensity),
            SpriteShape::Disk => (dx * dx + dy * dy <= r * r).then_some(self.intensity),
            SpriteShape::StripedTriangle => {
                let from_top = dy + r;
                if !(0.0..=2.0 * r).contains(&from_top) || dx.abs() > from_top / 2.0 {
                    return None;
                }
                let stripe = (from_top / 2.0).floor() as i64 % 2;
                Some(if stripe == 0 { 0.95 } else { 0.4 })
            }
        }
    }

    fn render(&self, frame: &mut [f64], width: usize, height: usize) {
        let x0 = (self.cx - self.half).floor().max(0.0) as usize;
        let y0 = (self.cy - self.half).floor().max(0.0) as usize;
        let x1 = ((self.cx + self.half).ceil() as usize + 1).min(width);
        let y1 = ((self.cy + self.half).ceil() as usize + 1).min(height);
        let total = (SUPERSAMPLE * SUPERSAMPLE) as f64;
        for y in y0..y1 {
            for x in x0..x1 {
                let (mut covered, mut sum) = (0usize, 0.0);
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let px = x as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64;
                        let py = y as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64;
                        if let Some(v) = self.sample(px, py) {
                            covered += 1;
                            sum += v;
                        }
                    }
                }
                if covered > 0 {
                    let p = &mut frame[y * width + x];
                    *p = *p * (1.0 - covered as f64 / total) + sum / total;
                }
            }
        }
    }

    fn detection(&self, frame_index: usize, margin: f64) -> Detection {
        let r = self.half + margin;
        Detection {
            frame_index,
            bbox: BoundingBox {
                x1: self.cx - r,
                y1: self.cy - r,
                x2: self.cx + r,
                y2: self.cy + r,
            },
            confidence: 1.0,
            class_id: self.shape.class_id(),
        }
    }
}

struct PlannedSprite {
    sprite: Sprite,
    event: SpriteEvent,
}

struct RenderedVideo {
    frames: Vec<GrayImage>,
    detections: Vec<Detection>,
    labels: Vec<u8>,
}

fn plan_video<R: Rng>(
    cfg: &SynthConfig,
    split: &str,
    video_id: &str,
    frames: usize,
    anomaly: Option<AnomalyKind>,
    rng: &mut R,
) -> Vec<PlannedSprite> {
    let mut out = Vec::new();
    let event = |id: usize, shape, anomaly, birth, death, speed| SpriteEvent {
        split: split.to_owned(),
        video_id: video_id.to_owned(),
        sprite_id: id,
        shape,
        anomaly,
        birth,
        death,
        speed,
    };
    for id in 0..cfg.sprites_per_video {
        let shape = cfg.normal_shapes[rng.random_range(0..cfg.normal_shapes.len())];
        let speed = rng.random_range(cfg.normal_speed[0]..=cfg.normal_speed[1]);
        out.push(PlannedSprite {
            sprite: Sprite::random(shape, speed, cfg, rng),
            event: event(id, shape, None, 0, frames, speed),
        });
    }
    if let Some(kind) = anomaly {
        let (shape, speed) = match kind {
            AnomalyKind::FastMover => (
                cfg.normal_shapes[rng.random_range(0..cfg.normal_shapes.len())],
                rng.random_range(cfg.fast_speed[0]..=cfg.fast_speed[1]),
            ),
            AnomalyKind::NovelShape => (
                SpriteShape::StripedTriangle,
                rng.random_range(cfg.normal_speed[0]..=cfg.normal_speed[1]),
            ),
        };
        let birth = rng.random_range(0..=frames - cfg.anomaly_duration);
        out.push(PlannedSprite {
            sprite: Sprite::random(shape, speed, cfg, rng),
            event: event(cfg.sprites_per_video, shape, Some(kind), birth, birth + cfg.anomaly_duration, speed),
        });
    }
    out
}

fn render_video(cfg: &SynthConfig, frames: usize, plan: &mut [PlannedSprite], background: f64) -> Result<RenderedVideo> {
    let mut out = RenderedVideo {
        frames: Vec::with_capacity(frames),
        detections: Vec::new(),
        labels: vec![0; frames],
    };
    for t in 0..frames {
        let mut buf = vec![background; cfg.width * cfg.height];
        for p in plan.iter_mut() {
            if p.event.alive_at(t) {
                p.sprite.render(&mut buf, cfg.width, cfg.height);
                out.detections.push(p.sprite.detection(t, cfg.box_margin));
                if p.event.anomaly.is_some() {
                    out.labels[t] = 1;
                }
                p.sprite.step(cfg.width, cfg.height);
            }
        }
        // 8-bit quantization, as stored on disk.
        buf.iter_mut().for_each(|v| *v = (*v * 255.0).round() / 255.0);
        out.frames.push(GrayImage::new(cfg.height, cfg.width, buf)?);
    }
    Ok(out)
}

fn write_video(dir: &Path, video: &RenderedVideo) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (t, frame) in video.frames.iter().enumerate() {
        write_frame(&dir.join(frame_file_name(t)), frame)?;
    }
    write_detections(&dir.join(DETECTIONS_FILE), &video.detections)?;
    write_labels(&dir.join(LABELS_FILE), &video.labels)
}

pub fn video_id(index: usize) -> String {
    format!("{index:03}")
}

/// Writes the train and test splits plus `events.json` under `root`.
pub fn generate_synthetic_dataset(root: &Path, cfg: &SynthConfig, seed: u64) -> Result<SynthLog> {
    cfg.validate()?;
    let mut rng = substream(seed, streams::SYNTH);
    let mut events = Vec::new();
    let splits = [
        (TRAIN_SPLIT, cfg.train_videos, cfg.train_frames),
        (TEST_SPLIT, cfg.test_videos, cfg.test_frames),
    ];
    for (split, videos, frames) in splits {
        for v in 0..videos {
            let id = video_id(v);
            let anomaly = match split {
                TEST_SPLIT if !cfg.anomaly_kinds.is_empty() => Some(cfg.anomaly_kinds[v % cfg.anomaly_kinds.len()]),
                _ => None,
            };
            let background = rng.random_range(cfg.background[0]..=cfg.background[1]);
            let mut plan = plan_video(cfg, split, &id, frames, anomaly, &mut rng);
            let video = render_video(cfg, frames, &mut plan, background)?;
            write_video(&root.join(split).join(&id), &video)?;
            events.extend(plan.into_iter().map(|p| p.event));
        }
    }
    let log = SynthLog {
        seed,
        config: cfg.clone(),
        events,
    };
    let path = root.join(EVENTS_FILE);
    let json = serde_json::to_string_pretty(&log).expect("event log serializes");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(log)
}
