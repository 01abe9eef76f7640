//! Frame/detection ingestion, region-pair extraction and the training pair
//! stream.
//!
//! On-disk layout of a dataset root:
//!
//! ```text
//! <root>/<split>/<video_id>/000000.png      frames, 8-bit gray or RGB
//! <root>/<split>/<video_id>/detections.csv  frame,x1,y1,x2,y2,confidence,class_id
//! <root>/<split>/<video_id>/labels.txt      one 0/1 per line, line i = frame i
//! ```

mod io;
pub mod synth;

pub use io::{
    list_videos, load_detections, load_labels, load_video, read_frame, write_detections, write_frame, write_labels,
    DETECTIONS_FILE, DETECTIONS_HEADER, LABELS_FILE,
};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::imaging::{resize, sobel_gradient, GrayImage};

pub const TRAIN_SPLIT: &str = "train";
pub const TEST_SPLIT: &str = "test";

/// Axis-aligned box in frame pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        ensure([x1, y1, x2, y2].iter().all(|v| v.is_finite()), || "box coordinates must be finite".into())?;
        ensure(x1 < x2 && y1 < y2, || format!("degenerate box ({x1}, {y1}, {x2}, {y2})"))?;
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Intersection with `[0, width] x [0, height]`, or `None` if empty.
    pub fn clip(&self, width: usize, height: usize) -> Option<BoundingBox> {
        let x1 = self.x1.max(0.0);
        let y1 = self.y1.max(0.0);
        let x2 = self.x2.min(width as f64);
        let y2 = self.y2.min(height as f64);
        (x1 < x2 && y1 < y2).then_some(BoundingBox { x1, y1, x2, y2 })
    }

    /// Integer pixel window `(y0, y1, x0, x1)` covering the box, end-exclusive.
    fn pixel_window(&self, width: usize, height: usize) -> Option<(usize, usize, usize, usize)> {
        let b = self.clip(width, height)?;
        let x0 = b.x1.floor() as usize;
        let y0 = b.y1.floor() as usize;
        let x1 = (b.x2.ceil() as usize).min(width);
        let y1 = (b.y2.ceil() as usize).min(height);
        (x0 < x1 && y0 < y1).then_some((y0, y1, x0, x1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame_index: usize,
    pub bbox: BoundingBox,
    pub confidence: f64,
    pub class_id: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoSequence {
    pub video_id: String,
    pub frames: Vec<GrayImage>,
    /// Per-frame ground truth, 1 = abnormal.
    pub frame_labels: Option<Vec<u8>>,
}

impl VideoSequence {
    pub fn new(video_id: impl Into<String>, frames: Vec<GrayImage>, frame_labels: Option<Vec<u8>>) -> Result<Self> {
        let video_id = video_id.into();
        ensure(!frames.is_empty(), || format!("video {video_id} has no frames"))?;
        let (h, w) = (frames[0].height(), frames[0].width());
        ensure(frames.iter().all(|f| f.height() == h && f.width() == w), || {
            format!("video {video_id}: frames differ in resolution")
        })?;
        if let Some(labels) = &frame_labels {
            ensure(labels.len() == frames.len(), || {
                format!("video {video_id}: {} labels for {} frames", labels.len(), frames.len())
            })?;
            ensure(labels.iter().all(|&l| l <= 1), || format!("video {video_id}: labels must be 0 or 1"))?;
        }
        Ok(Self {
            video_id,
            frames,
            frame_labels,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }
    pub fn width(&self) -> usize {
        self.frames[0].width()
    }
    pub fn height(&self) -> usize {
        self.frames[0].height()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    /// Frames between the appearance and the past gradient.
    pub temporal_spacing: usize,
    pub min_confidence: f64,
    pub region_size: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            temporal_spacing: 3,
            min_confidence: 0.3,
            region_size: 64,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.temporal_spacing >= 1, || "sampling.temporal_spacing must be >= 1".into())?;
        ensure((0.0..=1.0).contains(&self.min_confidence), || "sampling.min_confidence must be in [0, 1]".into())?;
        ensure(self.region_size >= 1, || "sampling.region_size must be >= 1".into())
    }
}

/// Appearance at frame `t` and Sobel gradient of frame `t - T`, both cropped
/// at the frame-`t` box and resized to the region size.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionPair {
    pub appearance: GrayImage,
    pub past_gradient: GrayImage,
    pub frame_index: usize,
    pub bbox: BoundingBox,
    pub video_id: String,
}

fn crop_resized(frame: &GrayImage, window: (usize, usize, usize, usize), size: usize) -> Result<GrayImage> {
    let (y0, y1, x0, x1) = window;
    resize(&frame.crop(y0, y1, x0, x1)?, size, size)
}

/// Builds the region pair for one detection; `None` when there is no frame
/// `t - T` or the clipped box is empty.
pub fn extract_region_pair(video: &VideoSequence, det: &Detection, cfg: &SamplingConfig) -> Result<Option<RegionPair>> {
    let t = det.frame_index;
    ensure(t < video.frame_count(), || {
        format!(
            "detection at frame {t} but video {} has {} frames",
            video.video_id,
            video.frame_count()
        )
    })?;
    if t < cfg.temporal_spacing {
        return Ok(None);
    }
    let Some(window) = det.bbox.pixel_window(video.width(), video.height()) else {
        return Ok(None);
    };
    let appearance = crop_resized(&video.frames[t], window, cfg.region_size)?;
    let past = crop_resized(&video.frames[t - cfg.temporal_spacing], window, cfg.region_size)?;
    Ok(Some(RegionPair {
        appearance,
        past_gradient: sobel_gradient(&past),
        frame_index: t,
        bbox: det.bbox,
        video_id: video.video_id.clone(),
    }))
}

/// All region pairs of a video, in detection order, with their detection index.
pub fn video_region_pairs(
    video: &VideoSequence,
    detections: &[Detection],
    cfg: &SamplingConfig,
) -> Result<Vec<(usize, RegionPair)>> {
    let mut out = Vec::new();
    for (i, det) in detections.iter().enumerate() {
        if let Some(p) = extract_region_pair(video, det, cfg)? {
            out.push((i, p));
        }
    }
    Ok(out)
}

/// Repeatable, seed-shuffled stream over a fixed set of training pairs.
/// Each call to [`PairStream::next_epoch_order`] yields a fresh permutation.
#[derive(Debug, Clone)]
pub struct PairStream {
    pairs: Vec<RegionPair>,
    rng: ChaCha8Rng,
}

impl PairStream {
    pub fn from_pairs(pairs: Vec<RegionPair>, shuffle_seed: u64) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyDataset("no valid region pairs".into()));
        }
        let size = pairs[0].appearance.height();
        ensure(
            pairs.iter().all(|p| {
                p.appearance.height() == size
                    && p.appearance.width() == size
                    && p.past_gradient.height() == size
                    && p.past_gradient.width() == size
            }),
            || "region pairs must share one square size".into(),
        )?;
        Ok(Self {
            pairs,
            rng: ChaCha8Rng::seed_from_u64(shuffle_seed),
        })
    }

    /// Pairs in canonical (video, frame, detection) order.
    pub fn pairs(&self) -> &[RegionPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn image_size(&self) -> usize {
        self.pairs[0].appearance.height()
    }

    pub fn next_epoch_order(&mut self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.pairs.len()).collect();
        idx.shuffle(&mut self.rng);
        idx
    }
}

/// Loads every training video under `<root>/train` and extracts all valid pairs.
pub fn training_pair_stream(root: &Path, cfg: &SamplingConfig, shuffle_seed: u64) -> Result<PairStream> {
    cfg.validate()?;
    let mut pairs = Vec::new();
    for video_id in list_videos(root, TRAIN_SPLIT)? {
        let dir = root.join(TRAIN_SPLIT).join(&video_id);
        let video = load_video(&dir, &video_id)?;
        let dets = load_detections(&dir.join(DETECTIONS_FILE), cfg.min_confidence)?;
        pairs.extend(video_region_pairs(&video, &dets, cfg)?.into_iter().map(|(_, p)| p));
    }
    if pairs.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{} yields no region pairs with temporal spacing {}",
            root.join(TRAIN_SPLIT).display(),
            cfg.temporal_spacing
        )));
    }
    PairStream::from_pairs(pairs, shuffle_seed)
}
