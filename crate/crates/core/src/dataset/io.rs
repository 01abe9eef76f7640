use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{BoundingBox, Detection, VideoSequence};
use crate::error::{Error, Result};
use crate::imaging::{to_grayscale, GrayImage, RgbImage};

pub const DETECTIONS_FILE: &str = "detections.csv";
pub const LABELS_FILE: &str = "labels.txt";
pub const DETECTIONS_HEADER: &str = "frame,x1,y1,x2,y2,confidence,class_id";

pub fn frame_file_name(index: usize) -> String {
    format!("{index:06}.png")
}

#[derive(Debug, Deserialize)]
struct DetectionRow {
    frame: usize,
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
    confidence: f64,
    class_id: i64,
}

/// Parses a detection CSV, drops rows below `min_confidence` and sorts by frame.
pub fn load_detections(path: &Path, min_confidence: f64) -> Result<Vec<Detection>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != DETECTIONS_HEADER {
        return Err(parse_err(1, format!("expected header `{DETECTIONS_HEADER}`, found `{header}`")));
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let row: DetectionRow = record.deserialize(None).map_err(|e| parse_err(line, e.to_string()))?;
        let bbox = BoundingBox::new(row.x1, row.y1, row.x2, row.y2).map_err(|e| parse_err(line, e.to_string()))?;
        if !(0.0..=1.0).contains(&row.confidence) {
            return Err(parse_err(line, format!("confidence {} outside [0, 1]", row.confidence)));
        }
        if row.confidence < min_confidence {
            continue;
        }
        out.push(Detection {
            frame_index: row.frame,
            bbox,
            confidence: row.confidence,
            class_id: row.class_id,
        });
    }
    out.sort_by_key(|d| d.frame_index);
    Ok(out)
}

pub fn write_detections(path: &Path, detections: &[Detection]) -> Result<()> {
    let mut s = String::from(DETECTIONS_HEADER);
    s.push('\n');
    for d in detections {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            d.frame_index, d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2, d.confidence, d.class_id
        ));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn load_labels(path: &Path) -> Result<Vec<u8>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| match l.trim() {
            "0" => Ok(0),
            "1" => Ok(1),
            other => Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("label must be 0 or 1, got `{other}`"),
            }),
        })
        .collect()
}

pub fn write_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let s: String = labels.iter().map(|l| format!("{l}\n")).collect();
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_frame(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        image::DynamicImage::ImageLuma8(buf) => {
            GrayImage::new(h, w, buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect())
        }
        other => {
            let rgb = other.to_rgb8();
            let data = rgb
                .pixels()
                .map(|p| [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0])
                .collect();
            to_grayscale(&RgbImage {
                height: h,
                width: w,
                data,
            })
        }
    }
}

/// Writes an 8-bit grayscale PNG.
pub fn write_frame(path: &Path, img: &GrayImage) -> Result<()> {
    let bytes: Vec<u8> = img.data().iter().map(|v| (v * 255.0).round() as u8).collect();
    let buf = image::GrayImage::from_raw(img.width() as u32, img.height() as u32, bytes).expect("buffer size matches");
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn frame_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    Ok(paths)
}

/// Loads the frames of one video directory, plus `labels.txt` when present.
pub fn load_video(dir: &Path, video_id: &str) -> Result<VideoSequence> {
    let frames = frame_paths(dir)?
        .iter()
        .map(|p| read_frame(p))
        .collect::<Result<Vec<_>>>()?;
    let labels_path = dir.join(LABELS_FILE);
    let labels = if labels_path.exists() {
        Some(load_labels(&labels_path)?)
    } else {
        None
    };
    VideoSequence::new(video_id, frames, labels)
}

/// Sorted video ids under `<root>/<split>`.
pub fn list_videos(root: &Path, split: &str) -> Result<Vec<String>> {
    let dir = root.join(split);
    let mut ids: Vec<String> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().to_str().map(str::to_owned))
        .collect();
    ids.sort();
    Ok(ids)
}
