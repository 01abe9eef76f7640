//! Frame-level aggregation, per-video normalization, temporal smoothing and
//! frame-level ROC-AUC.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

pub const DEFAULT_SIGMA: f64 = 10.0;
pub const SCORES_CSV_HEADER: &str = "video_id,frame,score_raw,score_final";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameScoreSeries {
    pub video_id: String,
    pub scores: Vec<f64>,
    pub normalized: bool,
    pub smoothed: bool,
}

impl FrameScoreSeries {
    pub fn new(video_id: impl Into<String>, scores: Vec<f64>) -> Self {
        Self {
            video_id: video_id.into(),
            scores,
            normalized: false,
            smoothed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Per-frame maximum of region scores; frames without regions score 0.
pub fn frame_scores(video_id: &str, region_scores: &[(usize, f64)], frame_count: usize) -> Result<FrameScoreSeries> {
    ensure(frame_count >= 1, || "frame_count must be >= 1".into())?;
    let mut scores: Vec<Option<f64>> = vec![None; frame_count];
    for &(t, s) in region_scores {
        ensure(t < frame_count, || format!("region at frame {t} but video {video_id} has {frame_count} frames"))?;
        ensure(s.is_finite(), || format!("non-finite region score at frame {t}"))?;
        scores[t] = Some(scores[t].map_or(s, |m: f64| m.max(s)));
    }
    Ok(FrameScoreSeries::new(video_id, scores.into_iter().map(|s| s.unwrap_or(0.0)).collect()))
}

/// Min–max rescaling to `[0, 1]`; a constant series maps to zeros.
pub fn normalize_per_video(series: &FrameScoreSeries) -> FrameScoreSeries {
    let min = series.scores.iter().copied().fold(f64::INFINITY, f64::min);
    let max = series.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    let scores = if range > 0.0 {
        series.scores.iter().map(|s| (s - min) / range).collect()
    } else {
        vec![0.0; series.len()]
    };
    FrameScoreSeries {
        scores,
        normalized: true,
        ..series.clone()
    }
}

/// Normalized Gaussian kernel of radius `round(4σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma + 0.5) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Maps an out-of-range index by half-sample reflection (`dcba|abcd|dcba`).
pub fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let m = i.rem_euclid(2 * n);
    (if m >= n { 2 * n - 1 - m } else { m }) as usize
}

pub fn gaussian_smooth(series: &FrameScoreSeries, sigma: f64) -> Result<FrameScoreSeries> {
    ensure(sigma > 0.0 && sigma.is_finite(), || format!("sigma must be > 0, got {sigma}"))?;
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let n = series.len();
    let x = &series.scores;
    let scores = (0..n as isize)
        .map(|t| {
            k.iter()
                .enumerate()
                .map(|(j, w)| w * x[reflect_index(t + j as isize - r, n)])
                .sum()
        })
        .collect();
    Ok(FrameScoreSeries {
        scores,
        smoothed: true,
        ..series.clone()
    })
}

/// Raw frame scores → per-video min–max → Gaussian smoothing.
pub fn post_process(raw: &FrameScoreSeries, sigma: f64) -> Result<FrameScoreSeries> {
    gaussian_smooth(&normalize_per_video(raw), sigma)
}

/// ROC-AUC over all videos' frames concatenated; tied scores get half credit.
pub fn frame_level_auc(all_series: &[FrameScoreSeries], all_labels: &[Vec<u8>]) -> Result<f64> {
    ensure(all_series.len() == all_labels.len(), || {
        format!("{} score series but {} label vectors", all_series.len(), all_labels.len())
    })?;
    let mut pairs = Vec::new();
    for (s, l) in all_series.iter().zip(all_labels) {
        ensure(s.len() == l.len(), || {
            format!("video {}: {} scores but {} labels", s.video_id, s.len(), l.len())
        })?;
        ensure(s.scores.iter().all(|v| !v.is_nan()), || format!("video {}: NaN score", s.video_id))?;
        pairs.extend(s.scores.iter().copied().zip(l.iter().map(|&y| y != 0)));
    }
    auc(&mut pairs)
}

fn auc(pairs: &mut [(f64, bool)]) -> Result<f64> {
    let pos = pairs.iter().filter(|p| p.1).count() as f64;
    let neg = pairs.len() as f64 - pos;
    if pos == 0.0 {
        return Err(Error::UndefinedAuc("negative"));
    }
    if neg == 0.0 {
        return Err(Error::UndefinedAuc("positive"));
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    // Threshold sweep from the highest score down, one ROC point per distinct score.
    let (mut tp, mut fp, mut area) = (0.0, 0.0, 0.0);
    let mut i = 0;
    while i < pairs.len() {
        let (tp0, fp0) = (tp, fp);
        let score = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == score {
            if pairs[i].1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        area += (fp - fp0) * (tp + tp0) / 2.0;
    }
    Ok(area / (pos * neg))
}

/// One line of `{dataset, auc, n_frames, n_videos}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    pub dataset: String,
    pub auc: f64,
    pub n_frames: usize,
    pub n_videos: usize,
}

impl AucReport {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

pub fn write_scores_csv(path: &Path, raw: &[FrameScoreSeries], final_: &[FrameScoreSeries]) -> Result<()> {
    ensure(raw.len() == final_.len(), || "raw and final score lists differ in length".into())?;
    let mut s = String::from(SCORES_CSV_HEADER);
    s.push('\n');
    for (r, f) in raw.iter().zip(final_) {
        ensure(r.video_id == f.video_id && r.len() == f.len(), || {
            format!("raw/final mismatch for video {}", r.video_id)
        })?;
        for (t, (a, b)) in r.scores.iter().zip(&f.scores).enumerate() {
            writeln!(s, "{},{t},{a:e},{b:e}", r.video_id).unwrap();
        }
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Reads a score CSV back into `(raw, final)` series, in file order of videos.
pub fn read_scores_csv(path: &Path) -> Result<(Vec<FrameScoreSeries>, Vec<FrameScoreSeries>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == SCORES_CSV_HEADER => {}
        _ => return Err(parse_err(1, format!("expected header `{SCORES_CSV_HEADER}`"))),
    }
    let (mut raw, mut fin): (Vec<FrameScoreSeries>, Vec<FrameScoreSeries>) = (Vec::new(), Vec::new());
    for (i, line) in lines.filter(|(_, l)| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(parse_err(i + 1, format!("expected 4 fields, got {}", f.len())));
        }
        let frame: usize = f[1].parse().map_err(|e: std::num::ParseIntError| parse_err(i + 1, e.to_string()))?;
        let a: f64 = f[2].parse().map_err(|e: std::num::ParseFloatError| parse_err(i + 1, e.to_string()))?;
        let b: f64 = f[3].parse().map_err(|e: std::num::ParseFloatError| parse_err(i + 1, e.to_string()))?;
        if raw.last().is_none_or(|s| s.video_id != f[0]) {
            raw.push(FrameScoreSeries::new(f[0], Vec::new()));
            fin.push(FrameScoreSeries {
                normalized: true,
                smoothed: true,
                ..FrameScoreSeries::new(f[0], Vec::new())
            });
        }
        let (r, s) = (raw.last_mut().unwrap(), fin.last_mut().unwrap());
        if frame != r.len() {
            return Err(parse_err(i + 1, format!("expected frame {}, got {frame}", r.len())));
        }
        r.scores.push(a);
        s.scores.push(b);
    }
    Ok((raw, fin))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn series(v: &[f64]) -> FrameScoreSeries {
        FrameScoreSeries::new("v", v.to_vec())
    }

    fn mann_whitney(scores: &[f64], labels: &[u8]) -> f64 {
        let (mut num, mut pairs) = (0.0, 0.0);
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    num += if si > sj {
                        1.0
                    } else if si == sj {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / pairs
    }

    #[test]
    fn frame_max_and_empty_frames() {
        let s = frame_scores("v", &[(0, 0.1), (0, 0.7), (2, 0.3)], 3).unwrap();
        assert_eq!(s.scores, vec![0.7, 0.0, 0.3]);
        assert!(frame_scores("v", &[(3, 0.1)], 3).is_err());
    }

    #[test]
    fn min_max_normalization() {
        let n = normalize_per_video(&series(&[0.2, 0.4, 0.6]));
        for (got, want) in n.scores.iter().zip([0.0, 0.5, 1.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(n.normalized);
        assert_eq!(normalize_per_video(&series(&[0.3; 4])).scores, vec![0.0; 4]);
    }

    #[test]
    fn smoothing_preserves_constants() {
        let s = gaussian_smooth(&series(&[0.37; 57]), 10.0).unwrap();
        assert!(s.scores.iter().all(|v| (v - 0.37).abs() < 1e-12));
    }

    #[test]
    fn impulse_reproduces_kernel() {
        let mut x = vec![0.0; 201];
        x[100] = 1.0;
        let s = gaussian_smooth(&series(&x), 10.0).unwrap();
        let peak = 1.0 / (10.0 * (2.0 * std::f64::consts::PI).sqrt());
        assert!((s.scores[100] - peak).abs() < 1e-4);
        let k = gaussian_kernel(10.0);
        assert_eq!(k.len(), 81);
        for (j, w) in k.iter().enumerate() {
            assert!((s.scores[60 + j] - w).abs() < 1e-15);
        }
    }

    #[test]
    fn reflect_mode() {
        let idx: Vec<usize> = (-3..7).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(idx, vec![2, 1, 0, 0, 1, 2, 3, 3, 2, 1]);
        assert_eq!(reflect_index(-9, 2), 0);
        assert_eq!(reflect_index(5, 2), 1);
    }

    #[test]
    fn auc_basics() {
        assert_eq!(frame_level_auc(&[series(&[0.9, 0.1])], &[vec![1, 0]]).unwrap(), 1.0);
        assert_eq!(frame_level_auc(&[series(&[0.4; 4])], &[vec![1, 0, 1, 0]]).unwrap(), 0.5);
        assert!(matches!(
            frame_level_auc(&[series(&[0.1, 0.2])], &[vec![0, 0]]),
            Err(Error::UndefinedAuc(_))
        ));
    }

    #[test]
    fn auc_matches_pair_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = rng.random_range(2..300);
            // Coarse scores so that ties occur.
            let scores: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * 20.0).floor()).collect();
            let mut labels: Vec<u8> = (0..n).map(|_| rng.random_bool(0.3) as u8).collect();
            labels[0] = 1;
            labels[1] = 0;
            let got = frame_level_auc(&[series(&scores)], &[labels.clone()]).unwrap();
            assert!((got - mann_whitney(&scores, &labels)).abs() < 1e-9);
        }
    }

    #[test]
    fn scores_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let raw = vec![series(&[0.1, 0.5]), FrameScoreSeries::new("w", vec![0.25])];
        let fin: Vec<_> = raw.iter().map(|s| post_process(s, 2.0).unwrap()).collect();
        write_scores_csv(&path, &raw, &fin).unwrap();
        let (r, f) = read_scores_csv(&path).unwrap();
        assert_eq!(r[0].scores, raw[0].scores);
        assert_eq!(r[1].video_id, "w");
        assert_eq!(f[0].scores, fin[0].scores);
    }

    proptest! {
        #[test]
        fn smoothing_stays_within_input_range(x in prop::collection::vec(-5.0f64..5.0, 1..120), sigma in 0.5f64..15.0) {
            let s = gaussian_smooth(&series(&x), sigma).unwrap();
            let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(s.scores.iter().all(|v| *v >= lo - 1e-12 && *v <= hi + 1e-12));
        }

        #[test]
        fn auc_invariant_under_monotone_transform(x in prop::collection::vec(0.0f64..1.0, 4..80)) {
            let labels: Vec<u8> = (0..x.len()).map(|i| (i % 3 == 0) as u8).collect();
            let y: Vec<f64> = x.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
            let a = frame_level_auc(&[series(&x)], &[labels.clone()]).unwrap();
            let b = frame_level_auc(&[series(&y)], &[labels]).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
