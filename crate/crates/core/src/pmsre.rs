//! Partial mean-squared reconstruction errors: blockwise MSE on a 2×2 grid,
//! interleaved across the appearance and gradient domains.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::imaging::GrayImage;

pub const PMSRE_LEN: usize = 8;
pub const PMSRE_CSV_HEADER: &str = "video_id,frame,region_idx,e1a,e1s,e2a,e2s,e3a,e3s,e4a,e4s";

/// `[e1(a,a*), e1(s,s*), e2(a,a*), e2(s,s*), ..., e4(s,s*)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PmsreVector(pub [f64; PMSRE_LEN]);

impl PmsreVector {
    pub fn from_slice(values: &[f64]) -> Result<Self> {
        ensure(values.len() == PMSRE_LEN, || {
            format!("PMSRE vector needs {PMSRE_LEN} components, got {}", values.len())
        })?;
        let mut e = [0.0; PMSRE_LEN];
        e.copy_from_slice(values);
        ensure(e.iter().all(|v| v.is_finite() && *v >= 0.0), || "PMSRE components must be finite and >= 0".into())?;
        Ok(Self(e))
    }

    pub fn as_array(&self) -> &[f64; PMSRE_LEN] {
        &self.0
    }
}

/// MSE over block `k` (1-based, row-major: 1 top-left, 2 top-right, 3
/// bottom-left, 4 bottom-right) of a 2×2 grid splitting both images in half.
pub fn block_mse(real: &GrayImage, gen: &GrayImage, k: usize) -> Result<f64> {
    ensure((1..=4).contains(&k), || format!("block index must be in 1..=4, got {k}"))?;
    ensure(real.height() == gen.height() && real.width() == gen.width(), || {
        format!(
            "shape mismatch: {}x{} vs {}x{}",
            real.height(),
            real.width(),
            gen.height(),
            gen.width()
        )
    })?;
    let (h, w) = (real.height(), real.width());
    ensure(h % 2 == 0 && w % 2 == 0, || format!("image size {h}x{w} does not split into 2x2 blocks"))?;
    let (bh, bw) = (h / 2, w / 2);
    let (y0, x0) = (((k - 1) / 2) * bh, ((k - 1) % 2) * bw);
    let mut sum = 0.0;
    for y in y0..y0 + bh {
        let r = &real.data()[y * w + x0..y * w + x0 + bw];
        let g = &gen.data()[y * w + x0..y * w + x0 + bw];
        sum += r.iter().zip(g).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(sum / (bh * bw) as f64)
}

pub fn pmsre(a: &GrayImage, a_star: &GrayImage, s: &GrayImage, s_star: &GrayImage) -> Result<PmsreVector> {
    let mut e = [0.0; PMSRE_LEN];
    for k in 1..=4 {
        e[2 * (k - 1)] = block_mse(a, a_star, k)?;
        e[2 * (k - 1) + 1] = block_mse(s, s_star, k)?;
    }
    Ok(PmsreVector(e))
}

/// One row of the PMSRE export.
#[derive(Debug, Clone, PartialEq)]
pub struct PmsreRecord {
    pub video_id: String,
    pub frame: usize,
    pub region_idx: usize,
    pub e: PmsreVector,
}

pub fn write_pmsre_csv(path: &Path, records: &[PmsreRecord]) -> Result<()> {
    let mut s = String::from(PMSRE_CSV_HEADER);
    s.push('\n');
    for r in records {
        write!(s, "{},{},{}", r.video_id, r.frame, r.region_idx).unwrap();
        for v in r.e.0 {
            write!(s, ",{v:e}").unwrap();
        }
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_pmsre_csv(path: &Path) -> Result<Vec<PmsreRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == PMSRE_CSV_HEADER => {}
        _ => return Err(parse_err(1, format!("expected header `{PMSRE_CSV_HEADER}`"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines.filter(|(_, l)| !l.is_empty()) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 + PMSRE_LEN {
            return Err(parse_err(i + 1, format!("expected {} fields, got {}", 3 + PMSRE_LEN, fields.len())));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|e| parse_err(i + 1, e.to_string()));
        let e: Vec<f64> = fields[3..]
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| parse_err(i + 1, e.to_string())))
            .collect::<Result<_>>()?;
        out.push(PmsreRecord {
            video_id: fields[0].to_owned(),
            frame: num(fields[1])?,
            region_idx: num(fields[2])?,
            e: PmsreVector::from_slice(&e).map_err(|err| parse_err(i + 1, err.to_string()))?,
        });
    }
    Ok(out)
}
