//! End-to-end stages: synth → train-gardin → train-alrec → score → eval,
//! plus the loss/distance ablation. Each stage reads its inputs from the
//! dataset root or the run directory, writes its artifacts and a manifest,
//! and fails with [`Error::MissingArtifact`] when an upstream stage has not
//! run.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::alrec::{self, ClassifierModel};
use crate::config::RunConfig;
use crate::dataset::synth::{generate_synthetic_dataset, SynthLog};
use crate::dataset::{
    list_videos, load_detections, load_labels, load_video, training_pair_stream, video_region_pairs, RegionPair,
    DETECTIONS_FILE, LABELS_FILE, TEST_SPLIT, TRAIN_SPLIT,
};
use crate::error::{Error, Result};
use crate::gardin::{self, images_to_tensor, tensor_to_images, GardinModel, GardinTrainReport, LossTerm, LossTerms};
use crate::imaging::{DistancePart, DistanceParts, GrayImage};
use crate::pmsre::{pmsre, write_pmsre_csv, PmsreRecord, PmsreVector};
use crate::rng::{streams, substream_seed};
use crate::scoring::{self, frame_level_auc, post_process, AucReport, FrameScoreSeries};

pub const GARDIN_CHECKPOINT: &str = "gardin.ckpt";
pub const GARDIN_LOG: &str = "gardin_log.csv";
pub const GARDIN_PROBE: &str = "gardin_probe.json";
pub const ALREC_CHECKPOINT: &str = "alrec.ckpt";
pub const ALREC_LOG: &str = "alrec_log.csv";
pub const PMSRE_TRAIN: &str = "pmsre_train.csv";
pub const PMSRE_TEST: &str = "pmsre_test.csv";
pub const SCORES: &str = "scores.csv";
pub const AUC_REPORT: &str = "auc.json";
pub const ABLATION_TABLE: &str = "ablation.md";
pub const ABLATION_CSV: &str = "ablation.csv";

const INFERENCE_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Provenance record written next to every stage's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub config: RunConfig,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn file_digest(path: &Path) -> Result<FileDigest> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(FileDigest {
        path: path.to_path_buf(),
        sha256: hex::encode(Sha256::digest(bytes)),
    })
}

pub fn manifest_path(dir: &Path, stage: &str) -> PathBuf {
    dir.join(format!("manifest-{stage}.json"))
}

fn write_manifest(dir: &Path, stage: &str, cfg: &RunConfig, inputs: &[PathBuf], outputs: &[PathBuf]) -> Result<()> {
    let digests = |paths: &[PathBuf]| paths.iter().map(|p| file_digest(p)).collect::<Result<Vec<_>>>();
    let manifest = Manifest {
        stage: stage.to_owned(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION").to_owned(),
        config: cfg.clone(),
        inputs: digests(inputs)?,
        outputs: digests(outputs)?,
    };
    let path = manifest_path(dir, stage);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

fn require(path: PathBuf, stage: &str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact {
            stage: stage.to_owned(),
            path,
        })
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn split_dir(cfg: &RunConfig, split: &str) -> Result<PathBuf> {
    require(cfg.dataset.join(split), "synth")
}

/// Writes the synthetic dataset to `cfg.dataset`. A non-empty target is
/// refused unless `force`, in which case it is replaced.
pub fn synth(cfg: &RunConfig, force: bool) -> Result<SynthLog> {
    let root = &cfg.dataset;
    if root.exists() {
        let non_empty = fs::read_dir(root).map_err(|e| Error::io(root, e))?.next().is_some();
        if non_empty && !force {
            return Err(Error::Config(format!(
                "{} exists and is not empty; pass --force to overwrite",
                root.display()
            )));
        }
        if non_empty {
            fs::remove_dir_all(root).map_err(|e| Error::io(root, e))?;
        }
    }
    create_dir(root)?;
    let log = generate_synthetic_dataset(root, &cfg.synth, cfg.seed)?;
    let mut outputs = vec![root.join(crate::dataset::synth::EVENTS_FILE)];
    for split in [TRAIN_SPLIT, TEST_SPLIT] {
        for id in list_videos(root, split)? {
            outputs.push(root.join(split).join(&id).join(DETECTIONS_FILE));
            outputs.push(root.join(split).join(&id).join(LABELS_FILE));
        }
    }
    write_manifest(root, "synth", cfg, &[], &outputs)?;
    Ok(log)
}

/// Probe-batch `L_GAC` before and after GARDiN training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    /// Training region pairs seen per epoch.
    pub pairs: usize,
    pub probe_size: usize,
    pub initial_probe_gac: f64,
    pub final_probe_gac: f64,
}

pub fn train_gardin(cfg: &RunConfig) -> Result<(GardinModel, GardinTrainReport)> {
    split_dir(cfg, TRAIN_SPLIT)?;
    create_dir(&cfg.out)?;
    let mut stream = training_pair_stream(&cfg.dataset, &cfg.sampling, substream_seed(cfg.seed, streams::DATA_SHUFFLE))?;
    log::info!("train-gardin: {} region pairs", stream.len());
    let (model, report) = gardin::train_gardin(&mut stream, &cfg.gardin, substream_seed(cfg.seed, "gardin"))?;
    let ckpt = cfg.out.join(GARDIN_CHECKPOINT);
    let log_path = cfg.out.join(GARDIN_LOG);
    let probe_path = cfg.out.join(GARDIN_PROBE);
    gardin::save_model(&model, &ckpt)?;
    write_text(&log_path, &report.to_csv())?;
    let probe = ProbeSummary {
        pairs: stream.len(),
        probe_size: cfg.gardin.probe_size.min(stream.len()),
        initial_probe_gac: report.initial_probe_gac,
        final_probe_gac: report.epochs.last().map_or(report.initial_probe_gac, |e| e.probe_gac),
    };
    write_text(&probe_path, &serde_json::to_string_pretty(&probe).expect("summary serializes"))?;
    write_manifest(&cfg.out, "train-gardin", cfg, &[], &[ckpt, log_path, probe_path])?;
    Ok((model, report))
}

fn load_gardin(cfg: &RunConfig) -> Result<(GardinModel, PathBuf)> {
    let path = require(cfg.out.join(GARDIN_CHECKPOINT), "train-gardin")?;
    let model = gardin::load_model_with_specs(&path, &cfg.gardin.generator, &cfg.gardin.discriminator)?;
    Ok((model, path))
}

/// PMSRE vectors of region pairs, using `a* = G_A(s)` and `s* = G_S(a)`.
pub fn pmsre_vectors(model: &GardinModel, pairs: &[&RegionPair]) -> Result<Vec<PmsreVector>> {
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(INFERENCE_BATCH) {
        let a: Vec<&GrayImage> = chunk.iter().map(|p| &p.appearance).collect();
        let s: Vec<&GrayImage> = chunk.iter().map(|p| &p.past_gradient).collect();
        let s_star = tensor_to_images(&model.g_s.predict(&images_to_tensor(&a)?)?)?;
        let a_star = tensor_to_images(&model.g_a.predict(&images_to_tensor(&s)?)?)?;
        for (i, p) in chunk.iter().enumerate() {
            out.push(pmsre(&p.appearance, &a_star[i], &p.past_gradient, &s_star[i])?);
        }
    }
    Ok(out)
}

pub fn train_alrec(cfg: &RunConfig) -> Result<(ClassifierModel, alrec::AlrecTrainReport)> {
    let (model, gardin_path) = load_gardin(cfg)?;
    let stream = training_pair_stream(&cfg.dataset, &cfg.sampling, 0)?;
    let pairs: Vec<&RegionPair> = stream.pairs().iter().collect();
    let e = pmsre_vectors(&model, &pairs)?;
    let mut records: Vec<PmsreRecord> = Vec::with_capacity(e.len());
    for (p, e) in pairs.iter().zip(&e) {
        // Index of the region within its frame.
        let region_idx = match records.last() {
            Some(r) if r.video_id == p.video_id && r.frame == p.frame_index => r.region_idx + 1,
            _ => 0,
        };
        records.push(PmsreRecord {
            video_id: p.video_id.clone(),
            frame: p.frame_index,
            region_idx,
            e: *e,
        });
    }
    let pmsre_path = cfg.out.join(PMSRE_TRAIN);
    write_pmsre_csv(&pmsre_path, &records)?;
    log::info!("train-alrec: {} PMSRE vectors", e.len());
    let (clf, report) = alrec::train_alrec(&e, &cfg.alrec, &cfg.focal, substream_seed(cfg.seed, "alrec"))?;
    let ckpt = cfg.out.join(ALREC_CHECKPOINT);
    let log_path = cfg.out.join(ALREC_LOG);
    alrec::save_model(&clf, &ckpt)?;
    write_text(&log_path, &report.to_csv())?;
    write_manifest(&cfg.out, "train-alrec", cfg, &[gardin_path], &[pmsre_path, ckpt, log_path])?;
    Ok((clf, report))
}

/// Raw and post-processed frame scores of every test video.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreOutput {
    pub raw: Vec<FrameScoreSeries>,
    pub final_: Vec<FrameScoreSeries>,
}

pub fn score(cfg: &RunConfig) -> Result<ScoreOutput> {
    let (model, gardin_path) = load_gardin(cfg)?;
    let alrec_path = require(cfg.out.join(ALREC_CHECKPOINT), "train-alrec")?;
    let clf = alrec::load_model(&alrec_path)?;
    let test_dir = split_dir(cfg, TEST_SPLIT)?;
    let mut records = Vec::new();
    let (mut raw, mut final_) = (Vec::new(), Vec::new());
    for id in list_videos(&cfg.dataset, TEST_SPLIT)? {
        let dir = test_dir.join(&id);
        let video = load_video(&dir, &id)?;
        let dets = load_detections(&dir.join(DETECTIONS_FILE), cfg.sampling.min_confidence)?;
        let pairs = video_region_pairs(&video, &dets, &cfg.sampling)?;
        let refs: Vec<&RegionPair> = pairs.iter().map(|(_, p)| p).collect();
        let e = pmsre_vectors(&model, &refs)?;
        let probs = clf.discriminate(&e)?;
        let region_scores: Vec<(usize, f64)> = refs.iter().zip(&probs).map(|(p, d)| (p.frame_index, 1.0 - d)).collect();
        records.extend(pairs.iter().zip(&e).map(|((i, p), e)| PmsreRecord {
            video_id: id.clone(),
            frame: p.frame_index,
            region_idx: *i,
            e: *e,
        }));
        let series = scoring::frame_scores(&id, &region_scores, video.frame_count())?;
        final_.push(post_process(&series, cfg.scoring.sigma)?);
        raw.push(series);
    }
    let pmsre_path = cfg.out.join(PMSRE_TEST);
    let scores_path = cfg.out.join(SCORES);
    write_pmsre_csv(&pmsre_path, &records)?;
    scoring::write_scores_csv(&scores_path, &raw, &final_)?;
    write_manifest(&cfg.out, "score", cfg, &[gardin_path, alrec_path], &[pmsre_path, scores_path])?;
    Ok(ScoreOutput { raw, final_ })
}

pub fn eval(cfg: &RunConfig) -> Result<AucReport> {
    let scores_path = require(cfg.out.join(SCORES), "score")?;
    let (_, final_) = scoring::read_scores_csv(&scores_path)?;
    let test_dir = split_dir(cfg, TEST_SPLIT)?;
    let mut labels = Vec::with_capacity(final_.len());
    let mut inputs = vec![scores_path];
    for s in &final_ {
        let path = require(test_dir.join(&s.video_id).join(LABELS_FILE), "synth")?;
        labels.push(load_labels(&path)?);
        inputs.push(path);
    }
    let auc = frame_level_auc(&final_, &labels)?;
    let report = AucReport {
        dataset: cfg.dataset_name.clone(),
        auc,
        n_frames: final_.iter().map(|s| s.len()).sum(),
        n_videos: final_.len(),
    };
    let path = cfg.out.join(AUC_REPORT);
    write_text(&path, &format!("{}\n", report.to_json_line()))?;
    write_manifest(&cfg.out, "eval", cfg, &inputs, &[path])?;
    Ok(report)
}

/// train-gardin → train-alrec → score → eval on an existing dataset.
pub fn run_all(cfg: &RunConfig) -> Result<AucReport> {
    train_gardin(cfg)?;
    train_alrec(cfg)?;
    score(cfg)?;
    eval(cfg)
}

/// The seven distance combinations of the distance ablation, in column order.
pub fn ablation_distances() -> Vec<DistanceParts> {
    use DistancePart::*;
    [
        &[L1][..],
        &[L1, L2],
        &[Ss],
        &[Nr],
        &[L1, L2, Ss],
        &[L1, L2, Nr],
        &[L1, L2, Ss, Nr],
    ]
    .iter()
    .map(|p| DistanceParts::new(p.iter().copied()).expect("non-empty"))
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    /// Loss subsets trained with the L2 distance.
    pub losses: Vec<(LossTerms, f64)>,
    /// Distance combinations trained with all four losses.
    pub distances: Vec<(DistanceParts, f64)>,
}

impl AblationTable {
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("Loss subsets (distance l2)\n\n| loss | ");
        let cols = self.losses.len();
        s.push_str(&vec!["   "; cols].join(" | "));
        s.push_str(" |\n|---|");
        s.push_str(&"---|".repeat(cols));
        s.push('\n');
        for term in LossTerm::ALL {
            write!(s, "| {} |", term.name()).unwrap();
            for (l, _) in &self.losses {
                s.push_str(if l.contains(term) { " x |" } else { " - |" });
            }
            s.push('\n');
        }
        s.push_str("| AUC |");
        for (_, auc) in &self.losses {
            write!(s, " {:.1} |", auc * 100.0).unwrap();
        }
        s.push_str("\n\nDistance combinations (all losses)\n\n| distance | ");
        let cols = self.distances.len();
        s.push_str(&vec!["   "; cols].join(" | "));
        s.push_str(" |\n|---|");
        s.push_str(&"---|".repeat(cols));
        s.push('\n');
        for part in DistancePart::ALL {
            write!(s, "| {} |", part.name()).unwrap();
            for (d, _) in &self.distances {
                s.push_str(if d.contains(part) { " x |" } else { " - |" });
            }
            s.push('\n');
        }
        s.push_str("| AUC |");
        for (_, auc) in &self.distances {
            write!(s, " {:.1} |", auc * 100.0).unwrap();
        }
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("axis,setting,auc\n");
        for (l, auc) in &self.losses {
            writeln!(s, "losses,{l},{auc:e}").unwrap();
        }
        for (d, auc) in &self.distances {
            writeln!(s, "distance,{d},{auc:e}").unwrap();
        }
        s
    }
}

/// Runs the full training pipeline once per ablation setting, each in its own
/// subdirectory of `cfg.out/ablate`, and writes the two tables.
pub fn ablate(cfg: &RunConfig) -> Result<AblationTable> {
    split_dir(cfg, TRAIN_SPLIT)?;
    let root = cfg.out.join("ablate");
    let run = |name: String, losses: LossTerms, distance: DistanceParts| -> Result<f64> {
        let mut sub = cfg.clone();
        sub.out = root.join(name);
        sub.gardin.losses = losses;
        sub.gardin.distance = distance;
        let report = run_all(&sub)?;
        log::info!("ablate {}: AUC {:.4}", sub.out.display(), report.auc);
        Ok(report.auc)
    };
    let l2 = DistanceParts::new([DistancePart::L2]).expect("non-empty");
    let mut table = AblationTable {
        losses: Vec::new(),
        distances: Vec::new(),
    };
    for losses in LossTerms::ablation_ladder() {
        let auc = run(format!("losses_{}", losses.to_string().replace('+', "_")), losses.clone(), l2.clone())?;
        table.losses.push((losses, auc));
    }
    for distance in ablation_distances() {
        let auc = run(format!("distance_{}", distance.to_string().replace('+', "_")), LossTerms::default(), distance.clone())?;
        table.distances.push((distance, auc));
    }
    create_dir(&cfg.out)?;
    let md = cfg.out.join(ABLATION_TABLE);
    let csv = cfg.out.join(ABLATION_CSV);
    write_text(&md, &table.to_markdown())?;
    write_text(&csv, &table.to_csv())?;
    write_manifest(&cfg.out, "ablate", cfg, &[], &[md, csv])?;
    Ok(table)
}
