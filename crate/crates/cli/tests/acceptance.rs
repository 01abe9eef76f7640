//! Acceptance suite. Each criterion prints one PASS/FAIL line; the test fails
//! if any criterion fails. Run with
//! `cargo test -p ocvad-cli --test acceptance -- --nocapture`.
//!
//! Criteria run one after another inside a single test so that the timed
//! end-to-end runs do not compete with the property checks for the CPU.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use ocvad_core::alrec::{focal_loss, ClassifierModel, ClassifierSpec, FocalLossParams};
use ocvad_core::gardin::{images_to_tensor, tensor_to_images, DiscriminatorSpec, GardinModel, GeneratorSpec};
use ocvad_core::imaging::{distance, distance_with_grad, ssim, DistancePart, DistanceParts, GrayImage};
use ocvad_core::pmsre::{pmsre, PmsreVector};
use ocvad_core::scoring::{frame_level_auc, gaussian_smooth, FrameScoreSeries};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> GrayImage {
    GrayImage::from_fn(h, w, |_, _| rng.random::<f64>()).unwrap()
}

// ---------------------------------------------------------------- 1

fn c1_pmsre() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let imgs: Vec<GrayImage> = (0..4).map(|_| random_image(&mut rng, 64, 64)).collect();
        let got = pmsre(&imgs[0], &imgs[1], &imgs[2], &imgs[3]).map_err(|e| e.to_string())?;
        // e_k = (1 / 32^2) * sum over block k of squared error, blocks in
        // row-major order, appearance and gradient errors interleaved.
        let mut blocks = [[0.0f64; 4]; 2];
        for (slot, (real, gen)) in [(&imgs[0], &imgs[1]), (&imgs[2], &imgs[3])].into_iter().enumerate() {
            for y in 0..64 {
                for x in 0..64 {
                    let d = real.get(y, x) - gen.get(y, x);
                    blocks[slot][(y / 32) * 2 + x / 32] += d * d;
                }
            }
        }
        for k in 0..4 {
            for slot in 0..2 {
                let want = blocks[slot][k] / (32.0 * 32.0);
                worst = worst.max((got.0[2 * k + slot] - want).abs());
            }
        }
    }
    let took = start.elapsed();
    ensure(worst <= 1e-12, || format!("max abs error {worst:e}"))?;
    ensure(took < Duration::from_secs(5), || format!("took {took:?}"))?;
    Ok(format!("max abs error {worst:e}, {:.2} s", took.as_secs_f64()))
}

// ---------------------------------------------------------------- 2

/// Mean SSIM over every full 11x11 window, each window evaluated on its own.
fn ssim_brute(x: &GrayImage, y: &GrayImage) -> f64 {
    const WIN: usize = 11;
    let sigma: f64 = 1.5;
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut w = [[0.0f64; WIN]; WIN];
    let mut total = 0.0;
    for (u, row) in w.iter_mut().enumerate() {
        for (v, cell) in row.iter_mut().enumerate() {
            let (du, dv) = (u as f64 - 5.0, v as f64 - 5.0);
            *cell = (-(du * du + dv * dv) / (2.0 * sigma * sigma)).exp();
            total += *cell;
        }
    }
    let mut sum = 0.0;
    let mut count = 0;
    for oy in 0..=x.height() - WIN {
        for ox in 0..=x.width() - WIN {
            let at = |img: &GrayImage, u: usize, v: usize| img.get(oy + u, ox + v);
            let (mut mx, mut my) = (0.0, 0.0);
            for u in 0..WIN {
                for v in 0..WIN {
                    let k = w[u][v] / total;
                    mx += k * at(x, u, v);
                    my += k * at(y, u, v);
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for u in 0..WIN {
                for v in 0..WIN {
                    let k = w[u][v] / total;
                    let (dx, dy) = (at(x, u, v) - mx, at(y, u, v) - my);
                    vx += k * dx * dx;
                    vy += k * dy * dy;
                    cxy += k * dx * dy;
                }
            }
            sum += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    sum / count as f64
}

fn c2_ssim() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut self_worst = 0.0f64;
    for _ in 0..20 {
        let a = random_image(&mut rng, 16, 16);
        let b = random_image(&mut rng, 16, 16);
        let got = ssim(&a, &b).map_err(|e| e.to_string())?;
        worst = worst.max((got - ssim_brute(&a, &b)).abs());
        self_worst = self_worst.max((ssim(&a, &a).map_err(|e| e.to_string())? - 1.0).abs());
    }
    ensure(worst <= 1e-7, || format!("max abs error vs brute force {worst:e}"))?;
    ensure(self_worst <= 1e-9, || format!("|ssim(I,I) - 1| up to {self_worst:e}"))?;
    Ok(format!("max abs error {worst:e}, |ssim(I,I) - 1| <= {self_worst:e}"))
}

// ---------------------------------------------------------------- 3

fn every_subset() -> Vec<DistanceParts> {
    (1u32..16)
        .map(|mask| {
            let parts = DistancePart::ALL.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, p)| *p);
            DistanceParts::new(parts).unwrap()
        })
        .collect()
}

fn c3_distance() -> Check {
    let subsets = every_subset();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut self_worst = 0.0f64;
    let mut sym_worst = 0.0f64;
    let err = |e: ocvad_core::Error| e.to_string();
    for _ in 0..100 {
        let a = random_image(&mut rng, 64, 64);
        let b = random_image(&mut rng, 64, 64);
        for parts in &subsets {
            self_worst = self_worst.max(distance(&a, &a, parts).map_err(err)?.abs());
            let ab = distance(&a, &b, parts).map_err(err)?;
            let ba = distance(&b, &a, parts).map_err(err)?;
            sym_worst = sym_worst.max((ab - ba).abs());
        }
    }
    ensure(self_worst <= 1e-9, || format!("d(I,I) up to {self_worst:e}"))?;
    ensure(sym_worst <= 1e-12, || format!("asymmetry up to {sym_worst:e}"))?;
    let zero = GrayImage::filled(64, 64, 0.0).unwrap();
    let half = GrayImage::filled(64, 64, 0.5).unwrap();
    let l1 = distance(&zero, &half, &DistanceParts::new([DistancePart::L1]).unwrap()).map_err(err)?;
    let l2 = distance(&zero, &half, &DistanceParts::new([DistancePart::L2]).unwrap()).map_err(err)?;
    ensure(l1 == 0.5, || format!("constant L1 gave {l1:e}"))?;
    ensure(l2 == 0.0078125, || format!("constant L2 gave {l2:e}"))?;
    Ok(format!(
        "{} subsets, d(I,I) <= {self_worst:e}, asymmetry <= {sym_worst:e}, constants {l1} and {l2}",
        subsets.len()
    ))
}

// ---------------------------------------------------------------- 4

fn c4_focal() -> Check {
    let defaults = FocalLossParams { alpha: 0.1, gamma: 10.0 };
    let half = focal_loss(0.5, &defaults);
    ensure((half - 6.769e-5).abs() <= 1e-9, || format!("FL(0.5) = {half:e}"))?;
    let ce = FocalLossParams { alpha: 1.0, gamma: 0.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        // Stay inside the probability clamp so that -ln p is the exact target.
        let p = rng.random_range(1e-6..1.0 - 1e-6);
        worst = worst.max((focal_loss(p, &ce) + f64::ln(p)).abs());
    }
    ensure(worst <= 1e-9, || format!("cross-entropy reduction off by {worst:e}"))?;
    Ok(format!("FL(0.5) = {half:.6e}, cross-entropy reduction within {worst:e}"))
}

// ---------------------------------------------------------------- 5

fn c5_contracts() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let err = |e: ocvad_core::Error| e.to_string();
    let in_open_unit = |v: f64| v > 0.0 && v < 1.0;
    let mut checked = 0usize;
    for seed in 0..3u64 {
        let model = GardinModel::new(GeneratorSpec::default(), DiscriminatorSpec::default(), 100 + seed).map_err(err)?;
        let mut imgs: Vec<GrayImage> = (0..3).map(|_| random_image(&mut rng, 64, 64)).collect();
        imgs.push(GrayImage::filled(64, 64, 0.0).unwrap());
        imgs.push(GrayImage::filled(64, 64, 1.0).unwrap());
        let batch = images_to_tensor(&imgs.iter().collect::<Vec<_>>()).map_err(err)?;
        for g in [&model.g_s, &model.g_a] {
            let out = g.predict(&batch).map_err(err)?;
            ensure((out.n(), out.h(), out.w(), out.c()) == (imgs.len(), 64, 64, 1), || {
                format!("generator output {}x{}x{}x{}", out.n(), out.h(), out.w(), out.c())
            })?;
            let outs = tensor_to_images(&out).map_err(err)?;
            ensure(outs.iter().all(|o| o.data().iter().all(|&v| in_open_unit(v))), || {
                "generator output outside (0,1)".into()
            })?;
            checked += out.data().len();
        }
        for d in [&model.d_s, &model.d_a] {
            let out = d.predict(&batch).map_err(err)?;
            ensure((out.n(), out.h(), out.w(), out.c()) == (imgs.len(), 4, 4, 1), || {
                format!("discriminator output {}x{}x{}x{}", out.n(), out.h(), out.w(), out.c())
            })?;
            ensure(out.data().iter().all(|&v| in_open_unit(v as f64)), || "discriminator output outside (0,1)".into())?;
            checked += out.data().len();
        }
        let clf = ClassifierModel::new(ClassifierSpec::default(), 200 + seed).map_err(err)?;
        let e: Vec<PmsreVector> = (0..64)
            .map(|_| PmsreVector(std::array::from_fn(|_| rng.random::<f64>())))
            .collect();
        let p = clf.discriminate(&e).map_err(err)?;
        ensure(p.len() == e.len(), || format!("{} probabilities for {} vectors", p.len(), e.len()))?;
        ensure(p.iter().all(|&v| in_open_unit(v)), || "ALREC output outside (0,1)".into())?;
        checked += p.len();
    }
    Ok(format!("3 weight draws, {checked} outputs in range"))
}

// ---------------------------------------------------------------- 6

fn c6_gradients() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut report = Vec::new();
    for part in [DistancePart::L1, DistancePart::L2, DistancePart::Ss] {
        let parts = DistanceParts::new([part]).unwrap();
        let target = random_image(&mut rng, 8, 8);
        // Keep every pixel clear of the L1 kink at zero difference.
        let gen = GrayImage::from_fn(8, 8, |y, x| {
            let t = target.get(y, x);
            let off = rng.random_range(0.05..0.3);
            if t < 0.5 {
                t + off
            } else {
                t - off
            }
        })
        .unwrap();
        let (_, analytic) = distance_with_grad(&gen, &target, &parts).map_err(|e| e.to_string())?;
        let h = 1e-6;
        let mut numeric = Vec::with_capacity(64);
        for i in 0..64 {
            let bump = |delta: f64| {
                let mut d = gen.data().to_vec();
                d[i] += delta;
                distance(&GrayImage::new(8, 8, d).unwrap(), &target, &parts).unwrap()
            };
            numeric.push((bump(h) - bump(-h)) / (2.0 * h));
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
        let rel = norm(&diff) / norm(&numeric).max(norm(&analytic));
        ensure(rel <= 1e-4, || format!("{}: relative error {rel:e}", part.name()))?;
        report.push(format!("{} {rel:.1e}", part.name()));
    }
    Ok(format!("relative errors {}", report.join(", ")))
}

// ---------------------------------------------------------------- 7

fn mann_whitney(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn c7_auc() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let err = |e: ocvad_core::Error| e.to_string();
    let mut worst = 0.0f64;
    for inst in 0..50 {
        let videos = rng.random_range(1..=4usize);
        let total = rng.random_range(2..=1000usize);
        let mut lens = vec![total / videos; videos];
        lens[0] += total - lens.iter().sum::<usize>();
        // Half the instances draw scores from a few levels to exercise ties.
        let levels = if inst % 2 == 0 { Some(rng.random_range(2..6u32)) } else { None };
        let mut series = Vec::new();
        let mut labels = Vec::new();
        for (v, &n) in lens.iter().enumerate() {
            let s: Vec<f64> = (0..n)
                .map(|_| match levels {
                    Some(k) => rng.random_range(0..k) as f64,
                    None => rng.random::<f64>(),
                })
                .collect();
            let l: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.3))).collect();
            series.push(FrameScoreSeries::new(format!("{v:03}"), s));
            labels.push(l);
        }
        let flat_l: Vec<u8> = labels.concat();
        if !flat_l.contains(&0) || !flat_l.contains(&1) {
            labels[0][0] = 1 - labels[0][0];
            if lens[0] < 2 {
                continue;
            }
            labels[0][1] = 1 - labels[0][0];
        }
        let flat_s: Vec<f64> = series.iter().flat_map(|s| s.scores.clone()).collect();
        let got = frame_level_auc(&series, &labels).map_err(err)?;
        worst = worst.max((got - mann_whitney(&flat_s, &labels.concat())).abs());
    }
    ensure(worst <= 1e-9, || format!("max abs error vs Mann-Whitney {worst:e}"))?;
    let labels = vec![vec![0, 0, 1, 1, 0, 1]];
    let perfect = frame_level_auc(&[FrameScoreSeries::new("p", vec![0.1, 0.2, 0.8, 0.9, 0.3, 0.7])], &labels).map_err(err)?;
    let constant = frame_level_auc(&[FrameScoreSeries::new("c", vec![0.4; 6])], &labels).map_err(err)?;
    ensure(perfect == 1.0, || format!("perfect ranking gave {perfect}"))?;
    ensure(constant == 0.5, || format!("constant scores gave {constant}"))?;
    Ok(format!("max abs error {worst:e}, perfect {perfect}, constant {constant}"))
}

// ---------------------------------------------------------------- 8

/// Direct convolution with a Gaussian truncated at 4 sigma; out-of-range
/// samples are mirrored about the series ends (`dcba|abcd|dcba`).
fn smooth_direct(x: &[f64], sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma + 0.5).floor() as i64;
    let weights: Vec<f64> = (-radius..=radius).map(|j| (-(j * j) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = weights.iter().sum();
    let n = x.len() as i64;
    let mirror = |mut i: i64| {
        while i < 0 || i >= n {
            i = if i < 0 { -i - 1 } else { 2 * n - i - 1 };
        }
        i as usize
    };
    (0..n)
        .map(|t| {
            (-radius..=radius)
                .zip(&weights)
                .map(|(j, w)| w * x[mirror(t + j)])
                .sum::<f64>()
                / norm
        })
        .collect()
}

fn c8_smoothing() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let err = |e: ocvad_core::Error| e.to_string();
    let mut worst = 0.0f64;
    let mut flat_worst = 0.0f64;
    for &sigma in &[0.5, 1.0, 2.5, 10.0] {
        for &n in &[1usize, 5, 37, 300] {
            let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let got = gaussian_smooth(&FrameScoreSeries::new("v", x.clone()), sigma).map_err(err)?;
            for (a, b) in got.scores.iter().zip(smooth_direct(&x, sigma)) {
                worst = worst.max((a - b).abs());
            }
            let c = rng.random::<f64>();
            let flat = gaussian_smooth(&FrameScoreSeries::new("v", vec![c; n]), sigma).map_err(err)?;
            for v in &flat.scores {
                flat_worst = flat_worst.max((v - c).abs());
            }
        }
    }
    ensure(worst <= 1e-10, || format!("max abs error vs direct convolution {worst:e}"))?;
    ensure(flat_worst <= 1e-12, || format!("constant series drifted by {flat_worst:e}"))?;
    Ok(format!("max abs error {worst:e}, constant drift {flat_worst:e}"))
}

// ---------------------------------------------------------------- 9-11

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

fn ocvad(dir: &Path, args: &[&str]) -> std::result::Result<Duration, String> {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_ocvad"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "`ocvad {}` exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(start.elapsed())
}

/// Outcome of one desk-scale pipeline run in its own directory.
struct DeskRun {
    dir: tempfile::TempDir,
    gardin_time: Duration,
    total_time: Duration,
}

impl DeskRun {
    fn run_dir(&self) -> PathBuf {
        self.dir.path().join("runs/desk")
    }
}

fn desk_run() -> std::result::Result<DeskRun, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = repo_root().join("configs/desk.toml");
    let config = config.to_str().unwrap();
    let mut total = Duration::ZERO;
    let mut gardin_time = Duration::ZERO;
    for verb in ["synth", "train-gardin", "train-alrec", "score", "eval"] {
        let took = ocvad(dir.path(), &[verb, "--config", config])?;
        if verb == "train-gardin" {
            gardin_time = took;
        }
        total += took;
    }
    Ok(DeskRun {
        dir,
        gardin_time,
        total_time: total,
    })
}

fn read_json(path: &Path) -> std::result::Result<serde_json::Value, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn c9_training(run: &std::result::Result<DeskRun, String>) -> Check {
    let run = run.as_ref().map_err(Clone::clone)?;
    let probe = read_json(&run.run_dir().join("gardin_probe.json"))?;
    let pairs = probe["pairs"].as_u64().unwrap_or(0);
    let before = probe["initial_probe_gac"].as_f64().unwrap_or(f64::NAN);
    let after = probe["final_probe_gac"].as_f64().unwrap_or(f64::NAN);
    let log = fs::read_to_string(run.run_dir().join("gardin_log.csv")).map_err(|e| e.to_string())?;
    let rows: Vec<&str> = log.lines().skip(1).collect();
    let finite = rows
        .iter()
        .all(|r| r.split(',').all(|v| v.parse::<f64>().is_ok_and(f64::is_finite)));
    let drop = 1.0 - after / before;
    ensure(pairs >= 500, || format!("only {pairs} region pairs"))?;
    ensure(rows.len() == 20, || format!("{} epochs logged, expected 20", rows.len()))?;
    ensure(finite, || "non-finite value in the loss log".into())?;
    ensure(drop >= 0.2, || format!("probe L_GAC {before:.4} -> {after:.4}, drop {:.1}%", drop * 100.0))?;
    ensure(run.gardin_time <= Duration::from_secs(15 * 60), || format!("took {:?}", run.gardin_time))?;
    Ok(format!(
        "{pairs} pairs, probe L_GAC {before:.4} -> {after:.4} ({:.1}% drop), {:.0} s",
        drop * 100.0,
        run.gardin_time.as_secs_f64()
    ))
}

fn c10_end_to_end(run: &std::result::Result<DeskRun, String>) -> Check {
    let run = run.as_ref().map_err(Clone::clone)?;
    let report = read_json(&run.run_dir().join("auc.json"))?;
    let auc = report["auc"].as_f64().unwrap_or(f64::NAN);
    let secs = run.total_time.as_secs_f64();
    ensure(auc >= 0.85, || format!("AUC {auc:.4} < 0.85 ({secs:.0} s)"))?;
    ensure(run.total_time <= Duration::from_secs(45 * 60), || format!("took {secs:.0} s"))?;
    Ok(format!("AUC {auc:.4} over {} frames, {secs:.0} s", report["n_frames"]))
}

const DETERMINISTIC_FILES: [&str; 7] = [
    "gardin_log.csv",
    "gardin_probe.json",
    "alrec_log.csv",
    "pmsre_train.csv",
    "pmsre_test.csv",
    "scores.csv",
    "auc.json",
];

fn c11_determinism(first: &std::result::Result<DeskRun, String>) -> Check {
    let first = first.as_ref().map_err(Clone::clone)?;
    let second = desk_run()?;
    for name in DETERMINISTIC_FILES {
        let a = fs::read(first.run_dir().join(name)).map_err(|e| format!("{name}: {e}"))?;
        let b = fs::read(second.run_dir().join(name)).map_err(|e| format!("{name}: {e}"))?;
        ensure(a == b, || format!("{name} differs between runs"))?;
    }
    Ok(format!("{} files bitwise identical across two runs", DETERMINISTIC_FILES.len()))
}

// ---------------------------------------------------------------- 12

/// Small enough that the eleven ablation trainings finish in a few minutes.
const ABLATION_CONFIG: &str = r#"
seed = 11
synth.width = 96
synth.height = 72
synth.train_videos = 2
synth.train_frames = 16
synth.test_videos = 2
synth.test_frames = 30
synth.sprites_per_video = 2
synth.anomaly_duration = 12
synth.sprite_size = [12.0, 16.0]
sampling.region_size = 16
gardin.epochs = 2
gardin.batch_size = 16
gardin.generator.image_size = 16
gardin.generator.encoder_filters = [8, 16, 16, 16]
gardin.generator.decoder_filters = [16, 16, 8, 1]
gardin.discriminator.image_size = 16
gardin.discriminator.filters = [8, 16]
alrec.epochs = 5
alrec.batch_size = 32
alrec.classifier.generator_hidden = [16, 16]
alrec.classifier.discriminator_hidden = [16, 16]
scoring.sigma = 3.0
"#;

fn c12_ablation() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    fs::write(dir.path().join("ablate.toml"), ABLATION_CONFIG).map_err(|e| e.to_string())?;
    ocvad(dir.path(), &["synth", "--config", "ablate.toml"])?;
    let took = ocvad(dir.path(), &["ablate", "--config", "ablate.toml"])?;
    let run = dir.path().join("runs/default");
    let csv = fs::read_to_string(run.join("ablation.csv")).map_err(|e| e.to_string())?;
    let mut losses = Vec::new();
    let mut distances = Vec::new();
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        ensure(f.len() == 3, || format!("malformed row `{line}`"))?;
        let auc: f64 = f[2].parse().map_err(|_| format!("bad AUC in `{line}`"))?;
        ensure((0.0..=1.0).contains(&auc), || format!("AUC out of range in `{line}`"))?;
        match f[0] {
            "losses" => losses.push(f[1].to_string()),
            "distance" => distances.push(f[1].to_string()),
            other => return Err(format!("unknown axis `{other}`")),
        }
    }
    let want_losses = ["as", "as+sa", "as+sa+a", "as+sa+a+s"];
    let want_distances = ["l1", "l1+l2", "ss", "nr", "l1+l2+ss", "l1+l2+nr", "l1+l2+ss+nr"];
    ensure(losses == want_losses, || format!("loss rows {losses:?}"))?;
    ensure(distances == want_distances, || format!("distance columns {distances:?}"))?;
    let md = fs::read_to_string(run.join("ablation.md")).map_err(|e| e.to_string())?;
    let auc_rows: Vec<&str> = md.lines().filter(|l| l.starts_with("| AUC |")).collect();
    ensure(auc_rows.len() == 2, || format!("{} AUC rows in the markdown", auc_rows.len()))?;
    let cells = |row: &str| row.matches('|').count() - 2;
    ensure(cells(auc_rows[0]) == 4 && cells(auc_rows[1]) == 7, || "markdown tables have the wrong width".into())?;
    Ok(format!("4 loss subsets x 7 distance combinations, {:.0} s", took.as_secs_f64()))
}

// ----------------------------------------------------------------

fn guarded(f: impl FnOnce() -> Check) -> Check {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

#[test]
fn acceptance() {
    let mut results: Vec<(u32, &str, Check)> = Vec::new();
    let mut record = |id: u32, name: &'static str, outcome: Check| {
        match &outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail}"),
            Err(detail) => println!("criterion {id:>2} FAIL  {name}: {detail}"),
        }
        results.push((id, name, outcome));
    };
    record(1, "PMSRE oracle equivalence", guarded(c1_pmsre));
    record(2, "SSIM oracle equivalence", guarded(c2_ssim));
    record(3, "distance identities", guarded(c3_distance));
    record(4, "focal-loss values", guarded(c4_focal));
    record(5, "shape and range contracts", guarded(c5_contracts));
    record(6, "loss-gradient check", guarded(c6_gradients));
    record(7, "AUC oracle", guarded(c7_auc));
    record(8, "smoothing oracle", guarded(c8_smoothing));
    let desk = catch_unwind(desk_run).unwrap_or_else(|_| Err("desk run panicked".into()));
    record(9, "training smoke test", guarded(|| c9_training(&desk)));
    record(10, "end-to-end synthetic regression", guarded(|| c10_end_to_end(&desk)));
    record(11, "determinism", guarded(|| c11_determinism(&desk)));
    record(12, "ablation harness", guarded(c12_ablation));

    let failed: Vec<u32> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    println!("acceptance: {} of {} criteria passed", results.len() - failed.len(), results.len());
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
