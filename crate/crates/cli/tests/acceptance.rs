//! Acceptance run: one PASS/FAIL line per criterion, each checked at its
//! stated tolerance. Exits nonzero on any FAIL only when
//! `LOOPGUARD_ACCEPTANCE_STRICT=1`; by default it reports and exits 0 so
//! the rest of the workspace test run still executes.

use std::path::Path;
use std::time::{Duration, Instant};

use loopguard::config::parse_config;
use loopguard::pipeline::ReportSummary;
use loopguard::store::{self, StoreError};
use loopguard::synth::write_fixture;
use loopguard::{run, Stage};
use loopguard_core::baselines::iforest::avg_path_c;
use loopguard_core::baselines::{Components, IsolationForest, IsolationForestConfig, PcaConfig, PcaModel};
use loopguard_core::evaluation::{classify, percentile_threshold, Label};
use loopguard_core::synthetic::{low_rank, SeparationFixture};
use loopguard_core::{
    grad_check, pretrain_autoencoder, split_dataset, AutoencoderModel, EmbeddingMatrix, EncoderSpec, Error,
    FormatError, GradCheck, Hyperparameters, Loss, Matrix, Mode, Rng, SampleManifest, Variant,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut checks = 0;
    for seed in 0..20u64 {
        for variant in [Variant::Ae, Variant::Aewres] {
            let spec = EncoderSpec {
                dims: vec![16, 8, 4],
                variant,
                allow_custom_latent: true,
                ..EncoderSpec::default()
            };
            let model = AutoencoderModel::build(&spec, seed).unwrap();
            let mut rng = Rng::new(1000 + seed);
            let x = Matrix::from_vec(6, 16, (0..96).map(|_| rng.normal()).collect()).unwrap();
            for mode in [Mode::Train, Mode::Eval] {
                let cfg = GradCheck {
                    mode,
                    seed,
                    max_params: None,
                    ..GradCheck::default()
                };
                let err = grad_check(&model, &Loss::Reconstruction, &x, &cfg).unwrap();
                worst = worst.max(err);
                checks += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-4 && elapsed < Duration::from_secs(10),
        format!(
            "max relative error {worst:.2e} over {checks} full checks at eps {:.0e} (20 seeds x AE/AEwRES x Train/Eval), {:.2} s; limits 1e-4, 10 s",
            GradCheck::default().eps,
            secs(elapsed)
        ),
    )
}

fn threshold_semantics() -> Outcome {
    let mut rng = Rng::new(2024);
    let mut scores: Vec<f64> = (0..1000).map(|_| rng.next_f64()).collect();
    scores.sort_by(f64::total_cmp);
    scores.dedup();
    let distinct = scores.len() == 1000;
    rng.shuffle(&mut scores);
    let t = percentile_threshold(&scores, 0.95).unwrap();
    let above = scores.iter().filter(|&&s| s > t).count();
    let fraction = above as f64 / scores.len() as f64;
    let at = classify(&[t], t)[0];
    outcome(
        distinct && fraction <= 0.05 && at == Label::Normal,
        format!("{above}/1000 strictly above threshold ({fraction}); classify(threshold) = {at:?}"),
    )
}

/// Right singular vectors (rows) and singular values of `rows`, descending,
/// by one-sided Jacobi rotations.
fn jacobi_svd(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = rows.len();
    let d = rows[0].len();
    let mut a: Vec<Vec<f64>> = (0..d).map(|j| (0..n).map(|i| rows[i][j]).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..d).map(|j| (0..d).map(|i| f64::from(u8::from(i == j))).collect()).collect();
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    for _ in 0..100 {
        let mut off = 0.0f64;
        for p in 0..d {
            for q in p + 1..d {
                let (alpha, beta, gamma) = (dot(&a[p], &a[p]), dot(&a[q], &a[q]), dot(&a[p], &a[q]));
                if gamma == 0.0 {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt().max(f64::MIN_POSITIVE));
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta == 0.0 {
                    1.0
                } else {
                    zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for cols in [&mut a, &mut v] {
                    for k in 0..cols[p].len() {
                        let (x, y) = (cols[p][k], cols[q][k]);
                        cols[p][k] = c * x - s * y;
                        cols[q][k] = s * x + c * y;
                    }
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    let mut order: Vec<(f64, usize)> = (0..d).map(|j| (dot(&a[j], &a[j]).sqrt(), j)).collect();
    order.sort_by(|x, y| y.0.total_cmp(&x.0));
    (order.iter().map(|o| o.0).collect(), order.iter().map(|o| v[o.1].clone()).collect())
}

/// Per-row squared reconstruction error with the top `k` right singular
/// vectors of the centered training rows; `k = None` picks the smallest
/// count whose cumulative share of squared singular values reaches 0.95.
fn svd_oracle(train: &[Vec<f64>], score: &[Vec<f64>], k: Option<usize>) -> (usize, Vec<f64>) {
    let d = train[0].len();
    let mean: Vec<f64> = (0..d)
        .map(|j| train.iter().map(|r| r[j]).sum::<f64>() / train.len() as f64)
        .collect();
    let centered: Vec<Vec<f64>> = train.iter().map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect()).collect();
    let (sigma, v) = jacobi_svd(&centered);
    let total: f64 = sigma.iter().map(|s| s * s).sum();
    let k = k.unwrap_or_else(|| {
        let mut cum = 0.0;
        sigma
            .iter()
            .position(|s| {
                cum += s * s / total;
                cum >= 0.95
            })
            .map_or(sigma.len(), |i| i + 1)
    });
    let errors = score
        .iter()
        .map(|row| {
            let c: Vec<f64> = row.iter().zip(&mean).map(|(x, m)| x - m).collect();
            let mut recon = vec![0.0; d];
            for vk in &v[..k] {
                let coef: f64 = c.iter().zip(vk).map(|(a, b)| a * b).sum();
                recon.iter_mut().zip(vk).for_each(|(r, b)| *r += coef * b);
            }
            c.iter().zip(&recon).map(|(x, y)| (x - y) * (x - y)).sum()
        })
        .collect();
    (k, errors)
}

fn pca_oracle_equivalence() -> Outcome {
    let mut worst = 0.0f64;
    let mut k_mismatch = 0;
    for m in 0..50u64 {
        let mut rng = Rng::new(500 + m);
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..10).map(|j| rng.normal() * (1.0 + j as f64)).collect())
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let count = 1 + (m as usize % 9);
        for n_components in [None, Some(count)] {
            let cfg = PcaConfig {
                n_components: n_components.map(Components::Count),
                ..PcaConfig::default()
            };
            let model = PcaModel::fit(&x, &cfg).unwrap();
            let (k, expected) = svd_oracle(&rows, &rows, n_components);
            if model.n_selected != k {
                k_mismatch += 1;
                continue;
            }
            let got = model.reconstruction_error(&x).unwrap();
            for (a, b) in got.iter().zip(&expected) {
                worst = worst.max((a - b).abs());
            }
        }
    }

    // minimal k on low-rank-plus-noise data
    let mut minimal = true;
    let mut picks = Vec::new();
    for (seed, rank) in [(1u64, 2usize), (2, 3), (3, 5)] {
        let x = low_rank(300, 20, rank, 0.05, seed).unwrap();
        let model = PcaModel::fit(&x, &PcaConfig::default()).unwrap();
        let rows: Vec<Vec<f64>> = x.iter_rows().map(<[f64]>::to_vec).collect();
        let (k, _) = svd_oracle(&rows, &rows[..1], None);
        let cum: Vec<f64> = model
            .explained_variance_ratio
            .iter()
            .scan(0.0, |c, r| {
                *c += r;
                Some(*c)
            })
            .collect();
        let kk = model.n_selected;
        let ok = kk == k && cum[kk - 1] >= 0.95 && (kk == 1 || cum[kk - 2] < 0.95);
        minimal &= ok;
        picks.push(format!("rank {rank}: k={kk}"));
    }
    outcome(
        worst <= 1e-6 && k_mismatch == 0 && minimal,
        format!(
            "100 fits on 50 random 50x10 matrices, max |error - oracle| {worst:.2e} (limit 1e-6), k mismatches {k_mismatch}; None branch minimal ({})",
            picks.join(", ")
        ),
    )
}

fn isolation_forest_sanity() -> Outcome {
    let mut hits = 0;
    for seed in 0..100u64 {
        let mut rng = Rng::new(70_000 + seed);
        let mut rows: Vec<Vec<f64>> = (0..100).map(|_| vec![rng.normal(), rng.normal()]).collect();
        let angle = rng.uniform(0.0, std::f64::consts::TAU);
        rows.push(vec![100.0 * angle.cos(), 100.0 * angle.sin()]);
        let x = Matrix::from_rows(&rows).unwrap();
        let forest = IsolationForest::fit(
            &x,
            &IsolationForestConfig {
                seed,
                ..IsolationForestConfig::default()
            },
        )
        .unwrap();
        let s = forest.score_rows(&x).unwrap();
        if s[..100].iter().all(|&v| v < s[100]) {
            hits += 1;
        }
    }
    let formula = |n: usize| match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => 2.0 * ((n as f64 - 1.0).ln() + 0.5772156649) - 2.0 * (n as f64 - 1.0) / n as f64,
    };
    let c_err = [1usize, 2, 256, 4096]
        .iter()
        .map(|&n| (avg_path_c(n) - formula(n)).abs())
        .fold(0.0, f64::max);
    outcome(
        hits == 100 && c_err <= 1e-9,
        format!("planted 100-sigma outlier ranked first in {hits}/100 runs; max |c(n) - formula| {c_err:.1e} at n in {{1, 2, 256, 4096}}"),
    )
}

/// 20-byte header with arbitrary field values.
fn header(magic: &[u8; 4], version: u32, count: u64, dim: u32) -> Vec<u8> {
    let mut h = magic.to_vec();
    h.extend(version.to_le_bytes());
    h.extend(count.to_le_bytes());
    h.extend(dim.to_le_bytes());
    h
}

fn format_round_trip() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("fuzz.emb1");
    let mut rng = Rng::new(77);
    let mut mismatches = 0;
    for case in 0..1000 {
        let rows = 1 + (rng.next_u64() % 100) as usize;
        let dim = 1 + (rng.next_u64() % 64) as usize;
        // raw bit patterns, keeping only finite ones, to cover subnormals,
        // signed zeros and extreme exponents
        let values: Vec<f32> = (0..rows * dim)
            .map(|_| loop {
                let v = f32::from_bits(rng.next_u64() as u32);
                if v.is_finite() {
                    break v;
                }
            })
            .collect();
        let m = EmbeddingMatrix::new(rows, dim, values).unwrap();
        let mut manifest = SampleManifest::numbered(rows);
        manifest.entries[0].tags.insert("case".into(), case.to_string());
        store::save_embeddings(&path, &m, &manifest).unwrap();
        let (m2, manifest2) = store::load_embeddings(&path).unwrap();
        let same_bits = m
            .as_slice()
            .iter()
            .zip(m2.as_slice())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        if !(same_bits && m2.rows() == rows && m2.dim() == dim && manifest2 == manifest) {
            mismatches += 1;
        }
    }

    let payload = |n: usize| vec![0u8; n * 4];
    let with = |mut h: Vec<u8>, p: Vec<u8>| {
        h.extend(p);
        h
    };
    type Check = fn(&FormatError) -> bool;
    let corrupt: Vec<(&str, Vec<u8>, Check)> = vec![
        ("wrong magic", with(header(b"XXXX", 1, 1, 2), payload(2)), |e| matches!(e, FormatError::BadMagic(_))),
        ("lowercase magic", with(header(b"emb1", 1, 1, 2), payload(2)), |e| matches!(e, FormatError::BadMagic(_))),
        ("version 0", with(header(b"EMB1", 0, 1, 2), payload(2)), |e| matches!(e, FormatError::UnsupportedVersion(0))),
        ("version 2", with(header(b"EMB1", 2, 1, 2), payload(2)), |e| matches!(e, FormatError::UnsupportedVersion(2))),
        ("short header", header(b"EMB1", 1, 1, 2)[..13].to_vec(), |e| matches!(e, FormatError::TruncatedHeader(13))),
        ("zero dim", header(b"EMB1", 1, 1, 0), |e| matches!(e, FormatError::ZeroDimension)),
        ("zero count", header(b"EMB1", 1, 0, 2), |e| matches!(e, FormatError::ZeroCount)),
        ("size overflow", with(header(b"EMB1", 1, u64::MAX / 2, 8), payload(2)), |e| matches!(e, FormatError::SizeOverflow)),
        ("count too large", with(header(b"EMB1", 1, 5, 4), payload(16)), |e| matches!(e, FormatError::Truncated { .. })),
        ("count too small", with(header(b"EMB1", 1, 2, 4), payload(16)), |e| matches!(e, FormatError::TrailingBytes { .. })),
    ];
    let mut rejected = Vec::new();
    let mut missed = Vec::new();
    for (name, bytes, expected) in &corrupt {
        std::fs::write(&path, bytes).unwrap();
        match store::load_embeddings(&path) {
            Err(StoreError::Core(Error::Format(e))) if expected(&e) => rejected.push(*name),
            other => missed.push(format!("{name}: {:?}", other.map(|r| r.0.rows()))),
        }
    }
    outcome(
        mismatches == 0 && missed.is_empty(),
        format!(
            "1000 fuzzed files (rows 1-100, dims 1-64) round-tripped with {mismatches} mismatches; {}/{} corrupted-header classes rejected{}",
            rejected.len(),
            corrupt.len(),
            if missed.is_empty() { String::new() } else { format!(" (missed: {})", missed.join("; ")) }
        ),
    )
}

fn pretraining_ratio(variant: Variant, data: &EmbeddingMatrix) -> (f64, usize) {
    let split = split_dataset(data.rows(), 0.8, 0).unwrap();
    let hp = Hyperparameters {
        max_epochs: 100,
        ..Hyperparameters::default()
    };
    let (_, history) = pretrain_autoencoder(data, &split, &EncoderSpec::with_variant(variant), &hp).unwrap();
    (history.best_val_loss().unwrap() / history.val_loss[0], history.epochs())
}

fn pretraining_efficacy() -> Outcome {
    let start = Instant::now();
    let data = EmbeddingMatrix::from_matrix(&low_rank(200, 1024, 8, 0.0, 0).unwrap()).unwrap();
    let (ratio, epochs) = pretraining_ratio(Variant::Aewres, &data);
    let (ae_ratio, _) = pretraining_ratio(Variant::Ae, &data);
    outcome(
        ratio < 0.1 && epochs <= 100,
        format!(
            "default AEwRES best/epoch-0 validation MSE {ratio:.4} after {epochs} epochs (limit 0.1); plain AE {ae_ratio:.4} for reference; {:.1} s",
            secs(start.elapsed())
        ),
    )
}

/// Runs `all` on the separation fixture with `variant`, writing under
/// `out`; returns the report and wall time.
fn fixture_run(dataset: &Path, out: &Path, variant: Variant) -> (ReportSummary, Duration, std::path::PathBuf) {
    std::fs::create_dir_all(out).unwrap();
    let config_path = out.join("config.json");
    std::fs::write(
        &config_path,
        format!(
            r#"{{"dataset": {:?}, "encoder": {{"variant": "{}"}}, "hyperparameters": {{"max_epochs": 100}}, "output_dir": "runs"}}"#,
            dataset.display().to_string(),
            variant.name()
        ),
    )
    .unwrap();
    let config = parse_config(&config_path).unwrap();
    let start = Instant::now();
    let dir = run(&Stage::ALL, &config).unwrap();
    let elapsed = start.elapsed();
    let report: ReportSummary = store::read_json(&dir.join("report.json")).unwrap();
    (report, elapsed, dir)
}

fn separation_and_determinism(tmp: &Path) -> (Outcome, Outcome) {
    let dataset = tmp.join("fixture.emb1");
    write_fixture(&dataset, &SeparationFixture::default()).unwrap();
    let (aewres, t1, dir_a) = fixture_run(&dataset, &tmp.join("aewres"), Variant::Aewres);
    let (ae, t2, _) = fixture_run(&dataset, &tmp.join("ae"), Variant::Ae);
    let auc = aewres.auc["svdd"];
    let ae_auc = ae.auc["svdd"];
    let limit = Duration::from_secs(180);
    let separation = outcome(
        auc >= 0.95 && auc >= ae_auc - 0.02 && t1 <= limit && t2 <= limit,
        format!(
            "SVDD ROC-AUC AEwRES {auc:.4} (need >= 0.95), AE {ae_auc:.4} (AEwRES must be >= AE - 0.02); {:.0} s and {:.0} s (limit 180 s each); baselines on the same run: iforest {:.4}, pca {:.4}",
            secs(t1),
            secs(t2),
            aewres.auc["iforest"],
            aewres.auc["pca"]
        ),
    );

    let (_, _, dir_b) = fixture_run(&dataset, &tmp.join("repeat"), Variant::Aewres);
    let same = |name: &str| std::fs::read(dir_a.join(name)).unwrap() == std::fs::read(dir_b.join(name)).unwrap();
    let (scores, thresholds) = (same("scores.csv"), same("thresholds.json"));
    let determinism = outcome(
        scores && thresholds,
        format!("two `all` runs on the fixture: scores.csv identical = {scores}, thresholds.json identical = {thresholds}"),
    );
    (separation, determinism)
}

fn main() {
    // `cargo test` passes harness flags such as --nocapture; listing must
    // not start the long runs
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut report = |name: &'static str, o: Outcome| {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((name, o));
    };
    report("gradient correctness", gradient_correctness());
    report("threshold semantics", threshold_semantics());
    report("PCA oracle equivalence", pca_oracle_equivalence());
    report("isolation forest sanity", isolation_forest_sanity());
    report("format round-trip", format_round_trip());
    report("pretraining efficacy", pretraining_efficacy());
    let (separation, determinism) = separation_and_determinism(tmp.path());
    report("synthetic separation", separation);
    report("determinism", determinism);

    let failed: Vec<&str> = results.iter().filter(|r| !r.1.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        results.len() - failed.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(" ({})", failed.join(", ")) }
    );
    let strict = std::env::var("LOOPGUARD_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && !failed.is_empty() {
        std::process::exit(1);
    }
}
