//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use clap::Parser;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use somnoscat::bilstm::{feature_score, select_top_k, Batch, Network, NetworkConfig};
use somnoscat::evaluate::{auprc, auroc};
use somnoscat::features::load_features;
use somnoscat::preprocess::{triangular_taper, WINDOW_LEN};
use somnoscat::record_io::{load_predictions, FS};
use somnoscat::scattering::ScatteringNet;
use somnoscat::spectral::burg;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(start: Instant, limit_s: u64) -> Result<f64, String> {
    let t = start.elapsed();
    if t > Duration::from_secs(limit_s) {
        Err(format!("took {:.1} s, limit {limit_s} s", t.as_secs_f64()))
    } else {
        Ok(t.as_secs_f64())
    }
}

fn cli(args: &[&str]) -> Result<(), String> {
    let mut full = vec!["somnoscat"];
    full.extend_from_slice(args);
    let parsed = somnoscat_cli::Cli::try_parse_from(full).map_err(|e| e.to_string())?;
    somnoscat_cli::execute(&parsed)
        .map(|_| ())
        .map_err(|e| format!("`somnoscat {}` failed: {e}", args.join(" ")))
}

// 1. Analytic gradients against central differences.

const CLASS_W: [f64; 2] = [0.1, 0.9];

fn normalized_loss(net: &Network, batch: &Batch, labels: &[&[u8]]) -> f64 {
    let g = net.loss_and_gradient(batch, labels, CLASS_W).unwrap();
    g.nll / g.weight
}

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for cfg_seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + cfg_seed);
        let cfg = NetworkConfig {
            input_dim: rng.random_range(1..=6),
            layers: rng.random_range(1..=2),
            hidden: rng.random_range(1..=8),
            leaky_slope: 0.5,
            bidirectional: rng.random_bool(0.7),
        };
        let mut net = Network::random(cfg, &mut rng).map_err(|e| e.to_string())?;
        for t in net.tensors_mut() {
            t.iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
        }
        let n_seq = rng.random_range(1..=3);
        let seqs: Vec<Array2<f64>> = (0..n_seq)
            .map(|_| {
                let m = rng.random_range(1..=12);
                Array2::from_shape_fn((m, cfg.input_dim), |_| rng.random_range(-1.5..1.5))
            })
            .collect();
        let labels: Vec<Vec<u8>> = seqs
            .iter()
            .map(|s| (0..s.nrows()).map(|_| rng.random_range(0..2u8)).collect())
            .collect();
        let views: Vec<_> = seqs.iter().map(|s| s.view()).collect();
        let batch = Batch::new(&views).map_err(|e| e.to_string())?;
        let lab: Vec<&[u8]> = labels.iter().map(|l| &l[..]).collect();

        let g = net.loss_and_gradient(&batch, &lab, CLASS_W).map_err(|e| e.to_string())?;
        let analytic: Vec<f64> = g.grads.tensors().concat().iter().map(|v| v / g.weight).collect();
        let mut probe = net.clone();
        let mut k = 0;
        for ti in 0..net.tensors().len() {
            for j in 0..net.tensors()[ti].len() {
                let orig = net.tensors()[ti][j];
                probe.tensors_mut()[ti][j] = orig + h;
                let up = normalized_loss(&probe, &batch, &lab);
                probe.tensors_mut()[ti][j] = orig - h;
                let down = normalized_loss(&probe, &batch, &lab);
                probe.tensors_mut()[ti][j] = orig;
                let numeric = (up - down) / (2.0 * h);
                let rel = (analytic[k] - numeric).abs() / analytic[k].abs().max(numeric.abs()).max(1e-3);
                worst = worst.max(rel);
                k += 1;
            }
        }
    }
    let t = within(start, 60)?;
    check(worst < 1e-5, format!("max relative error {worst:.2e} over 20 configs ({t:.1} s)"))
}

// 2. Overfit a small synthetic cohort end to end.

fn overfit() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path().to_str().unwrap();
    cli(&["--data-dir", d, "synth", "--records", "20", "--duration", "60"])?;
    cli(&["--data-dir", d, "extract", "--feature-set", "all465"])?;
    cli(&["--data-dir", d, "train", "--feature-set", "all465", "--epochs", "30"])?;
    cli(&["--data-dir", d, "predict"])?;
    cli(&["--data-dir", d, "evaluate"])?;
    let csv = fs::read_to_string(dir.path().join("eval/report.csv")).map_err(|e| e.to_string())?;
    let pooled = csv
        .lines()
        .find(|l| l.starts_with("pooled,"))
        .ok_or("no pooled row")?;
    let fields: Vec<&str> = pooled.split(',').collect();
    let ap: f64 = fields[1].parse().map_err(|_| "bad AUPRC")?;
    let roc: f64 = fields[2].parse().map_err(|_| "bad AUROC")?;
    let t = within(start, 600)?;
    check(ap >= 0.95, format!("training-set AUPRC {ap:.4}, AUROC {roc:.4} ({t:.1} s)"))
}

// 3. Metrics against exhaustive thresholding.

fn threshold_oracle(scores: &[f64], labels: &[i8]) -> (f64, f64) {
    let pos = labels.iter().filter(|&&y| y == 1).count() as f64;
    let neg = labels.iter().filter(|&&y| y == 0).count() as f64;
    let mut cuts: Vec<f64> = scores.to_vec();
    cuts.sort_by(|a, b| b.total_cmp(a));
    cuts.dedup();
    let (mut ap, mut roc) = (0.0, 0.0);
    let (mut r0, mut tpr0, mut fpr0) = (0.0, 0.0, 0.0);
    for c in cuts {
        let tp = (0..scores.len()).filter(|&i| scores[i] >= c && labels[i] == 1).count() as f64;
        let fp = (0..scores.len()).filter(|&i| scores[i] >= c && labels[i] == 0).count() as f64;
        let (tpr, fpr) = (tp / pos, fp / neg);
        ap += (tpr - r0) * tp / (tp + fp);
        roc += (fpr - fpr0) * (tpr + tpr0) / 2.0;
        r0 = tpr;
        tpr0 = tpr;
        fpr0 = fpr;
    }
    (ap, roc)
}

fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for pattern in 0u32..256 {
        let labels: Vec<i8> = (0..8).map(|b| ((pattern >> b) & 1) as i8).collect();
        if pattern == 0 || pattern == 255 {
            continue;
        }
        for draw in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(u64::from(pattern) * 100 + draw);
            // Even draws are coarse so that tied scores occur.
            let scores: Vec<f64> = (0..8)
                .map(|_| {
                    let u: f64 = rng.random();
                    if draw % 2 == 0 {
                        (u * 4.0).floor() / 4.0
                    } else {
                        u
                    }
                })
                .collect();
            let (ap, roc) = threshold_oracle(&scores, &labels);
            let got_ap = auprc(&scores, &labels).map_err(|e| e.to_string())?;
            let got_roc = auroc(&scores, &labels).map_err(|e| e.to_string())?;
            worst = worst.max((ap - got_ap).abs()).max((roc - got_roc).abs());
            cases += 1;
        }
    }
    let t = within(start, 30)?;
    check(worst <= 1e-12, format!("{cases} cases, max deviation {worst:.1e} ({t:.2} s)"))
}

// 4. Filter-bank anchors.

fn filter_bank_anchors() -> Outcome {
    let net = ScatteringNet::standard();
    let (c1, c2) = (net.bank1.mother_center, net.bank2.mother_center);
    let lp = net.littlewood_paley_peak();
    let peak = lp[0].max(lp[1]);
    check(
        (c1 - 85.35).abs() <= 0.01
            && (c2 - 75.00).abs() <= 0.01
            && net.bank1.len() == 14
            && net.bank2.len() == 8
            && peak <= 1.05,
        format!(
            "centres {c1:.3} / {c2:.3} Hz, {} + {} wavelets, Littlewood-Paley peak {peak:.4}",
            net.bank1.len(),
            net.bank2.len()
        ),
    )
}

// 5. Scattering stability to shifts and non-expansion.

/// Colored noise long enough for a 2 s shift.
fn ar_noise(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0; n + 200];
    for t in 2..x.len() {
        let e: f64 = rng.sample(StandardNormal);
        x[t] = 1.2 * x[t - 1] - 0.5 * x[t - 2] + e;
    }
    x.split_off(200)
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn scattering_stability() -> Outcome {
    let start = Instant::now();
    let net = ScatteringNet::standard();
    let taper = triangular_taper(WINDOW_LEN);
    let window = |x: &[f64], off: usize| -> Vec<f64> {
        x[off..off + WINDOW_LEN].iter().zip(&taper).map(|(a, b)| a * b).collect()
    };
    let shifts_s = [0.05, 0.5, 2.0];
    let mut devs: Vec<Vec<f64>> = vec![Vec::new(); shifts_s.len()];
    for seed in 0..50u64 {
        let x = ar_noise(500 + seed, WINDOW_LEN + 400);
        let base = net.scatter_window(&window(&x, 0)).map_err(|e| e.to_string())?.flatten();
        for (i, s) in shifts_s.iter().enumerate() {
            let off = (s * FS).round() as usize;
            let moved = net.scatter_window(&window(&x, off)).map_err(|e| e.to_string())?.flatten();
            let diff: Vec<f64> = base.iter().zip(&moved).map(|(a, b)| a - b).collect();
            devs[i].push(l2(&diff) / l2(&base));
        }
    }
    let med: Vec<f64> = devs.into_iter().map(median).collect();
    let monotone = med.windows(2).all(|w| w[0] <= w[1]);

    let mut worst_ratio: f64 = 0.0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(9000 + seed);
        let amp = 10f64.powf(rng.random_range(-2.0..2.0));
        let x: Vec<f64> = ar_noise(seed, WINDOW_LEN).iter().map(|v| amp * v).collect();
        let y: Vec<f64> = ar_noise(seed + 7777, WINDOW_LEN).iter().map(|v| amp * v).collect();
        let sx = net.scatter_window(&x).map_err(|e| e.to_string())?.flatten();
        let sy = net.scatter_window(&y).map_err(|e| e.to_string())?.flatten();
        let d: Vec<f64> = sx.iter().zip(&sy).map(|(a, b)| a - b).collect();
        let dx: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        worst_ratio = worst_ratio.max(l2(&sx) / l2(&x)).max(l2(&d) / l2(&dx));
    }
    let t = within(start, 120)?;
    check(
        monotone && worst_ratio <= 1.05,
        format!(
            "median deviation {:.4} / {:.4} / {:.4} at 0.05 / 0.5 / 2 s, max norm ratio {worst_ratio:.4} ({t:.1} s)",
            med[0], med[1], med[2]
        ),
    )
}

// 6. Burg recovers a known AR(2).

fn burg_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 4000;
        let burn = 500;
        let mut x = vec![0.0; n + burn];
        for t in 2..x.len() {
            let e: f64 = rng.sample(StandardNormal);
            x[t] = 1.5 * x[t - 1] - 0.7 * x[t - 2] + e;
        }
        let m = burg(&x[burn..], 2).map_err(|e| e.to_string())?;
        worst = worst.max((m.coeff(1) + 1.5).abs()).max((m.coeff(2) - 0.7).abs());
    }
    check(worst <= 0.05, format!("max coefficient error {worst:.4} over 10 seeds"))
}

// 7. Column counts and prediction lengths.

fn dimensional_contracts() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path().to_str().unwrap();
    cli(&["--data-dir", d, "synth", "--records", "2", "--duration", "35"])?;
    let mut dims = Vec::new();
    for set in ["physio75", "scatter390", "all465"] {
        cli(&["--data-dir", d, "extract", "--feature-set", set])?;
        let m = load_features(dir.path().join("features/synth_000.feat")).map_err(|e| e.to_string())?;
        dims.push((m.rows(), m.cols()));
    }
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, "[net]\nlayers = 1\nhidden = 4\n[train]\nepochs = 2\n").map_err(|e| e.to_string())?;
    let c = cfg.to_str().unwrap();
    cli(&["--config", c, "--data-dir", d, "train", "--feature-set", "all465"])?;
    cli(&["--config", c, "--data-dir", d, "predict"])?;
    let pred = load_predictions(dir.path().join("records/synth_000/pred.f32")).map_err(|e| e.to_string())?;
    let windows = dims[2].0;
    let cols: Vec<usize> = dims.iter().map(|x| x.1).collect();
    check(
        cols == [75, 390, 465] && pred.len() == 1000 * windows,
        format!("columns {cols:?}, {windows} windows -> {} prediction samples", pred.len()),
    )
}

// 8. Identical seeded runs give identical bytes.

fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let mut snaps = Vec::new();
    let mut dirs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let d = dir.path().to_str().unwrap().to_string();
        let cfg = dir.path().join("run.toml");
        fs::write(
            &cfg,
            "seed = 11\nfeature_set = \"all465\"\n[net]\nlayers = 2\nhidden = 6\n\
             [train]\nepochs = 4\nfolds = 2\nrestarts = 2\nbatch_subjects = 2\n",
        )
        .map_err(|e| e.to_string())?;
        let c = cfg.to_str().unwrap().to_string();
        cli(&["--config", &c, "--data-dir", &d, "synth", "--records", "4", "--duration", "30"])?;
        for step in ["extract", "train", "predict", "evaluate"] {
            cli(&["--config", &c, "--data-dir", &d, step])?;
        }
        snaps.push(snapshot(dir.path()));
        dirs.push(dir);
    }
    let differing: Vec<&String> = snaps[0]
        .iter()
        .filter(|(k, v)| snaps[1].get(*k) != Some(*v))
        .map(|(k, _)| k)
        .collect();
    check(
        differing.is_empty() && snaps[0].len() == snaps[1].len(),
        format!("{} artifacts compared, differing: {differing:?}", snaps[0].len()),
    )
}

// 9. Feature scores by brute force and top-k ordering.

fn feature_score_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(77 + seed);
        let cfg = NetworkConfig {
            input_dim: rng.random_range(1..=20),
            layers: rng.random_range(1..=3),
            hidden: rng.random_range(1..=10),
            leaky_slope: 0.5,
            bidirectional: seed % 3 != 0,
        };
        let net = Network::random(cfg, &mut rng).map_err(|e| e.to_string())?;
        let got = feature_score(&net);
        let h = cfg.hidden;
        let layer = &net.layers[0];
        for j in 0..cfg.input_dim {
            let mut want = 0.0;
            for gate in 0..4 {
                for i in 0..h {
                    want += layer.forward.w[[gate * h + i, j]].abs();
                    if let Some(b) = &layer.backward {
                        want += b.w[[gate * h + i, j]].abs();
                    }
                }
            }
            worst = worst.max((want - got[j]).abs());
        }
    }

    let mut ordered = true;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..40);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..5u8))).collect();
        let k = rng.random_range(0..=n);
        let top = select_top_k(&scores, k).map_err(|e| e.to_string())?;
        let mut want: Vec<usize> = (0..n).collect();
        want.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
        want.truncate(k);
        ordered &= top == want;
        ordered &= top.windows(2).all(|w| scores[w[0]] > scores[w[1]] || (scores[w[0]] == scores[w[1]] && w[0] < w[1]));
    }
    check(
        worst <= 1e-12 && ordered,
        format!("max score deviation {worst:.1e}; top-k order {}", if ordered { "ok" } else { "wrong" }),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient oracle", gradient_oracle),
        ("end-to-end overfit", overfit),
        ("metric oracle", metric_oracle),
        ("filter-bank anchors", filter_bank_anchors),
        ("scattering stability", scattering_stability),
        ("burg oracle", burg_oracle),
        ("dimensional contracts", dimensional_contracts),
        ("determinism", determinism),
        ("feature-score oracle", feature_score_oracle),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {}: {name}: PASS - {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: {name}: FAIL - {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
