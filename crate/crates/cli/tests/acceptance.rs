//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use fusenet::metrics::{auc, compute_metrics, confusion, roc_curve, ConfusionMatrix, MetricsReport};
use fusenet::{FusionModel, Graph, ModelConfig, Rng, Tensor};
use serde_json::Value;

type Outcome = Result<String, String>;

fn fusenet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fusenet")).args(args).output().expect("spawn fusenet")
}

fn run_ok(args: &[&str]) -> Result<Output, String> {
    let out = fusenet(args);
    if out.status.success() {
        Ok(out)
    } else {
        Err(format!(
            "`fusenet {}` exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_json(path: &Path) -> Result<Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn check(ok: bool, pass: String, fail: String) -> Outcome {
    if ok {
        Ok(pass)
    } else {
        Err(fail)
    }
}

/// Published fusion row in percent, trailing zeros restored:
/// accuracy, BA, precision, recall, specificity, F-measure, G-mean, AUC.
const FUSION_ROW: [f64; 8] = [96.774, 96.843, 95.402, 97.647, 96.040, 96.512, 96.840, 96.843];

/// Largest total considered when searching for the published matrix.
const MAX_TOTAL: u64 = 2482;

fn pct(num: u64, den: u64) -> f64 {
    100.0 * num as f64 / den as f64
}

/// Matches a value printed at three decimals.
fn rounds_to(x: f64, printed: f64) -> bool {
    (x - printed).abs() <= 0.0005 + 1e-9
}

/// Exhaustive search over all matrices with total ≤ MAX_TOTAL whose seven
/// threshold metrics round to the published row. Recall and specificity only
/// depend on one class each, so both are enumerated per class size first.
fn matching_matrices() -> Vec<ConfusionMatrix> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for n in 1..=MAX_TOTAL {
        for k in 0..=n {
            if rounds_to(pct(k, n), FUSION_ROW[3]) {
                pos.push((k, n - k));
            }
            if rounds_to(pct(k, n), FUSION_ROW[4]) {
                neg.push((k, n - k));
            }
        }
    }
    let mut found = Vec::new();
    for &(tp, fn_) in &pos {
        for &(tn, fp) in &neg {
            let total = tp + fn_ + tn + fp;
            if total > MAX_TOTAL || tp + fp == 0 {
                continue;
            }
            let (r, s) = (tp as f64 / (tp + fn_) as f64, tn as f64 / (tn + fp) as f64);
            let prec = tp as f64 / (tp + fp) as f64;
            let f = 2.0 * prec * r / (prec + r);
            let row = [pct(tp + tn, total), 50.0 * (r + s), 100.0 * prec, 100.0 * f, 100.0 * (r * s).sqrt()];
            let want = [FUSION_ROW[0], FUSION_ROW[1], FUSION_ROW[2], FUSION_ROW[5], FUSION_ROW[6]];
            if row.iter().zip(want).all(|(&x, w)| rounds_to(x, w)) {
                found.push(ConfusionMatrix::new(tp, fp, fn_, tn));
            }
        }
    }
    found.sort_by_key(|m| (m.total(), m.tp, m.fp));
    found
}

fn expand(cm: &ConfusionMatrix) -> (Vec<u8>, Vec<u8>) {
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for (p, l, n) in [(1, 1, cm.tp), (1, 0, cm.fp), (0, 1, cm.fn_), (0, 0, cm.tn)] {
        preds.extend(std::iter::repeat_n(p, n as usize));
        labels.extend(std::iter::repeat_n(l, n as usize));
    }
    (preds, labels)
}

fn criterion_1() -> Outcome {
    let found = matching_matrices();
    let smallest = *found.first().ok_or("no matrix reproduces the row")?;
    if smallest != ConfusionMatrix::new(83, 4, 2, 97) {
        return Err(format!("smallest matching matrix is {smallest:?}"));
    }
    let (preds, labels) = expand(&smallest);
    let cm = confusion(&preds, &labels).map_err(|e| e.to_string())?;
    let scores: Vec<f64> = preds.iter().map(|&p| f64::from(p)).collect();
    let report: MetricsReport = compute_metrics(&cm)
        .map_err(|e| e.to_string())?
        .with_auc(auc(&roc_curve(&scores, &labels).map_err(|e| e.to_string())?));
    let got: Vec<f64> = report.values().iter().map(|v| 100.0 * v.unwrap_or(f64::NAN)).collect();
    let worst = got.iter().zip(FUSION_ROW).map(|(g, w)| (g - w).abs()).fold(0.0, f64::max);
    check(
        worst <= 0.005,
        format!("TP=83 FP=4 FN=2 TN=97 (smallest of {} matches), max deviation {worst:.5}", found.len()),
        format!("metrics {got:?} deviate by {worst:.5}"),
    )
}

fn criterion_2() -> Outcome {
    // recall, specificity, reported BA, reported G-mean; None marks the cell left out.
    let rows: [(&str, f64, f64, Option<f64>, f64); 4] = [
        ("ResNet18", 94.776, 90.351, Some(92.563), 92.537),
        ("GoogleNet", 95.522, 91.228, Some(93.375), 93.351),
        ("ShuffleNet", 93.284, 94.737, None, 94.007),
        ("Proposed", 97.647, 96.04, Some(96.843), 96.84),
    ];
    let mut worst = 0.0f64;
    let mut bad = Vec::new();
    for (name, r, s, ba, g) in rows {
        let mut gaps = vec![(r * s).sqrt() - g];
        if let Some(ba) = ba {
            gaps.push((r + s) / 2.0 - ba);
        }
        for gap in gaps {
            worst = worst.max(gap.abs());
            if gap.abs() > 0.01 {
                bad.push(format!("{name} off by {gap:.4}"));
            }
        }
    }
    check(
        bad.is_empty(),
        format!("7 identities hold, max gap {worst:.4}"),
        bad.join("; "),
    )
}

fn criterion_3() -> Outcome {
    let started = Instant::now();
    let out = fusenet(&["gradcheck"]);
    let elapsed = started.elapsed();
    let text = String::from_utf8_lossy(&out.stdout);
    let summary = text.lines().last().unwrap_or_default().to_string();
    check(
        out.status.success() && elapsed < Duration::from_secs(120),
        format!("{summary} in {:.1}s", elapsed.as_secs_f64()),
        format!("exit {:?} after {:.1}s: {summary}", out.status.code(), elapsed.as_secs_f64()),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = Rng::new(44);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        // Mostly moderate logits with a tail reaching ±60.
        let z = if case % 10 == 0 { rng.uniform(-60.0, 60.0) } else { 8.0 * rng.normal() };
        let y = (rng.below(2)) as u8;

        let mut g = Graph::<f64>::new();
        let zv = g.leaf(Tensor::new([1], vec![z]).unwrap(), true);
        let loss = g.binary_sigmoid_nll(zv, &[y]).map_err(|e| e.to_string())?;
        g.backward(loss).map_err(|e| e.to_string())?;
        let (l1, d1) = (g.value(loss).data()[0], g.grad(zv).unwrap()[0]);

        let mut g = Graph::<f64>::new();
        let pair = g.leaf(Tensor::new([1, 2], vec![0.0, z]).unwrap(), true);
        let lp = g.log_softmax(pair).map_err(|e| e.to_string())?;
        let loss = g.nll_loss(lp, &[usize::from(y)]).map_err(|e| e.to_string())?;
        g.backward(loss).map_err(|e| e.to_string())?;
        let (l2, d2) = (g.value(loss).data()[0], g.grad(pair).unwrap()[1]);

        worst = worst.max((l1 - l2).abs()).max((d1 - d2).abs());
    }
    check(
        worst <= 1e-10,
        format!("1000 cases, max loss/gradient gap {worst:.2e}"),
        format!("max gap {worst:.2e}"),
    )
}

/// Fraction of positive/negative pairs ranked correctly, ties counted half.
fn mann_whitney(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0u64);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1;
                wins += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs as f64
}

fn random_instance(rng: &mut Rng) -> (Vec<f64>, Vec<u8>) {
    loop {
        let n = 2 + rng.below(49) as usize;
        let levels = 1 + rng.below(12);
        let scores = (0..n).map(|_| rng.below(levels) as f64 / levels as f64).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.below(2) as u8).collect();
        if labels.contains(&0) && labels.contains(&1) {
            return (scores, labels);
        }
    }
}

fn criterion_5() -> Outcome {
    let mut rng = Rng::new(55);
    let mut worst = 0.0f64;
    let mut hard_mismatch = 0;
    for _ in 0..1000 {
        let (scores, labels) = random_instance(&mut rng);
        let a = auc(&roc_curve(&scores, &labels).map_err(|e| e.to_string())?);
        worst = worst.max((a - mann_whitney(&scores, &labels)).abs());

        let preds: Vec<u8> = scores.iter().map(|&s| u8::from(s >= 0.5)).collect();
        let hard: Vec<f64> = preds.iter().map(|&p| f64::from(p)).collect();
        let ba = compute_metrics(&confusion(&preds, &labels).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?
            .balanced_accuracy;
        let hard_auc = auc(&roc_curve(&hard, &labels).map_err(|e| e.to_string())?);
        hard_mismatch += usize::from(hard_auc.to_bits() != ba.to_bits());
    }
    check(
        worst <= 1e-12 && hard_mismatch == 0,
        format!("1000 tied instances, max gap {worst:.2e}; hard-score AUC equals BA bit-exactly"),
        format!("max gap {worst:.2e}, {hard_mismatch} hard-score mismatches"),
    )
}

struct Corpus {
    dir: tempfile::TempDir,
    manifest: String,
    split: String,
}

fn corpus() -> Result<Corpus, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("data");
    run_ok(&["synth", "--out", p(&data), "--count", "600", "--size", "64", "--seed", "0"])?;
    let manifest = data.join("manifest.csv");
    let plan = dir.path().join("plan");
    run_ok(&["split", "--manifest", p(&manifest), "--n-val", "100", "--n-test", "100", "--seed", "0", "--out", p(&plan)])?;
    Ok(Corpus {
        manifest: p(&manifest).to_string(),
        split: p(&plan.join("split.json")).to_string(),
        dir,
    })
}

struct Trained {
    test_accuracy: f64,
    summary: Value,
    out: std::path::PathBuf,
}

impl Corpus {
    fn train(&self, label: &str, extra: &[&str]) -> Result<std::path::PathBuf, String> {
        let out = self.dir.path().join(label);
        let mut args = vec!["train", "--manifest", &self.manifest, "--split", &self.split, "--out", p(&out)];
        args.extend_from_slice(extra);
        run_ok(&args)?;
        Ok(out)
    }

    fn eval(&self, run: &Path, section: &str) -> Result<Value, String> {
        let out = run.join(format!("eval_{section}"));
        let ckpt = run.join("best.ckpt");
        run_ok(&["eval", "--manifest", &self.manifest, "--split", &self.split, "--checkpoint", p(&ckpt), "--section", section, "--out", p(&out)])?;
        read_json(&out.join("metrics.json"))
    }

    fn train_and_test(&self, label: &str, extra: &[&str]) -> Result<Trained, String> {
        let started = Instant::now();
        let out = self.train(label, extra)?;
        let metrics = self.eval(&out, "test")?;
        let test_accuracy = metrics["metrics"]["accuracy"].as_f64().ok_or("no test accuracy")?;
        eprintln!("  {label}: test accuracy {:.2}% ({:.0}s)", 100.0 * test_accuracy, started.elapsed().as_secs_f64());
        Ok(Trained {
            test_accuracy,
            summary: read_json(&out.join("train_summary.json"))?,
            out,
        })
    }
}

const EPOCHS: &str = "50";
const FEATURES: &str = "64";

fn criterion_6(c: &Corpus) -> Result<(Outcome, Trained), String> {
    let base = ["--epochs", EPOCHS, "--feature-dim", FEATURES, "--seed", "0"];
    let fusion = c.train_and_test("fusion", &base)?;
    let mut best_single = (String::new(), 0.0f64);
    for kind in ["residual", "inception", "shuffle"] {
        let mut args = base.to_vec();
        args.extend(["--backbones", kind]);
        let t = c.train_and_test(kind, &args)?;
        if t.test_accuracy > best_single.1 {
            best_single = (kind.to_string(), t.test_accuracy);
        }
    }
    let (f, s) = (100.0 * fusion.test_accuracy, 100.0 * best_single.1);
    let outcome = check(
        f >= 95.0 && f >= s - 2.0,
        format!("fusion {f:.1}% vs best single ({}) {s:.1}%", best_single.0),
        format!("fusion {f:.1}%, best single ({}) {s:.1}%", best_single.0),
    );
    Ok((outcome, fusion))
}

/// Training-loss drop on the synthetic set, reported next to criterion 6.
fn loss_drop(fusion: &Trained) -> Outcome {
    let first = fusion.summary["first_train_loss"].as_f64().unwrap_or(f64::NAN);
    let last = fusion.summary["last_train_loss"].as_f64().unwrap_or(f64::NAN);
    check(
        last < 0.1 * first,
        format!("final epoch loss {last:.4} < 0.1 x first {first:.4}"),
        format!("final epoch loss {last:.4} vs first {first:.4}"),
    )
}

fn criterion_7(c: &Corpus, fusion: &Trained) -> Outcome {
    let args = ["--epochs", "2", "--feature-dim", FEATURES, "--seed", "7"];
    let a = c.train("repro_a", &args)?;
    let b = c.train("repro_b", &args)?;
    for file in ["train_record.jsonl", "best.ckpt", "train_summary.json"] {
        let (x, y) = (std::fs::read(a.join(file)), std::fs::read(b.join(file)));
        match (x, y) {
            (Ok(x), Ok(y)) if x == y => {}
            _ => return Err(format!("{file} differs between identical runs")),
        }
    }
    let recorded = fusion.summary["best_val_accuracy"].as_f64().ok_or("no recorded validation accuracy")?;
    let reloaded = c.eval(&fusion.out, "val")?["metrics"]["accuracy"].as_f64().ok_or("no val accuracy")?;
    check(
        recorded == reloaded,
        format!("identical records and checkpoints; reloaded val accuracy {:.2}% matches", 100.0 * reloaded),
        format!("reloaded val accuracy {reloaded} vs recorded {recorded}"),
    )
}

fn criterion_8() -> Outcome {
    let mut cfg = ModelConfig::with_feature_dim(1000);
    cfg.hidden = 512;
    cfg.class_count = 10;
    let model = FusionModel::<f32>::new(cfg, 0).map_err(|e| e.to_string())?;
    let expected = 3000 * 512 + 512 + 512 * 10 + 10;
    let got = model.head_param_count();
    check(
        got == expected && got == 1_541_642,
        format!("{got} head parameters"),
        format!("{got} head parameters, expected {expected}"),
    )
}

fn report(results: &mut Vec<bool>, label: &str, outcome: Outcome) {
    let (status, detail) = match &outcome {
        Ok(d) => ("PASS", d.as_str()),
        Err(d) => ("FAIL", d.as_str()),
    };
    println!("{status} {label}: {detail}");
    results.push(outcome.is_ok());
}

fn main() {
    // `cargo test -- <filter>` passes arguments; a filter that names another
    // target or `--list` should not launch the long run.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    if let Some(filter) = args.iter().find(|a| !a.starts_with('-')) {
        if !"acceptance".contains(filter.as_str()) {
            return;
        }
    }

    let mut results = Vec::new();
    report(&mut results, "criterion 1 (published matrix reproduces the fusion row)", criterion_1());
    report(&mut results, "criterion 2 (published rows satisfy BA and G-mean identities)", criterion_2());
    report(&mut results, "criterion 3 (gradient check suite under 2 minutes)", criterion_3());
    report(&mut results, "criterion 4 (sigmoid loss equals two-logit softmax loss)", criterion_4());
    report(&mut results, "criterion 5 (AUC equals Mann-Whitney statistic)", criterion_5());
    match corpus() {
        Ok(c) => {
            match criterion_6(&c) {
                Ok((outcome, fusion)) => {
                    report(&mut results, "criterion 6 (fusion accuracy on the synthetic set)", outcome);
                    report(&mut results, "criterion 6 (training loss drops tenfold)", loss_drop(&fusion));
                    report(&mut results, "criterion 7 (reproducible training and checkpoints)", criterion_7(&c, &fusion));
                }
                Err(e) => {
                    report(&mut results, "criterion 6 (fusion accuracy on the synthetic set)", Err(e.clone()));
                    report(&mut results, "criterion 7 (reproducible training and checkpoints)", Err(e));
                }
            }
        }
        Err(e) => {
            report(&mut results, "criterion 6 (fusion accuracy on the synthetic set)", Err(e.clone()));
            report(&mut results, "criterion 7 (reproducible training and checkpoints)", Err(e));
        }
    }
    report(&mut results, "criterion 8 (head parameter count)", criterion_8());

    let failed = results.iter().filter(|ok| !**ok).count();
    println!("acceptance: {} checks, {failed} failed", results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
