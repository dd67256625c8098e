use std::io::Write;

use fusenet::data::{load_manifest, LoadOptions};
use fusenet::metrics::{roc_curve, ConfusionMatrix, MetricsReport, CSV_HEADER};
use fusenet::trainer::evaluate;
use fusenet::{Checkpoint, Result};
use serde::Serialize;

use super::train::{check_image_size, load_split};
use super::{csv_error, say, write_file, write_json};
use crate::args::{EvalArgs, Section};
use crate::config::RunConfig;

pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const ROC_CSV: &str = "roc.csv";

#[derive(Debug, Serialize)]
struct MetricsFile<'a> {
    model: &'a str,
    section: &'a str,
    samples: usize,
    confusion: ConfusionMatrix,
    /// Fractions in [0, 1].
    metrics: MetricsReport,
    /// Percentages rounded to three decimals.
    percentages: MetricsReport,
}

pub fn run(args: &EvalArgs, stdout: &mut dyn Write) -> Result<()> {
    let mut cfg = RunConfig::from_common(&args.common)?;
    if let Some(s) = &args.split {
        cfg.split = Some(s.clone());
    }
    if let Some(c) = &args.checkpoint {
        cfg.checkpoint = Some(c.clone());
    }
    cfg.require_out()?;
    let ck = Checkpoint::<f32>::load(cfg.require_checkpoint()?)?;
    cfg.model = ck.config.clone();
    let opts = LoadOptions {
        standardize: cfg.data.standardize,
    };
    let ds = load_manifest(cfg.require_manifest()?, opts)?;
    check_image_size(&cfg.model, &ds)?;
    let plan = load_split(cfg.require_split()?, &ds)?;
    let indices = match args.section {
        Section::Train => &plan.train,
        Section::Val => &plan.val,
        Section::Test => &plan.test,
    };
    let subset = ds.subset(indices)?;
    let model = ck.into_model()?;
    let ev = evaluate(&model, &subset)?;
    let curve = roc_curve(&ev.scores, &ev.labels)?;

    let name = args.name.clone().unwrap_or_else(|| default_name(&cfg));
    let out = cfg.echo()?;

    let path = out.join(METRICS_CSV);
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
    let row = ev.report.csv_record(&name);
    w.write_record(CSV_HEADER).map_err(|e| csv_error(&path, e))?;
    w.write_record(&row).map_err(|e| csv_error(&path, e))?;
    w.flush().map_err(|e| fusenet::Error::io(&path, e))?;

    let p = ev.report.percentages().map(|v| v.unwrap_or(f64::NAN));
    let percentages = MetricsReport {
        accuracy: p[0],
        balanced_accuracy: p[1],
        precision: p[2],
        recall: p[3],
        specificity: p[4],
        f_measure: p[5],
        g_mean: p[6],
        auc: ev.report.auc.map(|_| p[7]),
    };
    let file = MetricsFile {
        model: &name,
        section: args.section.name(),
        samples: subset.len(),
        confusion: ev.confusion,
        metrics: ev.report,
        percentages,
    };
    write_json(&out.join(METRICS_JSON), &file)?;

    let mut roc = String::from("fpr,tpr\n");
    for (x, y) in curve.points() {
        roc.push_str(&format!("{x},{y}\n"));
    }
    write_file(&out.join(ROC_CSV), roc)?;
    say(stdout, &row.join(","))
}

fn default_name(cfg: &RunConfig) -> String {
    match cfg.model.concat_order().as_slice() {
        [single] => single.name().to_string(),
        _ => "fusion".to_string(),
    }
}
