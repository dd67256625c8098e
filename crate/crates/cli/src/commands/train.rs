use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use fusenet::data::{load_manifest, LoadOptions};
use fusenet::trainer::{self, AdamConfig, EpochRecord, TrainObserver};
use fusenet::{BackboneKind, Dataset, Error, FusionModel, ModelConfig, Result, SplitPlan};
use serde::Serialize;

use super::write_json;
use crate::args::TrainArgs;
use crate::config::RunConfig;

pub const RECORD_FILE: &str = "train_record.jsonl";
pub const SUMMARY_FILE: &str = "train_summary.json";
pub const CHECKPOINT_FILE: &str = "best.ckpt";

#[derive(Debug, Serialize)]
struct Summary {
    best_epoch: usize,
    best_val_accuracy: Option<f64>,
    epochs: usize,
    first_train_loss: f64,
    last_train_loss: f64,
    train_samples: usize,
    val_samples: usize,
    param_count: usize,
    head_param_count: usize,
    concat_order: Vec<BackboneKind>,
    seed: u64,
    adam: AdamConfig,
}

/// Streams each epoch record to stdout and the record file as it completes.
struct Stream<'a> {
    stdout: &'a mut dyn Write,
    file: BufWriter<File>,
    failure: Option<std::io::Error>,
    started: Instant,
}

impl TrainObserver for Stream<'_> {
    fn on_epoch(&mut self, record: &EpochRecord) {
        let Ok(line) = record.to_json_line() else { return };
        let result = writeln!(self.stdout, "{line}")
            .and_then(|_| self.stdout.flush())
            .and_then(|_| writeln!(self.file, "{line}"))
            .and_then(|_| self.file.flush());
        if let Err(e) = result {
            self.failure.get_or_insert(e);
        }
        eprintln!("epoch {} done after {:.1}s", record.epoch, self.started.elapsed().as_secs_f64());
    }
}

/// Checks that the dataset images match the size the model was configured for.
pub(crate) fn check_image_size(model: &ModelConfig, ds: &Dataset) -> Result<()> {
    if let (Some(want), Some(got)) = (model.input_size(), ds.image_size()) {
        if want != got {
            return Err(Error::Usage(format!(
                "images are {}x{} but the model expects {}x{}; set input_size in the model config",
                got[1], got[0], want[1], want[0]
            )));
        }
    }
    Ok(())
}

pub(crate) fn load_split(path: &Path, ds: &Dataset) -> Result<SplitPlan> {
    let plan = SplitPlan::load(path)?;
    plan.validate(ds.len())?;
    Ok(plan)
}

pub fn run(args: &TrainArgs, stdout: &mut dyn Write) -> Result<()> {
    let mut cfg = RunConfig::from_common(&args.common)?;
    cfg.apply_train_flags(args)?;
    cfg.model.validate()?;
    cfg.train.validate()?;
    cfg.require_out()?;
    let opts = LoadOptions {
        standardize: cfg.data.standardize,
    };
    let ds = load_manifest(cfg.require_manifest()?, opts)?;
    check_image_size(&cfg.model, &ds)?;
    let plan = load_split(cfg.require_split()?, &ds)?;
    let train_set = ds.subset(&plan.train)?;
    let val_set = ds.subset(&plan.val)?;
    let out = cfg.echo()?;

    let mut model = FusionModel::<f32>::new(cfg.model.clone(), cfg.train.seed)?;
    let record_path = out.join(RECORD_FILE);
    let file = File::create(&record_path).map_err(|e| Error::io(&record_path, e))?;
    let mut stream = Stream {
        stdout,
        file: BufWriter::new(file),
        failure: None,
        started: Instant::now(),
    };
    let outcome = trainer::train(&mut model, &train_set, &val_set, &cfg.train, &mut stream)?;
    if let Some(e) = stream.failure {
        return Err(Error::io(&record_path, e));
    }
    outcome.best.save(&out.join(CHECKPOINT_FILE))?;

    let record = &outcome.record;
    let summary = Summary {
        best_epoch: record.best_epoch,
        best_val_accuracy: record.best().val_accuracy,
        epochs: record.epochs.len(),
        first_train_loss: record.epochs[0].train_loss,
        last_train_loss: record.epochs[record.epochs.len() - 1].train_loss,
        train_samples: train_set.len(),
        val_samples: val_set.len(),
        param_count: model.param_count(),
        head_param_count: model.head_param_count(),
        concat_order: cfg.model.concat_order(),
        seed: record.seed,
        adam: record.adam,
    };
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    Ok(())
}
