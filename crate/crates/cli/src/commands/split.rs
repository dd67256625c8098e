use std::io::Write;

use fusenet::data::{load_manifest, split_indices, split_stratified, LoadOptions};
use fusenet::Result;
use serde_json::json;

use super::say;
use crate::args::SplitArgs;
use crate::config::RunConfig;

pub const PLAN_FILE: &str = "split.json";

pub fn run(args: &SplitArgs, stdout: &mut dyn Write) -> Result<()> {
    let mut cfg = RunConfig::from_common(&args.common)?;
    if let Some(n) = args.n_val {
        cfg.data.n_val = n;
    }
    if let Some(n) = args.n_test {
        cfg.data.n_test = n;
    }
    if args.stratified {
        cfg.data.stratified = true;
    }
    if let Some(seed) = args.common.seed {
        cfg.data.seed = seed;
    }
    cfg.require_out()?;
    let ds = load_manifest(cfg.require_manifest()?, LoadOptions::default())?;
    let d = &cfg.data;
    let plan = if d.stratified {
        split_stratified(&ds.labels(), d.n_val, d.n_test, d.seed)?
    } else {
        split_indices(ds.len(), d.n_val, d.n_test, d.seed)?
    };
    let out = cfg.echo()?;
    let path = out.join(PLAN_FILE);
    plan.save(&path)?;
    let summary = json!({
        "plan": path,
        "train": plan.train.len(),
        "val": plan.val.len(),
        "test": plan.test.len(),
        "seed": plan.seed,
    });
    say(stdout, &summary.to_string())
}
