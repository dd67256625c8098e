use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::rng::Rng;

fn is_false(b: &bool) -> bool {
    !*b
}

/// Disjoint train/validation/test index sets over one dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitPlan {
    pub seed: u64,
    pub n_val: usize,
    pub n_test: usize,
    #[serde(default, skip_serializing_if = "is_false")]
    pub stratified: bool,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn check_sizes(n: usize, n_val: usize, n_test: usize) -> Result<()> {
    if n_val + n_test >= n {
        bail!(
            Usage,
            "validation ({n_val}) plus test ({n_test}) must leave training samples out of {n}"
        );
    }
    Ok(())
}

/// Shuffles `0..n` and takes validation, then test, then training indices.
pub fn split_indices(n: usize, n_val: usize, n_test: usize, seed: u64) -> Result<SplitPlan> {
    check_sizes(n, n_val, n_test)?;
    let mut idx: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut idx);
    Ok(SplitPlan {
        seed,
        n_val,
        n_test,
        stratified: false,
        val: idx[..n_val].to_vec(),
        test: idx[n_val..n_val + n_test].to_vec(),
        train: idx[n_val + n_test..].to_vec(),
    })
}

/// As [`split_indices`], but validation and test keep the overall positive
/// fraction (rounded to the nearest count).
pub fn split_stratified(labels: &[u8], n_val: usize, n_test: usize, seed: u64) -> Result<SplitPlan> {
    let n = labels.len();
    check_sizes(n, n_val, n_test)?;
    let mut rng = Rng::new(seed);
    let mut pos: Vec<usize> = (0..n).filter(|&i| labels[i] == 1).collect();
    let mut neg: Vec<usize> = (0..n).filter(|&i| labels[i] != 1).collect();
    rng.shuffle(&mut pos);
    rng.shuffle(&mut neg);
    let share = |k: usize| ((k * pos.len()) as f64 / n as f64).round() as usize;
    let (pv, pt) = (share(n_val).min(pos.len()), share(n_test));
    let pt = pt.min(pos.len() - pv);
    let (nv, nt) = (n_val - pv, n_test - pt);
    if nv + nt > neg.len() {
        bail!(Usage, "too few negatives to stratify {n_val}+{n_test} held-out samples");
    }
    let mut val = [&pos[..pv], &neg[..nv]].concat();
    let mut test = [&pos[pv..pv + pt], &neg[nv..nv + nt]].concat();
    let mut train = [&pos[pv + pt..], &neg[nv + nt..]].concat();
    rng.shuffle(&mut val);
    rng.shuffle(&mut test);
    rng.shuffle(&mut train);
    Ok(SplitPlan {
        seed,
        n_val,
        n_test,
        stratified: true,
        train,
        val,
        test,
    })
}

impl SplitPlan {
    /// Checks that the three sets partition `0..n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.val.len() != self.n_val || self.test.len() != self.n_test {
            bail!(Data, "split sizes disagree with n_val/n_test");
        }
        let mut seen = vec![false; n];
        for (name, set) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            for &i in set {
                if i >= n {
                    bail!(Data, "split {name} index {i} outside a dataset of {n}");
                }
                if std::mem::replace(&mut seen[i], true) {
                    bail!(Data, "split index {i} appears twice");
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            bail!(Data, "split leaves sample {i} unassigned");
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        match serde_json::from_str(&text) {
            Ok(plan) => Ok(plan),
            Err(e) => bail!(Data, "{}: bad split plan: {e}", path.display()),
        }
    }
}
