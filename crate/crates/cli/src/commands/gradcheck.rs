use std::io::Write;

use fusenet::checks::{fault_check, model_check, op_checks, CheckOutcome};
use fusenet::{Error, Result};

use super::{say, write_json};
use crate::args::GradcheckArgs;

pub const REPORT_FILE: &str = "gradcheck.json";

/// Keeps, per op, the seed with the largest error.
fn worst_over_seeds(first: u64, count: u64) -> Result<Vec<CheckOutcome>> {
    let mut worst: Vec<CheckOutcome> = Vec::new();
    for seed in first..first + count {
        for c in op_checks(seed)? {
            match worst.iter_mut().find(|w| w.name == c.name) {
                Some(w) if c.max_relative_error > w.max_relative_error => *w = c,
                Some(_) => {}
                None => worst.push(c),
            }
        }
    }
    Ok(worst)
}

/// Prints one line per check and returns whether all of them passed.
pub fn run(args: &GradcheckArgs, stdout: &mut dyn Write) -> Result<bool> {
    if args.seeds == 0 {
        return Err(Error::Usage("--seeds must be at least 1".into()));
    }
    let mut checks = worst_over_seeds(args.seed, args.seeds)?;
    checks.push(model_check(args.seed)?);
    if args.inject_fault {
        checks.push(fault_check(args.seed)?);
    }
    say(stdout, &format!("{:<20} {:>14} {:>10}  status", "check", "max_rel_error", "tolerance"))?;
    for c in &checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        say(
            stdout,
            &format!("{:<20} {:>14.3e} {:>10.0e}  {status}", c.name, c.max_relative_error, c.tolerance),
        )?;
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    say(stdout, &format!("{} checks, {failed} failed", checks.len()))?;
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(&dir.join(REPORT_FILE), &checks)?;
    }
    Ok(failed == 0)
}
