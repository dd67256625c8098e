use std::io::Write;

use fusenet::data::synth::{write_dataset, SynthOptions};
use fusenet::{Error, Result};

use super::say;
use crate::args::SynthArgs;

pub fn run(args: &SynthArgs, stdout: &mut dyn Write) -> Result<()> {
    if args.count < 2 || args.size < 8 {
        return Err(Error::Usage("synth needs --count of at least 2 and --size of at least 8".into()));
    }
    let manifest = write_dataset(
        &args.out,
        SynthOptions {
            count: args.count,
            size: args.size,
            seed: args.seed,
        },
    )?;
    say(stdout, &manifest.display().to_string())
}
