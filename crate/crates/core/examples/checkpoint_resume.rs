//! Stops training halfway, saves to disk, reloads and finishes. The result
//! is byte-identical to one uninterrupted run.
//!
//!     cargo run --release --example checkpoint_resume

use desmil::data::{generate_synthetic, SyntheticConfig};
use desmil::model::Hyperparams;
use desmil::trainer::{Checkpoint, TrainOptions, Trainer};
use desmil::{init_state, Result};

fn main() -> Result<()> {
    let data = generate_synthetic(&SyntheticConfig {
        train_users: 300,
        valid_users: 50,
        test_users: 50,
        ..SyntheticConfig::default()
    })?
    .dataset;
    let hp = Hyperparams {
        dim: 16,
        attn_dim: 32,
        lr: 0.01,
        ..Hyperparams::new(data.vocab)
    };
    let opts = TrainOptions { patience: None, max_epochs: 6, ..TrainOptions::default() };
    let tmp = tempfile::tempdir().expect("temporary directory");
    let dir = tmp.path();

    let full = Trainer::new(&data, &hp, &opts)?.run(init_state(&hp, 1)?, None, |_, _| Ok(()))?;

    let half = TrainOptions { max_epochs: 3, ..opts.clone() };
    let first = Trainer::new(&data, &hp, &half)?.run(init_state(&hp, 1)?, None, |_, _| Ok(()))?;
    first.last.save(dir.join("last.ckpt"))?;
    first.best.save(dir.join("best.ckpt"))?;
    println!("saved after {} batches", first.last.state.q);

    let last = Checkpoint::load(dir.join("last.ckpt"))?;
    let best = Checkpoint::load(dir.join("best.ckpt"))?;
    let resumed = Trainer::new(&data, &hp, &opts)?.run(last.state, Some(best.state), |_, _| Ok(()))?;
    println!("resumed to {} batches", resumed.last.state.q);

    let same = resumed.last.to_bytes()? == full.last.to_bytes()?;
    println!("identical to an uninterrupted run: {same}");
    Ok(())
}
