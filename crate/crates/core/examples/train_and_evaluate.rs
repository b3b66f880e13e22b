//! Trains on a small synthetic dataset and reports Recall, NDCG and HR on
//! the validation and test splits.
//!
//!     cargo run --release --example train_and_evaluate -- --lambda 0.5

use desmil::cli::{parse_overrides, Config};
use desmil::data::{generate_synthetic, Split};
use desmil::eval::evaluate;
use desmil::{fit, Result};

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let defaults = "[model]\ndim = 32\nattn_dim = 64\nlr = 0.01\n\n[train]\nmax_epochs = 10\n\n[synthetic]\ntrain_users = 1000\n";
    let cfg = Config::load(defaults, &parse_overrides(&args)?)?;

    let data = generate_synthetic(&cfg.synthetic)?.dataset;
    let hp = cfg.model.hyperparams(data.vocab);
    let run = fit(&data, &hp, cfg.train.seed, &cfg.train.options())?;
    for (step, recall) in &run.validations {
        println!("step {step:>5}  valid R@50 {recall:.4}");
    }
    println!("best at step {}, {} epochs run", run.best.state.q, run.last.state.meta.epoch);

    println!("split  users  p   recall  ndcg    hr");
    for split in [Split::Valid, Split::Test] {
        let report = evaluate(&run.best.state.params, &hp, &data, split, &[20, 50])?;
        for c in &report.cutoffs {
            println!(
                "{:<5}  {:>5}  {:>2}  {:.4}  {:.4}  {:.4}",
                split.as_str(),
                report.n_users,
                c.p,
                c.recall,
                c.ndcg,
                c.hr
            );
        }
    }
    Ok(())
}
