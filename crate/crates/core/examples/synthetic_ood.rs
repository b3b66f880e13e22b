//! λ = 0 against λ = 1 on the synthetic stable/noisy benchmark.
//!
//! Training and validation users see their noisy topic tied to the stable
//! one; test users do not. Each seed generates a fresh dataset and trains
//! both models on it. Config overrides are accepted as `--key value`, plus
//! `--seeds N`, `--first_seed S` and `--lambdas 0,1`.
//!
//!     cargo run --release --example synthetic_ood -- --seeds 2 --max_epochs 10

use desmil::cli::Config;
use desmil::data::{generate_synthetic, Split};
use desmil::eval::evaluate;
use desmil::{fit, Result};

fn main() -> Result<()> {
    let mut args: Vec<String> = std::env::args().skip(1).collect();
    let mut take = |flag: &str, default: &str| -> String {
        match args.iter().position(|a| a == flag) {
            Some(i) => args.drain(i..i + 2).nth(1).expect("flag needs a value"),
            None => default.to_string(),
        }
    };
    let seeds: u64 = take("--seeds", "5").parse().expect("--seeds takes a count");
    let first: u64 = take("--first_seed", "0").parse().expect("--first_seed takes an integer");
    let lambdas: Vec<f64> = take("--lambdas", "0,1")
        .split(',')
        .map(|x| x.parse().expect("--lambdas takes numbers"))
        .collect();
    let cfg = Config::load("", &desmil::cli::parse_overrides(&args)?)?;

    println!("seed  lambda  valid_R@20  test_R@20  test_R@50  epochs  mean_w  min_w");
    let mut sums = vec![[0.0f64; 2]; lambdas.len()];
    for seed in first..first + seeds {
        let synth = desmil::data::SyntheticConfig { seed, ..cfg.synthetic.clone() };
        let data = generate_synthetic(&synth)?.dataset;
        for (slot, &lambda) in lambdas.iter().enumerate() {
            let mut model = cfg.model.clone();
            model.lambda = lambda;
            let hp = model.hyperparams(data.vocab);
            let run = fit(&data, &hp, seed, &cfg.train.options())?;
            let params = &run.best.state.params;
            let valid = evaluate(params, &hp, &data, Split::Valid, &[20])?;
            let test = evaluate(params, &hp, &data, Split::Test, &[20, 50])?;
            let weights: Vec<f64> = run.last.state.weights.values().collect();
            let mean_w = weights.iter().sum::<f64>() / weights.len().max(1) as f64;
            let min_w = weights.iter().copied().fold(1.0, f64::min);
            println!(
                "{seed:>4}  {lambda:>6}  {:>10.4}  {:>9.4}  {:>9.4}  {:>6}  {mean_w:>6.3}  {min_w:>5.3}",
                valid.recall(20),
                test.recall(20),
                test.recall(50),
                run.last.state.meta.epoch
            );
            sums[slot][0] += valid.recall(20);
            sums[slot][1] += test.recall(20);
        }
    }
    let n = seeds as f64;
    let (v0, t0) = (sums[0][0] / n, sums[0][1] / n);
    for (lambda, [v, t]) in lambdas.iter().zip(&sums) {
        let (v, t) = (v / n, t / n);
        println!(
            "λ={lambda}: mean valid R@20 {v:.4} ({:+.2}%), mean test R@20 {t:.4} ({:+.2}%)",
            100.0 * (v / v0 - 1.0),
            100.0 * (t / t0 - 1.0)
        );
    }
    Ok(())
}
