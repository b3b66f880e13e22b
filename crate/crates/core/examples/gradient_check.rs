//! Compares the hand-written backward pass with central differences of the
//! batch loss, per parameter tensor.
//!
//!     cargo run --release --example gradient_check

use desmil::model::{backward, forward, forward_with_negatives, weighted_batch_loss, Hyperparams, ModelParams};
use desmil::numerics::{finite_diff_grad, relative_error, Matrix, Rng, Stream};
use desmil::Result;

fn main() -> Result<()> {
    let hp = Hyperparams {
        dim: 8,
        attn_dim: 4,
        max_len: 6,
        negatives: 5,
        ..Hyperparams::new(50)
    };
    let params = ModelParams::init(&hp, &mut Rng::new(0, Stream::Init))?;
    let mut rng = Rng::new(0, Stream::Negatives);

    let mut batch = Vec::new();
    for _ in 0..4 {
        let ctx: Vec<usize> = (0..rng.below(2, 7)).map(|_| rng.below(0, hp.vocab)).collect();
        let target = rng.below(0, hp.vocab);
        batch.push(forward(&ctx, target, &params, &hp, &mut rng)?);
    }
    let weights = [1.0, 0.5, 0.25, 0.8];
    let grads = backward(&batch, &weights, &params, &hp)?;

    // Negatives stay pinned. The selected interest is locally constant away from ties.
    let loss = |p: &ModelParams| -> f64 {
        let traces: Vec<_> = batch
            .iter()
            .map(|t| forward_with_negatives(&t.items, t.target, &t.candidates[1..], p, &hp).unwrap())
            .collect();
        weighted_batch_loss(&traces, &weights).unwrap()
    };

    let analytic = [
        ("item_emb", grads.dense_items(hp.vocab, hp.dim)),
        ("pos_emb", grads.pos_emb.clone()),
        ("w1", grads.w1.clone()),
        ("w2", grads.w2.clone()),
    ];
    println!("tensor     entries  max_rel_err");
    for (name, an) in &analytic {
        let numeric = finite_diff_grad(
            |m: &Matrix| {
                let mut p = params.clone();
                *slot(&mut p, name) = m.clone();
                loss(&p)
            },
            slot(&mut params.clone(), name),
            1e-5,
        );
        let worst = an
            .as_slice()
            .iter()
            .zip(numeric.as_slice())
            .map(|(a, n)| relative_error(*a, *n, 1e-5))
            .fold(0.0, f64::max);
        println!("{name:<9}  {:>7}  {worst:.2e}", an.as_slice().len());
    }
    Ok(())
}

fn slot<'a>(p: &'a mut ModelParams, name: &str) -> &'a mut Matrix {
    match name {
        "item_emb" => &mut p.item_emb,
        "pos_emb" => &mut p.pos_emb,
        "w1" => &mut p.w1,
        _ => &mut p.w2,
    }
}
