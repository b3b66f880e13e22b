//! Independent reference implementations shared by the integration tests.
//! They use plain nested loops over `Vec<Vec<f64>>` and share no code with
//! the library beyond its public data types.

#![allow(dead_code)]

use desmil::model::{Hyperparams, ModelParams};
use desmil::numerics::Matrix;

pub type Grid = Vec<Vec<f64>>;

pub fn grid(m: &Matrix) -> Grid {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

/// Interest matrix `M` computed entry by entry.
pub fn naive_interests(params: &ModelParams, hp: &Hyperparams, context: &[usize]) -> Grid {
    let ctx = &context[context.len().saturating_sub(hp.max_len)..];
    let t = ctx.len();
    let (v, p, w1, w2) = (grid(&params.item_emb), grid(&params.pos_emb), grid(&params.w1), grid(&params.w2));
    let e: Grid = (0..t).map(|i| (0..hp.dim).map(|k| v[ctx[i]][k] + p[i][k]).collect()).collect();
    let h: Grid = (0..hp.attn_dim)
        .map(|a| (0..t).map(|i| (0..hp.dim).map(|k| w1[a][k] * e[i][k]).sum::<f64>().tanh()).collect())
        .collect();
    let mut m = vec![vec![0.0; hp.dim]; hp.interests];
    for j in 0..hp.interests {
        let s: Vec<f64> = (0..t).map(|i| (0..hp.attn_dim).map(|a| w2[j][a] * h[a][i]).sum()).collect();
        let mx = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = s.iter().map(|x| (x - mx).exp()).sum();
        for i in 0..t {
            let a = (s[i] - mx).exp() / z;
            for k in 0..hp.dim {
                m[j][k] += a * e[i][k];
            }
        }
    }
    m
}

/// Sampled-softmax loss of one sample with the interest index pinned.
pub fn naive_loss(
    params: &ModelParams,
    hp: &Hyperparams,
    context: &[usize],
    target: usize,
    negatives: &[usize],
    selected: usize,
) -> f64 {
    let m = naive_interests(params, hp, context);
    let v = grid(&params.item_emb);
    let logit = |i: usize| (0..hp.dim).map(|k| m[selected][k] * v[i][k]).sum::<f64>();
    let logits: Vec<f64> = std::iter::once(target).chain(negatives.iter().copied()).map(logit).collect();
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    mx + logits.iter().map(|l| (l - mx).exp()).sum::<f64>().ln() - logits[0]
}

/// Full-vocabulary softmax loss of the target under the closest interest.
pub fn naive_full_softmax_loss(params: &ModelParams, hp: &Hyperparams, context: &[usize], target: usize) -> f64 {
    let m = naive_interests(params, hp, context);
    let v = grid(&params.item_emb);
    let score = |j: usize, i: usize| (0..hp.dim).map(|k| m[j][k] * v[i][k]).sum::<f64>();
    let mut sel = 0;
    for j in 1..hp.interests {
        if score(j, target) > score(sel, target) {
            sel = j;
        }
    }
    let logits: Vec<f64> = (0..hp.vocab).map(|i| score(sel, i)).collect();
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    mx + logits.iter().map(|l| (l - mx).exp()).sum::<f64>().ln() - logits[target]
}

/// HSIC through the expanded sums
/// `[Σ K∘L − (2/m) Σ_a (Σ_b K_ab)(Σ_c L_ac) + (Σ K)(Σ L)/m²] / (m−1)²`.
pub fn expanded_hsic(u: &Grid, v: &Grid, sigma_u: f64, sigma_v: f64) -> f64 {
    let m = u.len();
    let rbf = |x: &Vec<f64>, y: &Vec<f64>, s: f64| {
        (-x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (s * s)).exp()
    };
    let k: Grid = (0..m).map(|a| (0..m).map(|b| rbf(&u[a], &u[b], sigma_u)).collect()).collect();
    let l: Grid = (0..m).map(|a| (0..m).map(|b| rbf(&v[a], &v[b], sigma_v)).collect()).collect();
    let mf = m as f64;
    let mut t1 = 0.0;
    for a in 0..m {
        for b in 0..m {
            t1 += k[a][b] * l[a][b];
        }
    }
    let t2: f64 = (0..m).map(|a| k[a].iter().sum::<f64>() * l[a].iter().sum::<f64>()).sum();
    let sk: f64 = k.iter().flatten().sum();
    let sl: f64 = l.iter().flatten().sum();
    (t1 - 2.0 / mf * t2 + sk * sl / (mf * mf)) / ((mf - 1.0) * (mf - 1.0))
}

/// Median of pairwise Euclidean distances over `a < b`.
pub fn naive_median_distance(x: &Grid) -> f64 {
    let mut d = Vec::new();
    for a in 0..x.len() {
        for b in a + 1..x.len() {
            d.push(x[a].iter().zip(&x[b]).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt());
        }
    }
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = d.len();
    if n % 2 == 1 {
        d[n / 2]
    } else {
        (d[n / 2 - 1] + d[n / 2]) / 2.0
    }
}

/// Brute-force weighted correlation loss: λ Σ_{j<k} HSIC over rows ωᵢ·Mᵢ[j].
pub fn naive_corr_loss(interests: &[Grid], omega: &[f64], lambda: f64, sigmas: Option<&[f64]>) -> f64 {
    let c = interests[0].len();
    let rows = |j: usize| -> Grid {
        interests
            .iter()
            .zip(omega)
            .map(|(mi, w)| mi[j].iter().map(|x| w * x).collect())
            .collect()
    };
    let sigma = |j: usize, g: &Grid| match sigmas {
        Some(s) => s[j],
        None => naive_median_distance(g).max(1e-8),
    };
    let mut total = 0.0;
    for j in 0..c {
        for k in j + 1..c {
            let (u, v) = (rows(j), rows(k));
            total += expanded_hsic(&u, &v, sigma(j, &u), sigma(k, &v));
        }
    }
    lambda * total
}

/// `(|a − n| / max(|a|, |n|, floor))`, the gradient-check error measure.
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}
