//! Kernel independence statistics and the sample-weighted correlation loss.
//!
//! The correlation loss for a batch of `m` interest matrices `Mᵢ` (each
//! `c × d`) under sample weights `ω` is
//!
//! ```text
//! λ · Σ_{j<k} HSIC({ωᵢ·Mᵢ[j,:]}ᵢ, {ωᵢ·Mᵢ[k,:]}ᵢ)
//! HSIC(U, V) = tr(K_U P K_V P) / (m−1)²,   P = I − 11ᵀ/m
//! ```
//!
//! with RBF Gram matrices `K[a,b] = exp(−‖x_a − x_b‖² / σ²)`. Bandwidths are
//! fixed or set per interest by the median heuristic on the re-weighted
//! vectors, and are held constant when differentiating with respect to `ω`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{squared_distance, Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum KernelConfig {
    Fixed { sigma: f64 },
    Median { floor: f64 },
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig::Median { floor: 1e-8 }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelConfig::Fixed { sigma } if !(sigma > 0.0) => {
                Err(Error::Config(format!("kernel bandwidth must be positive, got {sigma}")))
            }
            KernelConfig::Median { floor } if !(floor > 0.0) => {
                Err(Error::Config(format!("median bandwidth floor must be positive, got {floor}")))
            }
            _ => Ok(()),
        }
    }

    /// Bandwidth to use for the sample set `x` (rows are samples).
    pub fn bandwidth(&self, x: &Matrix) -> f64 {
        match *self {
            KernelConfig::Fixed { sigma } => sigma,
            KernelConfig::Median { floor } => median_bandwidth(x, floor),
        }
    }
}

pub fn rbf_kernel(u: &[f64], v: &[f64], sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("RBF bandwidth must be positive, got {sigma}")));
    }
    if u.len() != v.len() {
        return Err(Error::Shape(format!("RBF inputs of length {} and {}", u.len(), v.len())));
    }
    Ok((-squared_distance(u, v) / (sigma * sigma)).exp())
}

/// RBF Gram matrix over the rows of `x`.
pub fn gram(x: &Matrix, sigma: f64) -> Matrix {
    let m = x.rows();
    let inv = 1.0 / (sigma * sigma);
    let mut k = Matrix::zeros(m, m);
    for a in 0..m {
        k[(a, a)] = 1.0;
        for b in a + 1..m {
            let v = (-squared_distance(x.row(a), x.row(b)) * inv).exp();
            k[(a, b)] = v;
            k[(b, a)] = v;
        }
    }
    k
}

/// `P K P` for a symmetric `K`.
fn center(k: &Matrix) -> Matrix {
    let m = k.rows();
    let means: Vec<f64> = (0..m).map(|a| k.row(a).iter().sum::<f64>() / m as f64).collect();
    let grand = means.iter().sum::<f64>() / m as f64;
    let mut out = k.clone();
    for a in 0..m {
        let row = out.row_mut(a);
        for b in 0..m {
            row[b] += grand - means[a] - means[b];
        }
    }
    out
}

fn frobenius(a: &Matrix, b: &Matrix) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
}

/// HSIC from two Gram matrices of the same sample order.
pub fn hsic_from_grams(k: &Matrix, l: &Matrix) -> Result<f64> {
    let m = k.rows();
    if m < 2 {
        return Err(Error::InvalidArgument("HSIC needs at least two samples".into()));
    }
    if k.shape() != l.shape() || k.cols() != m {
        return Err(Error::Shape(format!("Gram shapes {:?} and {:?}", k.shape(), l.shape())));
    }
    let denom = ((m - 1) * (m - 1)) as f64;
    Ok(frobenius(&center(k), l) / denom)
}

/// Empirical HSIC between paired samples (row `i` of `u` with row `i` of `v`).
pub fn empirical_hsic(u: &Matrix, v: &Matrix, cfg: &KernelConfig) -> Result<f64> {
    if u.rows() != v.rows() {
        return Err(Error::Shape(format!("{} vs {} samples", u.rows(), v.rows())));
    }
    if u.rows() < 2 {
        return Err(Error::InvalidArgument("HSIC needs at least two samples".into()));
    }
    hsic_from_grams(&gram(u, cfg.bandwidth(u)), &gram(v, cfg.bandwidth(v)))
}

/// Median pairwise Euclidean distance between rows, bounded below by `floor`.
pub fn median_bandwidth(x: &Matrix, floor: f64) -> f64 {
    let m = x.rows();
    let mut dists = Vec::with_capacity(m * m.saturating_sub(1) / 2);
    for a in 0..m {
        for b in a + 1..m {
            dists.push(squared_distance(x.row(a), x.row(b)).sqrt());
        }
    }
    if dists.is_empty() {
        return floor;
    }
    dists.sort_by(f64::total_cmp);
    let n = dists.len();
    let median = if n % 2 == 1 {
        dists[n / 2]
    } else {
        0.5 * (dists[n / 2 - 1] + dists[n / 2])
    };
    median.max(floor)
}

/// Interest matrices of one batch, in the same order as its sample weights.
#[derive(Debug, Clone)]
pub struct InterestBatch {
    interests: Vec<Matrix>,
}

impl InterestBatch {
    pub fn new(interests: Vec<Matrix>) -> Result<Self> {
        if let Some(first) = interests.first() {
            let shape = first.shape();
            if let Some(bad) = interests.iter().find(|m| m.shape() != shape) {
                return Err(Error::Shape(format!(
                    "interest matrices of shape {:?} and {:?} in one batch",
                    shape,
                    bad.shape()
                )));
            }
        }
        Ok(Self { interests })
    }

    pub fn len(&self) -> usize {
        self.interests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interests.is_empty()
    }

    pub fn num_interests(&self) -> usize {
        self.interests.first().map_or(0, Matrix::rows)
    }

    pub fn matrices(&self) -> &[Matrix] {
        &self.interests
    }

    /// Rows `ωᵢ · Mᵢ[j, :]` stacked over the batch.
    fn weighted_interest(&self, j: usize, omega: &[f64]) -> Matrix {
        let d = self.interests[0].cols();
        let mut out = Matrix::zeros(self.len(), d);
        for (i, (m, &w)) in self.interests.iter().zip(omega).enumerate() {
            for (o, x) in out.row_mut(i).iter_mut().zip(m.row(j)) {
                *o = w * x;
            }
        }
        out
    }

    fn check(&self, omega: &[f64]) -> Result<()> {
        if self.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "correlation loss needs at least two samples, got {}",
                self.len()
            )));
        }
        if omega.len() != self.len() {
            return Err(Error::InvalidArgument(format!(
                "{} weights for {} samples",
                omega.len(),
                self.len()
            )));
        }
        Ok(())
    }

    /// Re-weighted interests, their bandwidths, and Gram matrices per interest.
    fn grams(&self, omega: &[f64], cfg: &KernelConfig) -> Vec<(Matrix, f64, Matrix)> {
        (0..self.num_interests())
            .map(|j| {
                let x = self.weighted_interest(j, omega);
                let sigma = cfg.bandwidth(&x);
                let k = gram(&x, sigma);
                (x, sigma, k)
            })
            .collect()
    }
}

pub fn weighted_corr_loss(batch: &InterestBatch, omega: &[f64], lambda: f64, cfg: &KernelConfig) -> Result<f64> {
    batch.check(omega)?;
    let c = batch.num_interests();
    if lambda == 0.0 || c < 2 {
        return Ok(0.0);
    }
    let grams = batch.grams(omega, cfg);
    let mut total = 0.0;
    for j in 0..c {
        for k in j + 1..c {
            total += hsic_from_grams(&grams[j].2, &grams[k].2)?;
        }
    }
    Ok(lambda * total)
}

/// Sum of pairwise HSIC between interests with unit weights.
pub fn pairwise_hsic(batch: &InterestBatch, cfg: &KernelConfig) -> Result<f64> {
    weighted_corr_loss(batch, &vec![1.0; batch.len()], 1.0, cfg)
}

/// `∂ weighted_corr_loss / ∂ω`, bandwidths held fixed.
pub fn corr_loss_grad_weights(
    batch: &InterestBatch,
    omega: &[f64],
    lambda: f64,
    cfg: &KernelConfig,
) -> Result<Vec<f64>> {
    batch.check(omega)?;
    let m = batch.len();
    let c = batch.num_interests();
    let mut grad = vec![0.0; m];
    if lambda == 0.0 || c < 2 {
        return Ok(grad);
    }
    let grams = batch.grams(omega, cfg);
    let centered: Vec<Matrix> = grams.iter().map(|(_, _, k)| center(k)).collect();
    let scale = lambda / ((m - 1) * (m - 1)) as f64;

    // d tr(K P L P) = Σ dK ∘ (P L P) + Σ (P K P) ∘ dL, and for a ≠ b
    // ∂K[a,b]/∂ω_a = −(2/σ²) K[a,b] (ω_a u_a − ω_b u_b)·u_a.
    // Each interest j pairs with every other k, so its Gram derivative is
    // contracted against the sum of the other interests' centered Grams.
    for j in 0..c {
        let mut partner = Matrix::zeros(m, m);
        for k in (0..c).filter(|&k| k != j) {
            partner.add_scaled(1.0, &centered[k])?;
        }
        let (x, sigma, kmat) = &grams[j];
        let coef = -2.0 / (sigma * sigma);
        for a in 0..m {
            // unweighted row: x_a = ω_a·u_a may be zero while u_a is not
            let u_a = batch.interests[a].row(j);
            let xa = x.row(a);
            let mut acc = 0.0;
            for b in 0..m {
                if b == a {
                    continue;
                }
                let diff_dot: f64 = xa.iter().zip(x.row(b)).zip(u_a).map(|((p, q), u)| (p - q) * u).sum();
                acc += partner[(a, b)] * kmat[(a, b)] * coef * diff_dot;
            }
            grad[a] += 2.0 * scale * acc;
        }
    }
    Ok(grad)
}

/// One projected gradient step: `clip(ω − lr·g, lo, hi)`.
pub fn project_step(omega: &mut [f64], grad: &[f64], lr: f64, (lo, hi): (f64, f64)) {
    for (w, g) in omega.iter_mut().zip(grad) {
        *w = (*w - lr * g).clamp(lo, hi);
    }
}

/// `steps` projected gradient descent updates, recomputing the gradient each time.
pub fn update_weights(
    omega: &[f64],
    mut grad: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    lr: f64,
    steps: usize,
    bounds: (f64, f64),
) -> Result<Vec<f64>> {
    let mut w = omega.to_vec();
    for _ in 0..steps {
        let g = grad(&w)?;
        project_step(&mut w, &g, lr, bounds);
    }
    Ok(w)
}

/// HSIC statistic and its permutation null, built by shuffling the pairing
/// of `v` against `u`. Grams are computed once and permuted.
pub fn permutation_null(
    u: &Matrix,
    v: &Matrix,
    cfg: &KernelConfig,
    permutations: usize,
    rng: &mut Rng,
) -> Result<(f64, Vec<f64>)> {
    if u.rows() != v.rows() || u.rows() < 2 {
        return Err(Error::InvalidArgument("permutation test needs ≥ 2 paired samples".into()));
    }
    let m = u.rows();
    let kc = center(&gram(u, cfg.bandwidth(u)));
    let l = gram(v, cfg.bandwidth(v));
    let denom = ((m - 1) * (m - 1)) as f64;
    let stat = frobenius(&kc, &l) / denom;
    let mut perm: Vec<usize> = (0..m).collect();
    let mut null = Vec::with_capacity(permutations);
    for _ in 0..permutations {
        rng.shuffle(&mut perm);
        let mut s = 0.0;
        for a in 0..m {
            let kr = kc.row(a);
            let lr = l.row(perm[a]);
            for b in 0..m {
                s += kr[b] * lr[perm[b]];
            }
        }
        null.push(s / denom);
    }
    Ok((stat, null))
}

/// Empirical `q`-quantile (nearest-rank) of `xs`.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = ((q * s.len() as f64).ceil() as usize).clamp(1, s.len());
    s[rank - 1]
}
