//! Synthetic users with one stable and one noisy topic.
//!
//! Items are split into `stable_topics` stable pools followed by
//! `noisy_topics` noisy pools. Each user has a stable topic `s`, which alone
//! drives the item to predict, and a noisy topic `n` that is tied to `s`
//! (`n = s`, the paired topic) with probability `ρ` and otherwise drawn from
//! the remaining noisy topics. Training and validation users use `ρ_train`,
//! test users `ρ_test`, so lowering `ρ_test` removes the stable→noisy
//! dependency a model could latch on to.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Env, Split, UserSequence};
use crate::error::{Error, Result};
use crate::numerics::{Rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub stable_topics: usize,
    pub noisy_topics: usize,
    pub items_per_topic: usize,
    pub train_users: usize,
    pub valid_users: usize,
    pub test_users: usize,
    pub seq_len: usize,
    /// Probability that an item is drawn from the stable pool.
    pub stable_fraction: f64,
    pub rho_train: f64,
    pub rho_test: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            stable_topics: 4,
            noisy_topics: 4,
            items_per_topic: 50,
            train_users: 2000,
            valid_users: 250,
            test_users: 500,
            seq_len: 20,
            stable_fraction: 0.6,
            rho_train: 0.9,
            rho_test: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.stable_topics == 0 || self.stable_topics != self.noisy_topics {
            return bad(format!(
                "need stable_topics = noisy_topics ≥ 1, got {} and {}",
                self.stable_topics, self.noisy_topics
            ));
        }
        if self.items_per_topic == 0 || self.seq_len < 2 {
            return bad("items_per_topic must be ≥ 1 and seq_len ≥ 2".into());
        }
        for (name, p) in [
            ("stable_fraction", self.stable_fraction),
            ("rho_train", self.rho_train),
            ("rho_test", self.rho_test),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if self.noisy_topics == 1 && (self.rho_train < 1.0 || self.rho_test < 1.0) {
            return bad("a single noisy topic cannot be decoupled; use ρ = 1".into());
        }
        Ok(())
    }

    pub fn vocab(&self) -> usize {
        (self.stable_topics + self.noisy_topics) * self.items_per_topic
    }

    pub fn stable_pool(&self, topic: usize) -> std::ops::Range<usize> {
        topic * self.items_per_topic..(topic + 1) * self.items_per_topic
    }

    pub fn noisy_pool(&self, topic: usize) -> std::ops::Range<usize> {
        let base = self.stable_topics * self.items_per_topic;
        base + topic * self.items_per_topic..base + (topic + 1) * self.items_per_topic
    }

    /// Noisy topic coupled to stable topic `s`.
    pub fn paired(&self, stable: usize) -> usize {
        stable % self.noisy_topics
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UserTopics {
    pub user: u64,
    pub stable: usize,
    pub noisy: usize,
    pub env: Env,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub truth: Vec<UserTopics>,
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let mut rng = Rng::new(cfg.seed, Stream::Synthetic);
    let groups = [
        (cfg.train_users, cfg.rho_train, Split::Train, Env::InDistribution),
        (cfg.valid_users, cfg.rho_train, Split::Valid, Env::InDistribution),
        (cfg.test_users, cfg.rho_test, Split::Test, Env::Ood),
    ];
    let mut sequences = Vec::new();
    let mut truth = Vec::new();
    let mut tags = Vec::new();
    for (count, rho, split, env) in groups {
        for _ in 0..count {
            let user = sequences.len() as u64;
            let stable = rng.below(0, cfg.stable_topics);
            let paired = cfg.paired(stable);
            let noisy = if rng.bernoulli(rho) {
                paired
            } else {
                // uniform over the other noisy topics
                let k = rng.below(0, cfg.noisy_topics - 1);
                if k >= paired {
                    k + 1
                } else {
                    k
                }
            };
            let stable_pool = cfg.stable_pool(stable);
            let noisy_pool = cfg.noisy_pool(noisy);
            let mut items = Vec::with_capacity(cfg.seq_len);
            for pos in 0..cfg.seq_len {
                let last = pos + 1 == cfg.seq_len;
                let pool = if last || rng.bernoulli(cfg.stable_fraction) {
                    stable_pool.clone()
                } else {
                    noisy_pool.clone()
                };
                items.push(rng.below(pool.start, pool.end));
            }
            sequences.push(UserSequence { user, items });
            truth.push(UserTopics {
                user,
                stable,
                noisy,
                env,
            });
            tags.push((split, env));
        }
    }
    let vocab = cfg.vocab();
    let mut dataset = Dataset::new(sequences, vocab, (0..vocab as u64).collect())?;
    for (i, (split, env)) in tags.into_iter().enumerate() {
        dataset.splits[i] = Some(split);
        dataset.envs[i] = Some(env);
    }
    Ok(SyntheticData { dataset, truth })
}
