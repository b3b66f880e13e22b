//! Interaction data, user-level splits, training/evaluation example
//! construction, and a synthetic generator with stable and noisy topics.

pub(crate) mod io;
mod split;
mod synthetic;

pub use io::{
    load_interactions, parse_interactions, read_split_file, save_interactions, write_item_map,
    write_split_file, write_synthetic_truth, DEFAULT_MIN_LEN,
};
pub use split::{greedy_jaccard_group, ood_split, random_split};
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticData, UserTopics};

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interaction {
    pub user: u64,
    pub item: u64,
    pub ts: i64,
}

/// One user's items in time order, as dense item ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSequence {
    pub user: u64,
    pub items: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split `{other}`"))),
        }
    }
}

/// Environment tag of a synthetic user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Env {
    InDistribution,
    Ood,
}

impl Env {
    pub fn as_str(self) -> &'static str {
        match self {
            Env::InDistribution => "iid",
            Env::Ood => "ood",
        }
    }
}

impl fmt::Display for Env {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Env {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "iid" => Ok(Env::InDistribution),
            "ood" => Ok(Env::Ood),
            other => Err(Error::Data(format!("unknown environment tag `{other}`"))),
        }
    }
}

/// Sequences sorted by user id, with optional split and environment per user.
/// Users without a split are excluded from every split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sequences: Vec<UserSequence>,
    pub vocab: usize,
    pub splits: Vec<Option<Split>>,
    pub envs: Vec<Option<Env>>,
    /// Raw item id for each dense id.
    pub item_ids: Vec<u64>,
}

impl Dataset {
    pub fn new(mut sequences: Vec<UserSequence>, vocab: usize, item_ids: Vec<u64>) -> Result<Self> {
        sequences.sort_by_key(|s| s.user);
        if sequences.windows(2).any(|w| w[0].user == w[1].user) {
            return Err(Error::Data("duplicate user in dataset".into()));
        }
        if let Some(bad) = sequences.iter().flat_map(|s| &s.items).find(|&&i| i >= vocab) {
            return Err(Error::Data(format!("item id {bad} outside vocabulary {vocab}")));
        }
        let n = sequences.len();
        Ok(Self {
            sequences,
            vocab,
            splits: vec![None; n],
            envs: vec![None; n],
            item_ids,
        })
    }

    pub fn num_users(&self) -> usize {
        self.sequences.len()
    }

    pub fn index_of(&self, user: u64) -> Option<usize> {
        self.sequences.binary_search_by_key(&user, |s| s.user).ok()
    }

    pub fn users_in(&self, split: Split) -> impl Iterator<Item = (usize, &UserSequence)> {
        self.sequences
            .iter()
            .enumerate()
            .filter(move |(i, _)| self.splits[*i] == Some(split))
    }

    pub fn count(&self, split: Split) -> usize {
        self.splits.iter().filter(|s| **s == Some(split)).count()
    }

    pub fn has_envs(&self) -> bool {
        self.envs.iter().any(Option::is_some)
    }

    /// Distinct environment tags among the users of `split`, comma-joined.
    pub fn env_label(&self, split: Split) -> Option<String> {
        let tags: BTreeSet<Env> = self
            .users_in(split)
            .filter_map(|(i, _)| self.envs[i])
            .collect();
        if tags.is_empty() {
            None
        } else {
            Some(tags.iter().map(|e| e.as_str()).collect::<Vec<_>>().join("+"))
        }
    }
}

/// `(user, cut position)`: identifies a training example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SampleKey {
    pub user: u64,
    pub cut: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingExample {
    pub context: Vec<usize>,
    pub target: usize,
    pub key: SampleKey,
}

/// Draws a cut uniformly from `1..len`; the item at the cut is the target and
/// up to `max_len` items before it are the context.
pub fn make_training_example(seq: &UserSequence, rng: &mut Rng, max_len: usize) -> Result<TrainingExample> {
    let len = seq.items.len();
    if len < 2 {
        return Err(Error::Data(format!(
            "user {} has {len} items; a training example needs two",
            seq.user
        )));
    }
    let cut = rng.below(1, len);
    Ok(training_example_at(seq, cut, max_len))
}

pub fn training_example_at(seq: &UserSequence, cut: usize, max_len: usize) -> TrainingExample {
    TrainingExample {
        context: seq.items[cut.saturating_sub(max_len)..cut].to_vec(),
        target: seq.items[cut],
        key: SampleKey {
            user: seq.user,
            cut: cut as u32,
        },
    }
}

/// Prefix of `⌈0.8·len⌉` items as context (truncated to the last `max_len`),
/// the remaining items as the ground-truth set.
pub fn eval_examples(seq: &UserSequence, max_len: usize) -> (Vec<usize>, BTreeSet<usize>) {
    let len = seq.items.len();
    let split_at = (4 * len).div_ceil(5);
    let context = &seq.items[..split_at];
    let context = context[context.len().saturating_sub(max_len)..].to_vec();
    let truth = seq.items[split_at..].iter().copied().collect();
    (context, truth)
}

/// `|a ∩ b| / |a ∪ b|`, zero when both are empty.
pub fn jaccard(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}
