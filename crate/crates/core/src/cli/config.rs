//! Run configuration: a sectioned `key = value` file (TOML) with
//! command-line overrides applied on top.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::data::{SyntheticConfig, DEFAULT_MIN_LEN};
use crate::error::{Error, Result};
use crate::hsic::KernelConfig;
use crate::model::Hyperparams;
use crate::trainer::TrainOptions;

/// Environment variable naming the config file used when `--config` is absent.
pub const CONFIG_ENV: &str = "DESMIL_CONFIG";

const SECTIONS: [&str; 5] = ["model", "data", "train", "synthetic", "output"];

/// Every hyperparameter except the vocabulary, which comes from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub dim: usize,
    pub attn_dim: usize,
    pub interests: usize,
    pub max_len: usize,
    pub lambda: f64,
    pub negatives: usize,
    pub lr: f64,
    pub lr_weights: f64,
    pub weight_steps: usize,
    pub weight_bounds: (f64, f64),
    pub kernel: KernelConfig,
    pub batch_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let hp = Hyperparams::new(0);
        Self {
            dim: hp.dim,
            attn_dim: hp.attn_dim,
            interests: hp.interests,
            max_len: hp.max_len,
            lambda: hp.lambda,
            negatives: hp.negatives,
            lr: hp.lr,
            lr_weights: hp.lr_weights,
            weight_steps: hp.weight_steps,
            weight_bounds: hp.weight_bounds,
            kernel: hp.kernel,
            batch_size: hp.batch_size,
        }
    }
}

impl ModelConfig {
    pub fn hyperparams(&self, vocab: usize) -> Hyperparams {
        Hyperparams {
            dim: self.dim,
            attn_dim: self.attn_dim,
            interests: self.interests,
            max_len: self.max_len,
            vocab,
            lambda: self.lambda,
            negatives: self.negatives,
            lr: self.lr,
            lr_weights: self.lr_weights,
            weight_steps: self.weight_steps,
            weight_bounds: self.weight_bounds,
            kernel: self.kernel,
            batch_size: self.batch_size,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    Ood,
    Random,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// `user_id,item_id,timestamp` file; defaults to `<output>/interactions.csv`.
    pub interactions: Option<PathBuf>,
    /// Split file; defaults to `<output>/splits.csv`.
    pub splits: Option<PathBuf>,
    pub split_mode: SplitMode,
    pub min_len: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            interactions: None,
            splits: None,
            split_mode: SplitMode::File,
            min_len: DEFAULT_MIN_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    /// Batches between validations; 0 validates once per epoch.
    pub eval_every: u64,
    /// Validations without improvement before stopping; 0 disables early stopping.
    pub patience: usize,
    pub max_epochs: u64,
    /// Runs the sample-weight update. Off reproduces a plain weighted trainer.
    pub decorrelate: bool,
    pub histogram_bins: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            eval_every: 0,
            patience: 3,
            max_epochs: 50,
            decorrelate: true,
            histogram_bins: 20,
        }
    }
}

impl TrainConfig {
    pub fn options(&self) -> TrainOptions {
        TrainOptions {
            eval_every: (self.eval_every > 0).then_some(self.eval_every),
            patience: (self.patience > 0).then_some(self.patience),
            max_epochs: self.max_epochs,
            decorrelate: self.decorrelate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub model: ModelConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub synthetic: SyntheticConfig,
    pub output: OutputConfig,
}

impl Config {
    /// Parses config text, applies `(key, value)` overrides, and validates.
    /// Keys are `section.key` or a bare key that names a field of exactly
    /// one section. Values are read as TOML literals, falling back to strings.
    pub fn load(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: Table = text.parse().map_err(|e| Error::Config(format!("config: {e}")))?;
        for (key, raw) in overrides {
            apply_override(&mut table, key, raw)?;
        }
        let cfg: Config = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        // Any vocabulary larger than the negative count is a valid stand-in.
        self.model.hyperparams(self.model.negatives + 1).validate()?;
        self.synthetic.validate()?;
        if self.train.histogram_bins == 0 {
            return Err(Error::Config("histogram_bins must be at least 1".into()));
        }
        Ok(())
    }

    pub fn interactions_path(&self) -> PathBuf {
        self.data.interactions.clone().unwrap_or_else(|| self.output.dir.join("interactions.csv"))
    }

    pub fn splits_path(&self) -> PathBuf {
        self.data.splits.clone().unwrap_or_else(|| self.output.dir.join("splits.csv"))
    }

    /// The effective configuration in the same format it is read from.
    pub fn to_text(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }
}

fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

fn default_table() -> Table {
    match Value::try_from(Config::default()) {
        Ok(Value::Table(t)) => t,
        _ => unreachable!("the default config serializes to a table"),
    }
}

fn resolve_key(key: &str) -> Result<Vec<String>> {
    let parts: Vec<String> = key.split('.').map(str::to_string).collect();
    if parts.len() > 1 {
        return Ok(parts);
    }
    let defaults = default_table();
    let owners: Vec<&str> = SECTIONS
        .iter()
        .copied()
        .filter(|s| defaults.get(*s).and_then(Value::as_table).is_some_and(|t| t.contains_key(key)) || field_is_optional(s, key))
        .collect();
    match owners.as_slice() {
        [one] => Ok(vec![one.to_string(), key.to_string()]),
        [] => Err(Error::Config(format!("unknown option `{key}`"))),
        many => Err(Error::Config(format!(
            "option `{key}` is ambiguous; use one of {}",
            many.iter().map(|s| format!("{s}.{key}")).collect::<Vec<_>>().join(", ")
        ))),
    }
}

/// Optional fields are omitted when serializing the defaults.
fn field_is_optional(section: &str, key: &str) -> bool {
    section == "data" && matches!(key, "interactions" | "splits")
}

fn apply_override(table: &mut Table, key: &str, raw: &str) -> Result<()> {
    let path = resolve_key(key)?;
    let mut cur = table;
    for part in &path[..path.len() - 1] {
        let entry = cur.entry(part.clone()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{part}` in `{key}` is not a section")))?;
    }
    cur.insert(path[path.len() - 1].clone(), parse_value(raw));
    Ok(())
}

/// Splits `--key value` / `--key=value` pairs.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            return Err(Error::Config(format!("expected `--key value`, found `{arg}`")));
        };
        match flag.split_once('=') {
            Some((k, v)) => out.push((k.to_string(), v.to_string())),
            None => {
                let v = it.next().ok_or_else(|| Error::Config(format!("`--{flag}` needs a value")))?;
                out.push((flag.to_string(), v.clone()));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(xs: &[(&str, &str)]) -> Vec<(String, String)> {
        xs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(Config::load("", &[]).unwrap(), Config::default());
    }

    #[test]
    fn flags_win_over_file() {
        let text = "[model]\nlambda = 0.5\ndim = 16\n";
        let cfg = Config::load(text, &pairs(&[("lambda", "0.0"), ("train.seed", "7")])).unwrap();
        assert_eq!(cfg.model.lambda, 0.0);
        assert_eq!(cfg.model.dim, 16);
        assert_eq!(cfg.train.seed, 7);
    }

    #[test]
    fn nested_and_string_values() {
        let o = pairs(&[
            ("model.kernel.mode", "fixed"),
            ("model.kernel.sigma", "2.5"),
            ("split_mode", "ood"),
            ("weight_bounds", "[0.1, 0.9]"),
            ("dir", "/tmp/x"),
        ]);
        let cfg = Config::load("", &o).unwrap();
        assert_eq!(cfg.model.kernel, KernelConfig::Fixed { sigma: 2.5 });
        assert_eq!(cfg.data.split_mode, SplitMode::Ood);
        assert_eq!(cfg.model.weight_bounds, (0.1, 0.9));
        assert_eq!(cfg.output.dir, PathBuf::from("/tmp/x"));
        // a median kernel has no `sigma`
        assert!(Config::load("", &o[1..2]).is_err());
    }

    #[test]
    fn unknown_and_ambiguous_keys_are_rejected() {
        assert!(Config::load("[model]\nbogus = 1\n", &[]).is_err());
        assert!(Config::load("", &pairs(&[("bogus", "1")])).is_err());
        assert!(Config::load("", &pairs(&[("seed", "1")])).is_err());
        assert!(Config::load("", &pairs(&[("synthetic.seed", "1")])).is_ok());
    }

    #[test]
    fn invalid_values_fail_validation() {
        let err = Config::load("", &pairs(&[("lambda", "-1")])).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(Config::load("", &pairs(&[("rho_test", "1.5")])).is_err());
    }

    #[test]
    fn text_round_trips() {
        let cfg = Config::load("", &pairs(&[("interactions", "data/x.csv"), ("lambda", "0.25")])).unwrap();
        assert_eq!(Config::load(&cfg.to_text().unwrap(), &[]).unwrap(), cfg);
    }

    #[test]
    fn override_pairs() {
        let args: Vec<String> = ["--a", "1", "--b=2"].iter().map(|s| s.to_string()).collect();
        assert_eq!(parse_overrides(&args).unwrap(), pairs(&[("a", "1"), ("b", "2")]));
        assert!(parse_overrides(&["--a".to_string()]).is_err());
        assert!(parse_overrides(&["a".to_string()]).is_err());
    }
}
