use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::{Dataset, Env, Interaction, Split, SyntheticData, UserSequence};
use crate::error::{Error, Result};

pub const DEFAULT_MIN_LEN: usize = 5;

/// Reads a `user_id,item_id,timestamp` file.
pub fn load_interactions(path: impl AsRef<Path>, min_len: usize) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let interactions = parse_interactions(&text)?;
    build_dataset(&interactions, min_len)
}

/// Parses interaction lines. A non-numeric first line is taken as a header.
pub fn parse_interactions(text: &str) -> Result<Vec<Interaction>> {
    let mut out = Vec::new();
    let mut first = true;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let was_first = std::mem::replace(&mut first, false);
        match parse_line(line) {
            Some(i) => out.push(i),
            None if was_first && looks_like_header(line) => {}
            None => {
                return Err(Error::Data(format!(
                    "line {}: expected `user_id,item_id,timestamp`, got `{line}`",
                    lineno + 1
                )))
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Data("no interactions in input".into()));
    }
    Ok(out)
}

fn parse_line(line: &str) -> Option<Interaction> {
    let mut fields = line.split(',').map(str::trim);
    let user = fields.next()?.parse().ok()?;
    let item = fields.next()?.parse().ok()?;
    let ts = fields.next()?.parse().ok()?;
    if fields.next().is_some() {
        return None;
    }
    Some(Interaction { user, item, ts })
}

fn looks_like_header(line: &str) -> bool {
    line.split(',')
        .all(|f| f.trim().parse::<f64>().is_err() && !f.trim().is_empty())
}

/// Groups by user, orders by timestamp (input order breaks ties), drops users
/// shorter than `min_len`, and densely re-indexes items in raw-id order.
fn build_dataset(interactions: &[Interaction], min_len: usize) -> Result<Dataset> {
    let mut by_user: BTreeMap<u64, Vec<(i64, usize, u64)>> = BTreeMap::new();
    for (pos, it) in interactions.iter().enumerate() {
        by_user.entry(it.user).or_default().push((it.ts, pos, it.item));
    }
    by_user.retain(|_, v| v.len() >= min_len);
    if by_user.is_empty() {
        return Err(Error::Data(format!("no user has at least {min_len} interactions")));
    }
    for events in by_user.values_mut() {
        events.sort_by_key(|&(ts, pos, _)| (ts, pos));
    }
    let item_ids: Vec<u64> = by_user
        .values()
        .flatten()
        .map(|&(_, _, item)| item)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let dense: BTreeMap<u64, usize> = item_ids.iter().enumerate().map(|(i, &raw)| (raw, i)).collect();
    let sequences = by_user
        .into_iter()
        .map(|(user, events)| UserSequence {
            user,
            items: events.iter().map(|(_, _, item)| dense[item]).collect(),
        })
        .collect();
    Dataset::new(sequences, item_ids.len(), item_ids)
}

/// Writes the canonical interaction file: raw ids, timestamps = positions.
pub fn save_interactions(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for seq in &dataset.sequences {
        for (ts, &item) in seq.items.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", seq.user, dataset.item_ids[item], ts);
        }
    }
    write_file(path, &out)
}

/// `user_id,split[,env]` for every assigned user.
pub fn write_split_file(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for (i, seq) in dataset.sequences.iter().enumerate() {
        if let Some(split) = dataset.splits[i] {
            match dataset.envs[i] {
                Some(env) => writeln!(out, "{},{},{}", seq.user, split, env),
                None => writeln!(out, "{},{}", seq.user, split),
            }
            .expect("writing to a String cannot fail");
        }
    }
    write_file(path, &out)
}

/// Assigns splits (and environments, when present) from a split file. Users
/// not listed are left unassigned; listed users absent from the dataset
/// (e.g. filtered out) are ignored.
pub fn read_split_file(dataset: &mut Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    dataset.splits.iter_mut().for_each(|s| *s = None);
    dataset.envs.iter_mut().for_each(|s| *s = None);
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let malformed = || Error::Data(format!("{}:{}: malformed split line `{line}`", path.display(), lineno + 1));
        if !(2..=3).contains(&fields.len()) {
            return Err(malformed());
        }
        let user: u64 = match fields[0].parse() {
            Ok(u) => u,
            Err(_) if lineno == 0 => continue,
            Err(_) => return Err(malformed()),
        };
        let split: Split = fields[1].parse().map_err(|_| malformed())?;
        let env = fields.get(2).map(|e| e.parse::<Env>()).transpose().map_err(|_| malformed())?;
        if let Some(i) = dataset.index_of(user) {
            dataset.splits[i] = Some(split);
            dataset.envs[i] = env;
        }
    }
    Ok(())
}

pub fn write_synthetic_truth(data: &SyntheticData, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("user_id,stable_topic,noisy_topic,env\n");
    for t in &data.truth {
        let _ = writeln!(out, "{},{},{},{}", t.user, t.stable, t.noisy, t.env);
    }
    write_file(path, &out)
}

/// `dense_id,raw_id` lines.
pub fn write_item_map(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("dense_id,raw_id\n");
    for (dense, raw) in dataset.item_ids.iter().enumerate() {
        let _ = writeln!(out, "{dense},{raw}");
    }
    write_file(path, &out)
}

pub(crate) fn write_file(path: impl AsRef<Path>, contents: &str) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}
