use std::cmp::Ordering;

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::numerics::{Rng, Stream};

const MIN_USERS: usize = 10;

fn check_size(dataset: &Dataset) -> Result<()> {
    if dataset.num_users() < MIN_USERS {
        return Err(Error::Data(format!(
            "splitting needs at least {MIN_USERS} users, got {}",
            dataset.num_users()
        )));
    }
    Ok(())
}

fn share(n: usize, fraction: f64) -> usize {
    (n as f64 * fraction).round() as usize
}

/// Uniform user-level 8:1:1 partition.
pub fn random_split(dataset: &Dataset, seed: u64) -> Result<Dataset> {
    check_size(dataset)?;
    let n = dataset.num_users();
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed, Stream::Splits).shuffle(&mut order);
    let n_valid = share(n, 0.1);
    let n_test = share(n, 0.1);
    let mut out = dataset.clone();
    for (rank, &user) in order.iter().enumerate() {
        out.splits[user] = Some(if rank < n_valid {
            Split::Valid
        } else if rank < n_valid + n_test {
            Split::Test
        } else {
            Split::Train
        });
    }
    Ok(out)
}

/// Grows a group of similar users greedily and holds part of it out as the
/// test split.
///
/// Starting from a uniformly drawn user, the unselected user whose item set
/// has the highest Jaccard similarity with the union of the selected users'
/// items joins the group (ties to the lowest user id) until half the users
/// are in it. Test users are 10% of that group; validation users are 10% and
/// training users 80% of the rest. Users in neither are left unassigned.
pub fn ood_split(dataset: &Dataset, seed: u64) -> Result<Dataset> {
    check_size(dataset)?;
    let mut rng = Rng::new(seed, Stream::Splits);
    let selected = greedy_jaccard_group(dataset, &mut rng);

    let (mut group, mut rest): (Vec<usize>, Vec<usize>) = (0..dataset.num_users()).partition(|&u| selected[u]);
    rng.shuffle(&mut group);
    rng.shuffle(&mut rest);
    let n_test = share(group.len(), 0.1).max(1);
    let n_valid = share(rest.len(), 0.1).max(1);
    let n_train = share(rest.len(), 0.8).min(rest.len() - n_valid);

    let mut out = dataset.clone();
    out.splits.iter_mut().for_each(|s| *s = None);
    for &u in &group[..n_test] {
        out.splits[u] = Some(Split::Test);
    }
    for &u in &rest[..n_valid] {
        out.splits[u] = Some(Split::Valid);
    }
    for &u in &rest[n_valid..n_valid + n_train] {
        out.splits[u] = Some(Split::Train);
    }
    Ok(out)
}

/// Membership flags of the greedily grown group (`⌈n/2⌉` users). With a
/// fresh `Splits` stream for `seed` this is the group [`ood_split`] uses.
pub fn greedy_jaccard_group(dataset: &Dataset, rng: &mut Rng) -> Vec<bool> {
    let n = dataset.num_users();
    let item_sets: Vec<Vec<usize>> = dataset
        .sequences
        .iter()
        .map(|s| {
            let mut items = s.items.clone();
            items.sort_unstable();
            items.dedup();
            items
        })
        .collect();
    let mut holders: Vec<Vec<usize>> = vec![Vec::new(); dataset.vocab];
    for (u, items) in item_sets.iter().enumerate() {
        for &i in items {
            holders[i].push(u);
        }
    }

    let mut in_union = vec![false; dataset.vocab];
    let mut union_size = 0usize;
    // |items(u) ∩ union| for every user, maintained as the union grows.
    let mut overlap = vec![0usize; n];
    let mut selected = vec![false; n];
    let mut add = |u: usize, selected: &mut Vec<bool>, overlap: &mut Vec<usize>| {
        selected[u] = true;
        for &i in &item_sets[u] {
            if !in_union[i] {
                in_union[i] = true;
                union_size += 1;
                for &v in &holders[i] {
                    overlap[v] += 1;
                }
            }
        }
        union_size
    };

    let target = n.div_ceil(2);
    let mut union_len = add(rng.below(0, n), &mut selected, &mut overlap);
    for _ in 1..target {
        // Compare overlap/(|a| + |U| − overlap) exactly by cross-multiplying.
        let mut best: Option<(usize, usize, usize)> = None;
        for u in (0..n).filter(|&u| !selected[u]) {
            let inter = overlap[u];
            let uni = item_sets[u].len() + union_len - inter;
            let better = match best {
                None => true,
                Some((_, bi, bu)) => (inter * bu).cmp(&(bi * uni)) == Ordering::Greater,
            };
            if better {
                best = Some((u, inter, uni));
            }
        }
        let (u, _, _) = best.expect("fewer users than the group target");
        union_len = add(u, &mut selected, &mut overlap);
    }
    selected
}
