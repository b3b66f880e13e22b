//! Greedy Jaccard split on the synthetic data: test users come from a group
//! of mutually similar users, training and validation users from the rest.
//!
//!     cargo run --release --example ood_split -- 3

use std::collections::BTreeSet;

use desmil::data::{generate_synthetic, greedy_jaccard_group, jaccard, ood_split, random_split, Split, SyntheticConfig};
use desmil::numerics::{Rng, Stream};
use desmil::Result;

fn main() -> Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(0, |a| a.parse().expect("seed"));
    let data = generate_synthetic(&SyntheticConfig { seed, ..SyntheticConfig::default() })?.dataset;
    let sets: Vec<BTreeSet<usize>> = data.sequences.iter().map(|s| s.items.iter().copied().collect()).collect();

    let group = greedy_jaccard_group(&data, &mut Rng::new(seed, Stream::Splits));
    let mean = |pick: &dyn Fn(usize, usize) -> bool| {
        let (mut sum, mut n) = (0.0, 0usize);
        for a in 0..sets.len() {
            for b in a + 1..sets.len() {
                if pick(a, b) {
                    sum += jaccard(&sets[a], &sets[b]);
                    n += 1;
                }
            }
        }
        sum / n.max(1) as f64
    };
    println!("users {}, group size {}", data.num_users(), group.iter().filter(|&&g| g).count());
    println!("mean Jaccard inside group {:.4}", mean(&|a, b| group[a] && group[b]));
    println!("mean Jaccard across       {:.4}", mean(&|a, b| group[a] != group[b]));

    for (name, split) in [("ood", ood_split(&data, seed)?), ("random", random_split(&data, seed)?)] {
        let unassigned = split.num_users() - [Split::Train, Split::Valid, Split::Test].iter().map(|&s| split.count(s)).sum::<usize>();
        println!(
            "{name:<6} train {} valid {} test {} unassigned {unassigned}",
            split.count(Split::Train),
            split.count(Split::Valid),
            split.count(Split::Test)
        );
    }
    Ok(())
}
