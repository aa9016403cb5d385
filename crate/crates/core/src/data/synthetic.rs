//! Synthetic interaction logs with category structure and skewed popularity.

use super::log::{CategoryId, Interaction, InteractionLog, ItemId};
use crate::error::{Error, Result};
use crate::numerics::{Purpose, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub num_categories: usize,
    /// Concentration of each user's Dirichlet category preference.
    pub dirichlet_alpha: f64,
    /// Zipf exponent of within-category item popularity; 0 is uniform.
    pub zipf_s: f64,
    /// Inclusive bounds on the number of interactions per user.
    pub seq_len_range: (usize, usize),
    /// Probability that an interaction stays in the previous interaction's category.
    pub stickiness: f64,
    /// Probability that an item carries a second category.
    pub multi_category_prob: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_users: 2000,
            num_items: 500,
            num_categories: 10,
            dirichlet_alpha: 0.5,
            zipf_s: 1.0,
            seq_len_range: (10, 30),
            stickiness: 0.5,
            multi_category_prob: 0.2,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_users == 0 || self.num_categories == 0 {
            return bad("num_users and num_categories must be positive".into());
        }
        if self.num_items < 20 * self.num_categories {
            return bad(format!(
                "num_items ({}) must be at least 20 * num_categories ({})",
                self.num_items,
                20 * self.num_categories
            ));
        }
        if self.num_categories > CategoryId::MAX as usize {
            return bad("too many categories".into());
        }
        let (lo, hi) = self.seq_len_range;
        if lo == 0 || lo > hi {
            return bad(format!("invalid seq_len_range {lo}..={hi}"));
        }
        if !(self.dirichlet_alpha > 0.0) || !(self.zipf_s >= 0.0) {
            return bad("dirichlet_alpha must be > 0 and zipf_s >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.stickiness)
            || !(0.0..=1.0).contains(&self.multi_category_prob)
        {
            return bad("stickiness and multi_category_prob must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// Item side of the generator: categories per item and Zipf weights per category.
#[derive(Clone, Debug)]
pub struct SyntheticCatalog {
    pub item_categories: Vec<Vec<CategoryId>>,
    /// For each category, its member items and their sampling weights.
    pub members: Vec<Vec<(ItemId, f64)>>,
}

pub fn synthetic_catalog(config: &SyntheticConfig, seed: u64) -> Result<SyntheticCatalog> {
    config.validate()?;
    let c = config.num_categories;
    let mut rng = Rng::stream(seed, Purpose::Synthetic, &[u64::MAX]);
    // Round-robin primary categories guarantee every category at least
    // num_items / num_categories >= 20 items.
    let mut item_categories: Vec<Vec<CategoryId>> = (0..config.num_items)
        .map(|i| vec![(i % c) as CategoryId])
        .collect();
    if c > 1 {
        for cats in item_categories.iter_mut() {
            if rng.uniform() < config.multi_category_prob {
                let mut extra = rng.below(c - 1) as CategoryId;
                if extra >= cats[0] {
                    extra += 1;
                }
                cats.push(extra);
            }
        }
    }
    let members: Vec<Vec<(ItemId, f64)>> = (0..c)
        .map(|cat| {
            let mut items: Vec<ItemId> = (0..config.num_items)
                .filter(|&i| item_categories[i].contains(&(cat as CategoryId)))
                .map(|i| i as ItemId)
                .collect();
            rng.shuffle(&mut items);
            items
                .into_iter()
                .enumerate()
                .map(|(rank, i)| (i, 1.0 / ((rank + 1) as f64).powf(config.zipf_s)))
                .collect()
        })
        .collect();
    Ok(SyntheticCatalog {
        item_categories,
        members,
    })
}

/// Generates a log: each user draws a category preference from a symmetric
/// Dirichlet, then each interaction picks a category (repeating the previous
/// one with probability `stickiness`) and an item within it by Zipf weight.
/// Timestamps count up from 1 per user.
pub fn generate_synthetic(config: &SyntheticConfig, seed: u64) -> Result<InteractionLog> {
    let cat = synthetic_catalog(config, seed)?;
    let c = config.num_categories;
    let weights: Vec<Vec<f64>> = cat
        .members
        .iter()
        .map(|m| m.iter().map(|&(_, w)| w).collect())
        .collect();
    let mut records = Vec::new();
    let (lo, hi) = config.seq_len_range;
    for user in 0..config.num_users {
        let mut rng = Rng::stream(seed, Purpose::Synthetic, &[user as u64]);
        let pref = rng.dirichlet(config.dirichlet_alpha, c)?;
        let len = lo + rng.below(hi - lo + 1);
        let mut prev: Option<usize> = None;
        for t in 0..len {
            let category = match prev {
                Some(p) if rng.uniform() < config.stickiness => p,
                _ => rng.categorical(&pref)?,
            };
            prev = Some(category);
            let k = rng.categorical(&weights[category])?;
            let item = cat.members[category][k].0;
            records.push(Interaction {
                user: user as u32,
                item,
                timestamp: t as i64 + 1,
                categories: cat.item_categories[item as usize].clone(),
            });
        }
    }
    Ok(InteractionLog { records })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infeasible_configs_rejected() {
        let mut c = SyntheticConfig {
            num_items: 100,
            ..Default::default()
        };
        assert!(generate_synthetic(&c, 0).is_err());
        c = SyntheticConfig {
            seq_len_range: (12, 10),
            ..Default::default()
        };
        assert!(generate_synthetic(&c, 0).is_err());
    }

    #[test]
    fn every_category_has_twenty_items() {
        let cat = synthetic_catalog(&SyntheticConfig::default(), 3).unwrap();
        assert!(cat.members.iter().all(|m| m.len() >= 20));
        assert!(cat
            .item_categories
            .iter()
            .all(|c| (1..=2).contains(&c.len())));
    }

    #[test]
    fn same_seed_same_log() {
        let c = SyntheticConfig {
            num_users: 50,
            ..Default::default()
        };
        assert_eq!(
            generate_synthetic(&c, 9).unwrap(),
            generate_synthetic(&c, 9).unwrap()
        );
        assert_ne!(
            generate_synthetic(&c, 9).unwrap(),
            generate_synthetic(&c, 10).unwrap()
        );
    }
}
