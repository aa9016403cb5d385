//! Distribution-mixer negative sampling.
//!
//! Per group: pick how many categories the negatives span (1-3, uniform), always
//! including one of the positive's categories; flip a fair coin between
//! popularity-proportional and uniform within-category draws; split the 19-item
//! budget near-evenly across the chosen categories.

use super::catalog::Catalog;
use super::group::NUM_NEGATIVES;
use super::log::{CategoryId, ItemId};
use crate::error::{Error, Result};
use crate::numerics::Rng;

/// The random choices behind one mixer group.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MixerDraw {
    /// Number of categories drawn in step 1 (before any clamping to the catalog).
    pub d: usize,
    /// Involved categories; the first is the positive's.
    pub categories: Vec<CategoryId>,
    pub popularity: bool,
    pub budgets: Vec<usize>,
}

/// Splits `total` across `parts` as evenly as possible, remainder to the front.
pub fn split_budget(total: usize, parts: usize) -> Vec<usize> {
    let (base, rem) = (total / parts, total % parts);
    (0..parts).map(|i| base + usize::from(i < rem)).collect()
}

/// Draws 19 distinct negatives for `positive`. Items in `exclude` (and the
/// positive) are never returned.
pub fn mixer_sample_negatives(
    rng: &mut Rng,
    positive: ItemId,
    catalog: &Catalog,
    exclude: &[ItemId],
) -> Result<(Vec<ItemId>, MixerDraw)> {
    if catalog.num_known_items() < NUM_NEGATIVES + 1 {
        return Err(Error::Sampling(format!(
            "catalog has {} items, need at least {}",
            catalog.num_known_items(),
            NUM_NEGATIVES + 1
        )));
    }
    let pos_cats = catalog
        .categories
        .get(positive as usize)
        .filter(|c| !c.is_empty())
        .ok_or_else(|| Error::Sampling(format!("positive item {positive} has no category")))?;

    // Step 1
    let own = pos_cats[rng.below(pos_cats.len())];
    let d = 1 + rng.below(3);
    let others: Vec<CategoryId> = (0..catalog.num_categories() as CategoryId)
        .filter(|&c| c != own && !catalog.by_category[c as usize].is_empty())
        .collect();
    let mut categories = vec![own];
    for i in rng.sample_distinct(others.len(), d - 1) {
        categories.push(others[i]);
    }

    // Step 2
    let popularity = rng.bernoulli(0.5)?;

    // Step 3
    let budgets = split_budget(NUM_NEGATIVES, categories.len());
    let mut chosen: Vec<ItemId> = Vec::with_capacity(NUM_NEGATIVES);
    let blocked =
        |i: ItemId, chosen: &[ItemId]| i == positive || exclude.contains(&i) || chosen.contains(&i);
    for (&c, &budget) in categories.iter().zip(&budgets) {
        let pool: Vec<ItemId> = catalog.by_category[c as usize].clone();
        let mut weights: Vec<f64> = pool
            .iter()
            .map(|&i| {
                if blocked(i, &chosen) {
                    0.0
                } else if popularity {
                    catalog.popularity[i as usize] as f64
                } else {
                    1.0
                }
            })
            .collect();
        for _ in 0..budget {
            let pick = if weights.iter().any(|&w| w > 0.0) {
                Some(rng.categorical(&weights)?)
            } else {
                // popularity mass exhausted: fall back to uniform over what is left
                let left: Vec<usize> = (0..pool.len())
                    .filter(|&k| !blocked(pool[k], &chosen))
                    .collect();
                (!left.is_empty()).then(|| left[rng.below(left.len())])
            };
            match pick {
                Some(k) => {
                    chosen.push(pool[k]);
                    weights[k] = 0.0;
                }
                None => break,
            }
        }
    }
    // Categories too small for their share: fill uniformly from the whole catalog.
    if chosen.len() < NUM_NEGATIVES {
        let rest: Vec<ItemId> = catalog
            .known_items()
            .filter(|&i| !blocked(i, &chosen))
            .collect();
        let need = NUM_NEGATIVES - chosen.len();
        if rest.len() < need {
            return Err(Error::Sampling(
                "not enough items outside the exclusion set".into(),
            ));
        }
        for k in rng.sample_distinct(rest.len(), need) {
            chosen.push(rest[k]);
        }
    }
    Ok((
        chosen,
        MixerDraw {
            d,
            categories,
            popularity,
            budgets,
        },
    ))
}
