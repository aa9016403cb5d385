use super::log::{CategoryId, InteractionLog, ItemId};
use super::sequences::{training_prefix, UserSequence};

/// Item metadata used by the samplers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Catalog {
    /// Category set per item id; empty for ids never seen in the log.
    pub categories: Vec<Vec<CategoryId>>,
    /// Interaction count per item in the training portion of the sequences.
    pub popularity: Vec<u64>,
    /// Items carrying each category, ascending by id.
    pub by_category: Vec<Vec<ItemId>>,
}

impl Catalog {
    pub fn build(log: &InteractionLog, seqs: &[UserSequence]) -> Catalog {
        let n_items = log.num_items();
        let mut categories: Vec<Vec<CategoryId>> = vec![Vec::new(); n_items];
        for r in &log.records {
            let slot = &mut categories[r.item as usize];
            if slot.is_empty() {
                let mut c = r.categories.clone();
                c.sort_unstable();
                c.dedup();
                *slot = c;
            }
        }
        let n_cats = categories
            .iter()
            .flatten()
            .map(|&c| c as usize + 1)
            .max()
            .unwrap_or(0);
        let mut by_category = vec![Vec::new(); n_cats];
        for (item, cats) in categories.iter().enumerate() {
            for &c in cats {
                by_category[c as usize].push(item as ItemId);
            }
        }
        let mut popularity = vec![0u64; n_items];
        for s in seqs {
            for &i in training_prefix(s) {
                popularity[i as usize] += 1;
            }
        }
        Catalog {
            categories,
            popularity,
            by_category,
        }
    }

    pub fn num_items(&self) -> usize {
        self.categories.len()
    }

    pub fn num_categories(&self) -> usize {
        self.by_category.len()
    }

    /// Items that appear in the log.
    pub fn known_items(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.categories
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_empty())
            .map(|(i, _)| i as ItemId)
    }

    pub fn num_known_items(&self) -> usize {
        self.known_items().count()
    }

    /// Items ordered by descending training popularity, ties by ascending id.
    pub fn popularity_order(&self) -> Vec<ItemId> {
        let mut items: Vec<ItemId> = self.known_items().collect();
        items.sort_by(|&a, &b| {
            self.popularity[b as usize]
                .cmp(&self.popularity[a as usize])
                .then(a.cmp(&b))
        });
        items
    }
}
