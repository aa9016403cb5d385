//! Recall models (popularity, matrix factorization, item-to-item skip-gram)
//! and recall-window negative sampling.

use super::catalog::Catalog;
use super::group::NUM_NEGATIVES;
use super::log::{ItemId, UserId};
use super::sequences::{training_prefix, UserSequence};
use crate::error::{Error, Result};
use crate::numerics::{init, AdamConfig, AdamState, Graph, ParamSet, Purpose, Rng, Tensor};

/// Window bounds on the recall rankings at the reference catalog size of 2000.
pub const POP_WINDOW: (usize, usize) = (0, 1000);
pub const MF_WINDOW: (usize, usize) = (1000, 2000);
pub const I2I_WINDOW: (usize, usize) = (500, 1500);
const REFERENCE_SIZE: usize = 2000;

/// How many of the most recent history items the item-to-item anchor is drawn from.
pub const RECENT_ITEMS: usize = 5;

#[derive(Clone, Debug)]
pub struct RecallConfig {
    pub dim: usize,
    pub mf_epochs: usize,
    pub mf_negatives: usize,
    pub i2i_epochs: usize,
    pub window: usize,
    pub i2i_negatives: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for RecallConfig {
    fn default() -> Self {
        RecallConfig {
            dim: 64,
            mf_epochs: 10,
            mf_negatives: 1,
            i2i_epochs: 5,
            window: 5,
            i2i_negatives: 5,
            lr: 0.01,
            batch_size: 1024,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecallIndex {
    /// Known items by descending training popularity, ties by id.
    pub popularity_order: Vec<ItemId>,
    pub user_emb: Tensor<f32>,
    pub item_emb: Tensor<f32>,
    pub i2i_emb: Tensor<f32>,
    /// Known items, ascending; the universe the rankings are taken over.
    pub items: Vec<ItemId>,
}

impl RecallIndex {
    pub fn dim(&self) -> usize {
        self.item_emb.cols()
    }

    pub fn mf_score(&self, user: UserId, item: ItemId) -> f32 {
        crate::numerics::kernels::dot(
            self.user_emb.row(user as usize),
            self.item_emb.row(item as usize),
        )
    }

    fn ranked_by(&self, query: &[f32], table: &Tensor<f32>) -> Vec<ItemId> {
        let mut scored: Vec<(f32, ItemId)> = self
            .items
            .iter()
            .map(|&i| {
                (
                    crate::numerics::kernels::dot(query, table.row(i as usize)),
                    i,
                )
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        scored.into_iter().map(|(_, i)| i).collect()
    }

    /// All known items by descending MF score for `user`, ties by id.
    pub fn mf_ranking(&self, user: UserId) -> Vec<ItemId> {
        self.ranked_by(self.user_emb.row(user as usize), &self.item_emb)
    }

    /// All known items by descending item-to-item similarity to `item`, ties by id.
    pub fn i2i_ranking(&self, item: ItemId) -> Vec<ItemId> {
        self.ranked_by(self.i2i_emb.row(item as usize), &self.i2i_emb)
    }

    /// The three windows scaled down proportionally when the catalog is
    /// smaller than the reference size.
    pub fn windows(&self) -> [(usize, usize); 3] {
        scaled_windows(self.items.len())
    }
}

pub fn scaled_windows(n_items: usize) -> [(usize, usize); 3] {
    let f = (n_items as f64 / REFERENCE_SIZE as f64).min(1.0);
    let s = |(a, b): (usize, usize)| {
        (
            (a as f64 * f).floor() as usize,
            ((b as f64 * f).floor() as usize).min(n_items),
        )
    };
    [s(POP_WINDOW), s(MF_WINDOW), s(I2I_WINDOW)]
}

/// Trains the recall models on the training portion of the sequences.
pub fn build_recall_index(
    seqs: &[UserSequence],
    catalog: &Catalog,
    num_users: usize,
    config: &RecallConfig,
    seed: u64,
) -> Result<RecallIndex> {
    let items: Vec<ItemId> = catalog.known_items().collect();
    if items.len() < 2 {
        return Err(Error::Sampling(
            "recall index needs at least two items".into(),
        ));
    }
    let num_items = catalog.num_items();
    let user_emb;
    let item_emb;
    {
        let mut rng = Rng::stream(seed, Purpose::RecallTraining, &[0]);
        let mut params = ParamSet::<f32>::new();
        let u = params.add(
            "user",
            init::normal(&mut rng, &[num_users, config.dim], 0.1),
        );
        let it = params.add(
            "item",
            init::normal(&mut rng, &[num_items, config.dim], 0.1),
        );
        let pairs: Vec<(usize, usize)> = seqs
            .iter()
            .flat_map(|s| {
                training_prefix(s)
                    .iter()
                    .map(move |&i| (s.user as usize, i as usize))
            })
            .collect();
        let mut adam = AdamState::new(AdamConfig::with_lr(config.lr), params.tensors());
        for epoch in 0..config.mf_epochs {
            let mut rng = Rng::stream(seed, Purpose::RecallTraining, &[1, epoch as u64]);
            let mut order: Vec<usize> = (0..pairs.len()).collect();
            rng.shuffle(&mut order);
            for chunk in order.chunks(config.batch_size) {
                let mut us = Vec::new();
                let mut is = Vec::new();
                let mut labels = Vec::new();
                for &k in chunk {
                    let (user, item) = pairs[k];
                    us.push(user);
                    is.push(item);
                    labels.push(1.0);
                    for _ in 0..config.mf_negatives {
                        us.push(user);
                        is.push(items[rng.below(items.len())] as usize);
                        labels.push(0.0);
                    }
                }
                let mut g = Graph::new();
                let b = params.bind(&mut g, true);
                let ue = g.gather(b.var(u), us)?;
                let ie = g.gather(b.var(it), is)?;
                let prod = g.mul(ue, ie)?;
                let logits = g.sum_cols(prod);
                let loss = bce_with_logits(&mut g, logits, &labels)?;
                let mut grads = g.backward(loss)?;
                let grads = params.collect_grads(&b, &mut grads);
                adam.step(params.tensors_mut(), &grads)?;
            }
        }
        user_emb = params.get(u).clone();
        item_emb = params.get(it).clone();
    }
    let i2i_emb = train_item2item(seqs, catalog, &items, config, seed)?;
    Ok(RecallIndex {
        popularity_order: catalog.popularity_order(),
        user_emb,
        item_emb,
        i2i_emb,
        items,
    })
}

/// Mean binary cross entropy on raw logits, built from graph primitives.
fn bce_with_logits(
    g: &mut Graph<f32>,
    logits: crate::numerics::Var,
    labels: &[f32],
) -> Result<crate::numerics::Var> {
    let y = g.constant(Tensor::matrix(labels.len(), 1, labels.to_vec()));
    let p = g.sigmoid(logits);
    let p = g.clamp(p, 1e-7, 1.0 - 1e-7);
    let lp = g.ln(p);
    let q = g.affine(p, -1.0, 1.0);
    let lq = g.ln(q);
    let a = g.mul(lp, y)?;
    let one_minus_y = g.affine(y, -1.0, 1.0);
    let b = g.mul(lq, one_minus_y)?;
    let s = g.add(a, b)?;
    let m = g.mean(s);
    Ok(g.affine(m, -1.0, 0.0))
}

/// Skip-gram with negative sampling over behavior sequences. Each center gets
/// its in-window contexts as positives and `i2i_negatives` draws from the
/// unigram^0.75 distribution as negatives.
fn train_item2item(
    seqs: &[UserSequence],
    catalog: &Catalog,
    items: &[ItemId],
    config: &RecallConfig,
    seed: u64,
) -> Result<Tensor<f32>> {
    let num_items = catalog.num_items();
    let mut rng = Rng::stream(seed, Purpose::RecallTraining, &[2]);
    let mut params = ParamSet::<f32>::new();
    let input = params.add("in", init::normal(&mut rng, &[num_items, config.dim], 0.1));
    let output = params.add("out", Tensor::zeros(&[num_items, config.dim]));
    let noise: Vec<f64> = items
        .iter()
        .map(|&i| (catalog.popularity[i as usize] as f64 + 1.0).powf(0.75))
        .collect();
    let centers: Vec<(usize, usize)> = seqs
        .iter()
        .enumerate()
        .flat_map(|(s, seq)| (0..training_prefix(seq).len()).map(move |p| (s, p)))
        .collect();
    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr), params.tensors());
    for epoch in 0..config.i2i_epochs {
        let mut rng = Rng::stream(seed, Purpose::RecallTraining, &[3, epoch as u64]);
        let mut order: Vec<usize> = (0..centers.len()).collect();
        rng.shuffle(&mut order);
        for chunk in order.chunks(config.batch_size / 4) {
            let mut cs = Vec::new();
            let mut os = Vec::new();
            let mut labels = Vec::new();
            for &k in chunk {
                let (s, p) = centers[k];
                let seq = training_prefix(&seqs[s]);
                let center = seq[p] as usize;
                let lo = p.saturating_sub(config.window);
                let hi = (p + config.window + 1).min(seq.len());
                for (q, &ctx) in seq.iter().enumerate().take(hi).skip(lo) {
                    if q != p {
                        cs.push(center);
                        os.push(ctx as usize);
                        labels.push(1.0);
                    }
                }
                for _ in 0..config.i2i_negatives {
                    cs.push(center);
                    os.push(items[rng.categorical(&noise)?] as usize);
                    labels.push(0.0);
                }
            }
            let mut g = Graph::new();
            let b = params.bind(&mut g, true);
            let ce = g.gather(b.var(input), cs)?;
            let oe = g.gather(b.var(output), os)?;
            let prod = g.mul(ce, oe)?;
            let logits = g.sum_cols(prod);
            let loss = bce_with_logits(&mut g, logits, &labels)?;
            let mut grads = g.backward(loss)?;
            let grads = params.collect_grads(&b, &mut grads);
            adam.step(params.tensors_mut(), &grads)?;
        }
    }
    Ok(params.get(input).clone())
}

/// Draws 19 negatives from the three recall windows with proportions `d`.
/// Returns the negatives and the per-source budget `[pop, mf, i2i]`.
pub fn recall_sample_negatives(
    rng: &mut Rng,
    user: UserId,
    history: &[ItemId],
    positive: ItemId,
    index: &RecallIndex,
    d: [f64; 3],
) -> Result<(Vec<ItemId>, [usize; 3])> {
    let counts = rng.multinomial(NUM_NEGATIVES, &d)?;
    let [pop_w, mf_w, i2i_w] = index.windows();
    let mut chosen: Vec<ItemId> = Vec::with_capacity(NUM_NEGATIVES);

    let take = |ranking: &[ItemId],
                (lo, hi): (usize, usize),
                k: usize,
                rng: &mut Rng,
                chosen: &mut Vec<ItemId>| {
        let window: Vec<ItemId> = ranking[lo.min(ranking.len())..hi.min(ranking.len())]
            .iter()
            .copied()
            .filter(|&i| i != positive && !chosen.contains(&i))
            .collect();
        for j in rng.sample_distinct(window.len(), k) {
            chosen.push(window[j]);
        }
    };

    if counts[0] > 0 {
        take(&index.popularity_order, pop_w, counts[0], rng, &mut chosen);
    }
    if counts[1] > 0 {
        take(&index.mf_ranking(user), mf_w, counts[1], rng, &mut chosen);
    }
    if counts[2] > 0 {
        if history.is_empty() {
            return Err(Error::Sampling(
                "item-to-item recall needs a non-empty history".into(),
            ));
        }
        let recent = &history[history.len().saturating_sub(RECENT_ITEMS)..];
        let anchor = recent[rng.below(recent.len())];
        take(
            &index.i2i_ranking(anchor),
            i2i_w,
            counts[2],
            rng,
            &mut chosen,
        );
    }
    if chosen.len() < NUM_NEGATIVES {
        let rest: Vec<ItemId> = index
            .items
            .iter()
            .copied()
            .filter(|&i| i != positive && !chosen.contains(&i))
            .collect();
        let need = NUM_NEGATIVES - chosen.len();
        if rest.len() < need {
            return Err(Error::Sampling(
                "catalog too small for 19 distinct negatives".into(),
            ));
        }
        for j in rng.sample_distinct(rest.len(), need) {
            chosen.push(rest[j]);
        }
    }
    Ok((chosen, [counts[0], counts[1], counts[2]]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows_scale_with_catalog() {
        assert_eq!(scaled_windows(5000), [(0, 1000), (1000, 2000), (500, 1500)]);
        assert_eq!(scaled_windows(500), [(0, 250), (250, 500), (125, 375)]);
    }
}
