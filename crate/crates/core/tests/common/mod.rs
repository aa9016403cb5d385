#![allow(dead_code)]

use ada_ranker::adaptation::{Adaptor, AdaptorConfig, Noise};
use ada_ranker::data::{CandidateGroup, GroupView, Provenance};
use ada_ranker::numerics::{grad_check, Bound, Purpose, Real, Rng, Tensor};
use ada_ranker::ranker::{BaseRanker, Batch, EncoderKind, RankerConfig};
use ada_ranker::training::bce_graph;

pub fn ranker_config(
    encoder: EncoderKind,
    items: usize,
    dim: usize,
    hidden: usize,
) -> RankerConfig {
    RankerConfig {
        encoder,
        num_items: items,
        num_users: 8,
        dim,
        hidden,
        max_seq_len: 6,
        ..Default::default()
    }
}

/// Adds Gaussian noise to every tensor so no gradient path starts at a
/// degenerate point (zero outputs, all-equal pool slots).
pub fn jitter<T: Real>(tensors: &mut [Tensor<T>], scale: f64, seed: u64) {
    let mut rng = Rng::stream(seed, Purpose::Test, &[77]);
    for t in tensors {
        for v in t.data_mut() {
            *v += T::of(scale * rng.gaussian());
        }
    }
}

pub fn jittered_base<T: Real>(cfg: RankerConfig, seed: u64) -> BaseRanker<T> {
    let mut b = BaseRanker::new(cfg, seed).unwrap();
    jitter(b.params_mut().tensors_mut(), 0.2, seed ^ 1);
    b
}

pub fn jittered_adaptor<T: Real>(
    cfg: AdaptorConfig,
    base: &BaseRanker<T>,
    seed: u64,
) -> Adaptor<T> {
    let mut a = Adaptor::new(cfg, base, seed).unwrap();
    jitter(a.params_mut().tensors_mut(), 0.2, seed ^ 2);
    a
}

/// `n` histories (1..=9 items) and candidate sets of `m` distinct ids.
pub fn random_sets(n: usize, items: usize, m: usize, seed: u64) -> Vec<(u32, Vec<u32>, Vec<u32>)> {
    let mut rng = Rng::stream(seed, Purpose::Test, &[1]);
    (0..n)
        .map(|k| {
            let len = 1 + rng.below(9);
            let history: Vec<u32> = (0..len).map(|_| rng.below(items) as u32).collect();
            let cands: Vec<u32> = rng
                .sample_distinct(items, m)
                .into_iter()
                .map(|i| i as u32)
                .collect();
            ((k % 8) as u32, history, cands)
        })
        .collect()
}

pub fn set_views(sets: &[(u32, Vec<u32>, Vec<u32>)]) -> Vec<GroupView<'_>> {
    sets.iter()
        .map(|(u, h, c)| GroupView {
            user: *u,
            history: h,
            items: c,
        })
        .collect()
}

/// Labeled 20-candidate groups with mixer-style provenance tags.
pub fn random_groups(n: usize, items: usize, seed: u64) -> Vec<CandidateGroup> {
    random_sets(n, items, 20, seed)
        .into_iter()
        .enumerate()
        .map(|(k, (u, h, c))| {
            let prov = Provenance::Mixer {
                categories: 1 + (k % 3) as u8,
                popularity: k % 2 == 0,
            };
            CandidateGroup::new(u, h, c[0], c[1..].to_vec(), prov).unwrap()
        })
        .collect()
}

pub fn views(groups: &[CandidateGroup]) -> Vec<GroupView<'_>> {
    groups.iter().map(CandidateGroup::view).collect()
}

pub const H: f64 = 1e-5;

// Evaluation points are fixed. The element-wise relative error is limited by
// f64 rounding of the loss (about 1e-11 absolute at this step), so an element
// whose true gradient is below ~1e-7 can exceed 1e-4 from noise alone; the
// seeds below give points without such elements.

/// Two groups of six candidates with five-item histories.
pub fn batch_and_labels(items: usize, seed: u64) -> (Batch, Vec<u8>) {
    let sets: Vec<_> = random_sets(2, items, 6, seed)
        .into_iter()
        .map(|(u, _, c)| {
            let mut rng = Rng::stream(seed, Purpose::Test, &[u64::from(u), 5]);
            (
                u,
                (0..5)
                    .map(|_| rng.below(items) as u32)
                    .collect::<Vec<u32>>(),
                c,
            )
        })
        .collect();
    let batch = Batch::new(&set_views(&sets), 5).unwrap();
    let labels = (0..12).map(|i| u8::from(i % 6 == 0)).collect();
    (batch, labels)
}

/// Relative error of the full adapted loss (BCE over all candidates, with
/// dropout and ε drawn from fixed streams) for one mode combination.
pub fn ada_loss_error(encoder: EncoderKind, cfg: AdaptorConfig, seed: u64) -> (f64, String) {
    let items = 24;
    let base = jittered_base::<f64>(ranker_config(encoder, items, 8, 8), seed);
    let ada = jittered_adaptor(cfg, &base, seed);
    let (batch, labels) = batch_and_labels(items, seed);
    let n_theta = base.params().len();
    let mut params: Vec<Tensor<f64>> = base.params().tensors().to_vec();
    params.extend(ada.params().tensors().iter().cloned());

    let report = grad_check(
        |g, vars, s| {
            let theta = Bound::from_vars(vars[..n_theta].to_vec());
            let phi = Bound::from_vars(vars[n_theta..].to_vec());
            let mut dropout = Rng::stream(s, Purpose::Dropout, &[0]);
            let mut epsilon = Rng::stream(s, Purpose::Epsilon, &[0]);
            let noise = Noise {
                dropout: &mut dropout,
                epsilon: &mut epsilon,
            };
            let pass = ada.forward(&base, g, &theta, &phi, &batch, Some(noise))?;
            bce_graph(g, pass.scores, &labels)
        },
        &params,
        H,
        seed,
    )
    .unwrap();
    assert!(report.checked > 500, "{report:?}");
    let names: Vec<&String> = base
        .params()
        .names()
        .iter()
        .chain(ada.params().names())
        .collect();
    let worst = report
        .worst
        .map(|(pi, ei)| format!("{}[{ei}] {:?}", names[pi], report.worst_values));
    (report.max_rel_error, worst.unwrap_or_default())
}
