mod common;

use ada_ranker::adaptation::{
    compose_patch, modulate_inputs, Adaptor, AdaptorConfig, ExtractorMode, FilmMode, ParamMode,
};
use ada_ranker::data::GroupView;
use ada_ranker::numerics::{Graph, Purpose, Rng, Tensor};
use ada_ranker::ranker::{BaseRanker, EncoderKind, RankerConfig};
use approx::assert_relative_eq;
use common::*;
use proptest::prelude::*;

const ITEMS: usize = 60;

fn base32(seed: u64) -> BaseRanker<f32> {
    jittered_base(ranker_config(EncoderKind::Gru, ITEMS, 6, 5), seed)
}

#[test]
fn disabled_adaptor_scores_equal_the_base_bitwise() {
    let base = base32(1);
    let ada = Adaptor::new(AdaptorConfig::disabled(), &base, 1).unwrap();
    let groups = random_groups(1000, ITEMS, 2);
    let views = views(&groups);
    let plain = base.score_groups(&views, 64).unwrap();
    let adapted = ada.score_groups(&base, &views, 64).unwrap();
    for (p, a) in plain.iter().zip(&adapted) {
        assert_eq!(p, &a.scores);
        assert!(a.z.is_empty() && a.alphas.is_empty());
    }
}

#[test]
fn extractor_output_is_permutation_invariant() {
    let base = base32(2);
    let ada = jittered_adaptor(AdaptorConfig::default(), &base, 2);
    let mut rng = Rng::stream(3, Purpose::Test, &[20]);
    for (_, _, cands) in random_sets(100, ITEMS, 20, 3) {
        let reference = ada.distribution(&base, &cands, None).unwrap();
        for _ in 0..20 {
            let mut perm = cands.clone();
            rng.shuffle(&mut perm);
            let d = ada.distribution(&base, &perm, None).unwrap();
            assert_eq!(d.mu, reference.mu);
            assert_eq!(d.sigma, reference.sigma);
        }
    }
}

#[test]
fn candidate_scores_follow_their_items_under_permutation() {
    let base = base32(4);
    let ada = jittered_adaptor(AdaptorConfig::default(), &base, 4);
    let mut rng = Rng::stream(4, Purpose::Test, &[21]);
    for (u, h, c) in random_sets(20, ITEMS, 20, 5) {
        let s = ada
            .score_group(
                &base,
                GroupView {
                    user: u,
                    history: &h,
                    items: &c,
                },
            )
            .unwrap();
        let mut order: Vec<usize> = (0..c.len()).collect();
        rng.shuffle(&mut order);
        let perm: Vec<u32> = order.iter().map(|&i| c[i]).collect();
        let t = ada
            .score_group(
                &base,
                GroupView {
                    user: u,
                    history: &h,
                    items: &perm,
                },
            )
            .unwrap();
        assert_eq!(t.z, s.z);
        for (k, &i) in order.iter().enumerate() {
            assert_eq!(t.scores[k], s.scores[i]);
        }
    }
}

#[test]
fn latent_sample_is_mean_plus_scaled_noise() {
    let base = base32(5);
    let ada = jittered_adaptor(AdaptorConfig::default(), &base, 5);
    let mut rng = Rng::stream(5, Purpose::Test, &[22]);
    for (_, _, cands) in random_sets(20, ITEMS, 20, 6) {
        let eps: Vec<f32> = (0..6).map(|_| rng.gaussian() as f32).collect();
        let d = ada.distribution(&base, &cands, Some(&eps)).unwrap();
        assert_eq!(d.eps, eps);
        for k in 0..6 {
            assert_eq!(d.z[k], d.mu[k] + d.eps[k] * d.sigma[k]);
            assert!(d.sigma[k] > 0.0);
        }
        // the eval phase uses the mean
        let e = ada.distribution(&base, &cands, None).unwrap();
        assert_eq!(e.z, e.mu);
        assert_eq!(e.mu, d.mu);
    }
}

#[test]
fn average_extractor_is_the_mean_embedding() {
    let cfg = RankerConfig {
        encoder: EncoderKind::Gru,
        num_items: 3,
        num_users: 1,
        dim: 2,
        hidden: 2,
        ..Default::default()
    };
    let mut base = BaseRanker::<f64>::new(cfg, 0).unwrap();
    let id = base.params().find("item_emb").unwrap();
    base.params_mut()
        .get_mut(id)
        .data_mut()
        .copy_from_slice(&[1.0, 3.0, 3.0, 5.0, -7.0, 0.5]);
    let ada_cfg = AdaptorConfig {
        extractor: ExtractorMode::Avg,
        ..Default::default()
    };
    let ada = Adaptor::new(ada_cfg, &base, 0).unwrap();
    let d = ada.distribution(&base, &[0, 1], None).unwrap();
    assert_eq!(d.z, vec![2.0, 4.0]);
    assert_eq!(d.sigma, vec![0.0, 0.0]);
}

#[test]
fn film_arithmetic() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::from_rows(&[&[1.0, 2.0, 3.0], &[-1.0, 0.0, 4.0]]).unwrap());
    // scalar per row, as a column
    let gamma = g.constant(Tensor::matrix(2, 1, vec![2.0, -0.5]));
    let beta = g.constant(Tensor::matrix(2, 1, vec![1.0, 0.25]));
    let y = modulate_inputs(&mut g, x, Some(gamma), Some(beta)).unwrap();
    assert_eq!(g.value(y).data(), &[3.0, 5.0, 7.0, 0.75, 0.25, -1.75]);
    // full rows
    let gamma = g.constant(Tensor::from_rows(&[&[1.0, 0.0, 2.0], &[3.0, 1.0, 0.5]]).unwrap());
    let y = modulate_inputs(&mut g, x, Some(gamma), None).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 0.0, 6.0, -3.0, 0.0, 2.0]);
    let beta = g.constant(Tensor::from_rows(&[&[0.5, 0.5, 0.5], &[1.0, 1.0, 1.0]]).unwrap());
    let y = modulate_inputs(&mut g, x, None, Some(beta)).unwrap();
    assert_eq!(g.value(y).data(), &[1.5, 2.5, 3.5, 0.0, 1.0, 5.0]);
}

#[test]
fn pool_mixing_by_hand() {
    let mut g = Graph::<f64>::new();
    // z = [1, 0]: head scores are the first row of `heads`
    let z = g.constant(Tensor::row_vector(vec![1.0, 0.0]));
    let heads =
        g.constant(Tensor::from_rows(&[&[0.0, 2.0_f64.ln(), 0.0], &[5.0, 5.0, 5.0]]).unwrap());
    let slots = g.constant(Tensor::from_rows(&[&[1.0, 10.0], &[2.0, 20.0], &[4.0, 40.0]]).unwrap());
    let (hat, logits) = compose_patch(&mut g, z, heads, slots).unwrap();
    // weights 1/4, 2/4, 1/4
    assert_relative_eq!(g.value(hat).data()[0], 0.25 + 1.0 + 1.0, epsilon = 1e-14);
    assert_relative_eq!(g.value(hat).data()[1], 2.5 + 10.0 + 10.0, epsilon = 1e-14);
    let alpha = g.softmax_rows(logits);
    let a = g.value(alpha).data();
    assert_relative_eq!(a.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
    assert_relative_eq!(a[1], 0.5, epsilon = 1e-15);
}

#[test]
fn identity_initialization_reproduces_the_base() {
    for film in [
        FilmMode::Scalar,
        FilmMode::Vector,
        FilmMode::PerItem,
        FilmMode::AddBias,
        FilmMode::None,
    ] {
        for param in ParamMode::ALL {
            let base = base32(6);
            let cfg = AdaptorConfig {
                film,
                param: *param,
                ..Default::default()
            };
            let ada = Adaptor::new(cfg, &base, 6).unwrap();
            let groups = random_groups(30, ITEMS, 7);
            let views = views(&groups);
            let plain = base.score_groups(&views, 8).unwrap();
            let adapted = ada.score_groups(&base, &views, 8).unwrap();
            for (p, a) in plain.iter().zip(&adapted) {
                for (x, y) in p.iter().zip(&a.scores) {
                    assert_relative_eq!(*x, *y, epsilon = 1e-6);
                }
            }
        }
    }
}

#[test]
fn pool_weights_are_distributions() {
    let base = base32(8);
    let ada = jittered_adaptor(AdaptorConfig::default(), &base, 8);
    let groups = random_groups(50, ITEMS, 9);
    for s in ada.score_groups(&base, &views(&groups), 16).unwrap() {
        assert_eq!(s.alphas.len(), 4);
        for a in &s.alphas {
            assert_eq!(a.len(), 10);
            assert!(a.iter().all(|&v| v >= 0.0));
            assert!((a.iter().sum::<f32>() - 1.0).abs() < 1e-5);
        }
    }
}

#[test]
fn different_candidate_sets_give_different_summaries() {
    let base = base32(10);
    let ada = jittered_adaptor(AdaptorConfig::default(), &base, 10);
    let low: Vec<u32> = (0..20).collect();
    let high: Vec<u32> = (40..60).collect();
    let a = ada.distribution(&base, &low, None).unwrap();
    let b = ada.distribution(&base, &high, None).unwrap();
    let gap: f32 = a.z.iter().zip(&b.z).map(|(x, y)| (x - y).abs()).sum();
    assert!(gap > 1e-3, "summaries differ by {gap}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// A group's scores do not depend on which other groups share its batch.
    #[test]
    fn scores_are_independent_of_batch_composition(seed in 0u64..1000, batch in 1usize..9) {
        let base = base32(11);
        let ada = jittered_adaptor(AdaptorConfig::default(), &base, 11);
        let groups = random_groups(12, ITEMS, seed);
        let views = views(&groups);
        let together = ada.score_groups(&base, &views, batch).unwrap();
        for (v, t) in views.iter().zip(&together) {
            prop_assert_eq!(&ada.score_group(&base, *v).unwrap(), t);
        }
    }
}
