mod common;

use std::time::{Duration, Instant};

use ada_ranker::adaptation::{AdaptorConfig, ExtractorMode, FilmMode, ParamMode};
use ada_ranker::numerics::{grad_check, Bound, Purpose, Rng, Tensor};
use ada_ranker::ranker::EncoderKind;
use ada_ranker::training::bce_graph;
use common::*;

#[test]
fn default_adapted_loss_gradient_is_exact() {
    let start = Instant::now();
    let cfg = AdaptorConfig {
        slots: 3,
        ..Default::default()
    };
    let (err, at) = ada_loss_error(EncoderKind::Gru, cfg, 6);
    assert!(err < 1e-4, "relative error {err:e} at {at}");
    assert!(start.elapsed() < Duration::from_secs(60));
}

#[test]
fn every_mode_combination_passes_the_gradient_check() {
    let films = [
        FilmMode::Scalar,
        FilmMode::Vector,
        FilmMode::PerItem,
        FilmMode::AddBias,
        FilmMode::None,
    ];
    let params = [
        ParamMode::MemNet,
        ParamMode::FreePara,
        ParamMode::NoGlobal,
        ParamMode::AddBias1,
        ParamMode::AddBias2,
    ];
    for (i, (&film, &param)) in films.iter().zip(params.iter().cycle()).enumerate() {
        for extractor in [ExtractorMode::Np, ExtractorMode::Avg] {
            let cfg = AdaptorConfig {
                extractor,
                film,
                param,
                slots: 3,
            };
            let (err, at) = ada_loss_error(EncoderKind::Gru, cfg.clone(), 130 + i as u64);
            assert!(err < 1e-4, "{cfg:?}: {err:e} at {at}");
        }
    }
    for (j, &param) in params.iter().enumerate() {
        let cfg = AdaptorConfig {
            film: FilmMode::Scalar,
            param,
            slots: 2,
            ..Default::default()
        };
        let (err, at) = ada_loss_error(EncoderKind::Gru, cfg.clone(), 160 + j as u64);
        assert!(err < 1e-4, "{cfg:?}: {err:e} at {at}");
    }
}

#[test]
fn other_encoders_pass_the_gradient_check() {
    // A per-row scalar shift is removed by the attention encoder's layer
    // norm, so its true gradient is zero; the vector FiLM is checked instead.
    for (enc, film) in [
        (EncoderKind::Mf, FilmMode::Scalar),
        (EncoderKind::SelfAttention, FilmMode::Vector),
    ] {
        let cfg = AdaptorConfig {
            film,
            slots: 3,
            ..Default::default()
        };
        let (err, at) = ada_loss_error(enc, cfg, 31);
        assert!(err < 1e-4, "{enc}: {err:e} at {at}");
    }
}

#[test]
fn base_loss_gradient_is_exact() {
    let items = 24;
    let base = jittered_base::<f64>(ranker_config(EncoderKind::Gru, items, 8, 8), 5);
    let (batch, labels) = batch_and_labels(items, 5);
    let report = grad_check(
        |g, vars, s| {
            let theta = Bound::from_vars(vars.to_vec());
            let mut dropout = Rng::stream(s, Purpose::Dropout, &[0]);
            let p = base.forward(g, &theta, &batch, Some(&mut dropout))?;
            bce_graph(g, p, &labels)
        },
        base.params().tensors(),
        H,
        5,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

/// A plain two-layer tanh network with a squared loss; smooth everywhere, so
/// central differences agree to near machine precision.
#[test]
fn smooth_mlp_gradient_to_1e6() {
    let mut rng = Rng::stream(0, Purpose::Test, &[2]);
    let mut rand =
        |r: usize, c: usize| Tensor::matrix(r, c, (0..r * c).map(|_| rng.gaussian()).collect());
    let x = rand(5, 4);
    let y = rand(5, 1);
    let params = [rand(4, 6), rand(1, 6), rand(6, 1), rand(1, 1)];
    let report = grad_check(
        |g, v, _| {
            let x = g.constant(x.clone());
            let y = g.constant(y.clone());
            let h = g.matmul(x, v[0])?;
            let h = g.add(h, v[1])?;
            let h = g.tanh(h);
            let o = g.matmul(h, v[2])?;
            let o = g.add(o, v[3])?;
            let e = g.sub(o, y)?;
            let sq = g.mul(e, e)?;
            Ok(g.mean(sq))
        },
        &params,
        H,
        0,
    )
    .unwrap();
    assert_eq!(report.checked, 24 + 6 + 6 + 1);
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}
