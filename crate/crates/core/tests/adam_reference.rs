use ada_ranker::numerics::{clip_global_norm, AdamConfig, AdamState, Graph, Tensor};
use approx::assert_relative_eq;

/// Scalar Adam with bias correction, written from the recurrence.
struct ScalarAdam {
    m: f64,
    v: f64,
    t: i32,
}

impl ScalarAdam {
    fn step(&mut self, w: f64, g: f64, lr: f64) -> f64 {
        self.t += 1;
        self.m = 0.9 * self.m + 0.1 * g;
        self.v = 0.999 * self.v + 0.001 * g * g;
        let mh = self.m / (1.0 - 0.9f64.powi(self.t));
        let vh = self.v / (1.0 - 0.999f64.powi(self.t));
        w - lr * mh / (vh.sqrt() + 1e-8)
    }
}

fn quadratic_grad(w: f64) -> f64 {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::scalar(w), true);
    let e = g.affine(x, 1.0, -3.0);
    let sq = g.mul(e, e).unwrap();
    g.backward(sq).unwrap().get(x).unwrap().item()
}

#[test]
fn quadratic_converges_like_the_reference_recurrence() {
    let mut params = vec![Tensor::scalar(0.0f64)];
    let mut adam = AdamState::new(AdamConfig::with_lr(0.1), &params);
    let mut reference = ScalarAdam {
        m: 0.0,
        v: 0.0,
        t: 0,
    };
    let mut w_ref = 0.0;
    for _ in 0..200 {
        let g = quadratic_grad(params[0].item());
        adam.step(&mut params, &[Some(Tensor::scalar(g))]).unwrap();
        w_ref = reference.step(w_ref, 2.0 * (w_ref - 3.0), 0.1);
        assert_relative_eq!(params[0].item(), w_ref, epsilon = 1e-12);
    }
    assert_eq!(adam.steps(), 200);
    assert!(
        (params[0].item() - 3.0).abs() < 0.1,
        "w = {}",
        params[0].item()
    );
}

#[test]
fn vector_update_is_elementwise() {
    let mut params = vec![Tensor::row_vector(vec![1.0f64, -2.0, 0.5])];
    let mut adam = AdamState::new(AdamConfig::default(), &params);
    let mut refs: Vec<ScalarAdam> = (0..3)
        .map(|_| ScalarAdam {
            m: 0.0,
            v: 0.0,
            t: 0,
        })
        .collect();
    let mut w = vec![1.0, -2.0, 0.5];
    for k in 0..20 {
        let g: Vec<f64> = (0..3).map(|i| ((k * 3 + i) as f64 * 0.7).sin()).collect();
        adam.step(&mut params, &[Some(Tensor::row_vector(g.clone()))])
            .unwrap();
        for i in 0..3 {
            w[i] = refs[i].step(w[i], g[i], 1e-3);
        }
        for (a, b) in params[0].data().iter().zip(&w) {
            assert_relative_eq!(*a, *b, epsilon = 1e-15);
        }
    }
}

#[test]
fn missing_gradients_leave_parameters_and_moments_alone() {
    let mut params = vec![Tensor::scalar(1.0f64), Tensor::scalar(2.0)];
    let mut adam = AdamState::new(AdamConfig::default(), &params);
    adam.step(&mut params, &[None, Some(Tensor::scalar(1.0))])
        .unwrap();
    assert_eq!(params[0].item(), 1.0);
    assert!(params[1].item() < 2.0);
}

#[test]
fn clipping_rescales_to_the_global_norm() {
    let mut grads = vec![
        Some(Tensor::row_vector(vec![3.0f64, 0.0])),
        None,
        Some(Tensor::scalar(4.0)),
    ];
    let before = clip_global_norm(&mut grads, 1.0);
    assert_eq!(before, 5.0);
    let after: f64 = grads
        .iter()
        .flatten()
        .map(|g| g.sum_sq())
        .sum::<f64>()
        .sqrt();
    assert_relative_eq!(after, 1.0, epsilon = 1e-15);
    assert_relative_eq!(grads[0].as_ref().unwrap().data()[0], 0.6, epsilon = 1e-15);
    let mut small = vec![Some(Tensor::scalar(0.5f64))];
    assert_eq!(clip_global_norm(&mut small, 5.0), 0.5);
    assert_eq!(small[0].as_ref().unwrap().item(), 0.5);
}
