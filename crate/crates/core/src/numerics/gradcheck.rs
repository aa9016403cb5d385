//! Central-difference gradient checking in double precision.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter index, element index)` of the worst element.
    pub worst: Option<(usize, usize)>,
    /// Analytic and numeric derivative at `worst`.
    pub worst_values: Option<(f64, f64)>,
    pub checked: usize,
}

/// Compares analytic gradients of `f` against central differences with step `h`
/// (the five-point stencil, so small gradients are not swamped by `h^2` terms).
///
/// `f` receives a fresh graph plus one leaf per parameter and must return a
/// scalar loss. It is called repeatedly and must be deterministic; `seed` is
/// passed through so callers can fix dropout masks and noise.
pub fn grad_check<F>(f: F, params: &[Tensor<f64>], h: f64, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var], u64) -> Result<Var>,
{
    let eval = |ps: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.constant(p.clone())).collect();
        let loss = f(&mut g, &vars, seed)?;
        g.check_finite()?;
        Ok(g.scalar(loss))
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.leaf(p.clone(), true)).collect();
    let loss = f(&mut g, &vars, seed)?;
    let base = g.scalar(loss);
    if eval(params)?.to_bits() != base.to_bits() {
        return Err(Error::NonDeterministic);
    }
    let grads = g.backward(loss)?;

    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: None,
        checked: 0,
    };
    for (pi, v) in vars.iter().enumerate() {
        let analytic: Vec<f64> = match grads.get(*v) {
            Some(t) => t.data().to_vec(),
            None => vec![0.0; params[pi].len()],
        };
        for (ei, &a) in analytic.iter().enumerate() {
            let orig = params[pi].data()[ei];
            let mut at = |dx: f64| -> Result<f64> {
                work[pi].data_mut()[ei] = orig + dx;
                eval(&work)
            };
            let (p1, m1, p2, m2) = (at(h)?, at(-h)?, at(2.0 * h)?, at(-2.0 * h)?);
            work[pi].data_mut()[ei] = orig;
            // Five-point central difference; truncation error O(h^4).
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((pi, ei));
                report.worst_values = Some((a, numeric));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_at_zero() {
        let r = grad_check(
            |g, v, _| Ok(g.sigmoid(v[0])),
            &[Tensor::scalar(0.0)],
            1e-5,
            0,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let r = grad_check(
            |g, _, _| Ok(g.constant(Tensor::scalar(4.0))),
            &[Tensor::row_vector(vec![1.0, 2.0])],
            1e-5,
            0,
        )
        .unwrap();
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn nondeterminism_is_detected() {
        use std::cell::Cell;
        let calls = Cell::new(0.0);
        let r = grad_check(
            |g, v, _| {
                calls.set(calls.get() + 1.0);
                let c = g.constant(Tensor::scalar(calls.get()));
                g.mul(v[0], c)
            },
            &[Tensor::scalar(1.0)],
            1e-5,
            0,
        );
        assert!(matches!(r, Err(Error::NonDeterministic)));
    }
}
