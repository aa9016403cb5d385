use crate::error::{Error, Result};
use crate::numerics::{Graph, Real, Tensor, Var};

pub const PROB_FLOOR: f64 = 1e-7;

/// Mean binary cross entropy over every candidate, predictions clamped to
/// `[1e-7, 1 - 1e-7]`.
pub fn bce_loss<T: Real>(scores: &[T], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape(
            "bce_loss",
            format!("{} scores, {} labels", scores.len(), labels.len()),
        ));
    }
    if scores.is_empty() {
        return Err(Error::Empty("loss batch"));
    }
    let mut total = 0.0;
    for (&s, &y) in scores.iter().zip(labels) {
        let p = s.to_f64_lossy().clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
        total -= match y {
            1 => p.ln(),
            0 => (1.0 - p).ln(),
            _ => return Err(Error::InvalidGroup(format!("label {y} is not binary"))),
        };
    }
    Ok(total / scores.len() as f64)
}

/// Graph version of [`bce_loss`] for a probability column.
pub fn bce_graph<T: Real>(g: &mut Graph<T>, probs: Var, labels: &[u8]) -> Result<Var> {
    let n = g.value(probs).len();
    if n != labels.len() {
        return Err(Error::shape(
            "bce_loss",
            format!("{n} scores, {} labels", labels.len()),
        ));
    }
    let shape = g.value(probs).shape().to_vec();
    let p = g.clamp(probs, T::of(PROB_FLOOR), T::of(1.0 - PROB_FLOOR));
    let y: Vec<T> = labels.iter().map(|&l| T::of(f64::from(l))).collect();
    let y = g.constant(Tensor::new(shape.clone(), y)?);
    let not_y: Vec<T> = labels.iter().map(|&l| T::of(1.0 - f64::from(l))).collect();
    let not_y = g.constant(Tensor::new(shape, not_y)?);
    let log_p = g.ln(p);
    let q = g.affine(p, T::of(-1.0), T::of(1.0));
    let log_q = g.ln(q);
    let a = g.mul(y, log_p)?;
    let b = g.mul(not_y, log_q)?;
    let ll = g.add(a, b)?;
    let m = g.mean(ll);
    Ok(g.affine(m, T::of(-1.0), T::of(0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_costs_ln2_either_way() {
        let ln2 = std::f64::consts::LN_2;
        assert!((bce_loss(&[0.5f64], &[1]).unwrap() - ln2).abs() < 1e-15);
        assert!((bce_loss(&[0.5f64], &[0]).unwrap() - ln2).abs() < 1e-15);
    }

    #[test]
    fn perfect_predictions_hit_the_floor() {
        let l = bce_loss(&[1.0f64, 0.0], &[1, 0]).unwrap();
        assert!((l - -(1.0f64 - 1e-7).ln()).abs() < 1e-18);
        assert!(l < 1.01e-7);
    }

    #[test]
    fn graph_matches_plain() {
        let s = [0.9f64, 0.2, 0.5, 1.0, 0.0];
        let y = [1u8, 0, 1, 0, 1];
        let mut g = Graph::<f64>::new();
        let p = g.constant(Tensor::matrix(5, 1, s.to_vec()));
        let l = bce_graph(&mut g, p, &y).unwrap();
        assert!((g.scalar(l) - bce_loss(&s, &y).unwrap()).abs() < 1e-12);
        assert!(bce_loss(&s, &y[..4]).is_err());
    }
}
