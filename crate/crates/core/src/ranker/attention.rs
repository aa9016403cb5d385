//! Unidirectional self-attention encoder: learned positions, pre-norm blocks of
//! causal multi-head attention and a ReLU feed-forward layer, final layer norm,
//! last position as the user representation.

use super::batch::Batch;
use super::model::RankerConfig;
use crate::error::Result;
use crate::numerics::{Graph, Real, Tensor, Var};

const MASKED: f64 = -1e9;
const LN_EPS: f64 = 1e-6;

pub(super) fn layout(c: &RankerConfig) -> Vec<(String, Vec<usize>)> {
    let d = c.dim;
    let mut v = vec![("attn.pos".to_string(), vec![c.max_seq_len, d])];
    for l in 0..c.attn_layers {
        for w in ["wq", "wk", "wv", "wo", "ff1"] {
            v.push((format!("attn.{l}.{w}"), vec![d, d]));
        }
        v.push((format!("attn.{l}.ff1_b"), vec![d]));
        v.push((format!("attn.{l}.ff2"), vec![d, d]));
        v.push((format!("attn.{l}.ff2_b"), vec![d]));
    }
    v
}

pub(super) fn encode<T: Real>(
    g: &mut Graph<T>,
    var: &dyn Fn(&str) -> Var,
    c: &RankerConfig,
    batch: &Batch,
    x: Var,
) -> Result<Var> {
    let (b, t, d) = (batch.size, batch.steps, c.dim);
    let heads = c.attn_heads;
    let dh = d / heads;
    // time-major -> group-major
    let order: Vec<usize> = (0..b)
        .flat_map(|bi| (0..t).map(move |ti| ti * b + bi))
        .collect();
    let x = g.gather(x, order.clone())?;
    let pos_idx: Vec<usize> = order.iter().map(|&r| batch.positions[r]).collect();
    let pos = g.gather(var("attn.pos"), pos_idx)?;
    let mut h = g.add(x, pos)?;

    let mut mask = vec![T::zero(); b * t * t];
    for bi in 0..b {
        for i in 0..t {
            for j in 0..t {
                if j > i || !batch.seq_mask[j * b + bi] {
                    mask[(bi * t + i) * t + j] = T::of(MASKED);
                }
            }
        }
    }
    let mask = g.constant(Tensor::matrix(b * t, t, mask));
    let scale = T::of(1.0 / (dh as f64).sqrt());

    for l in 0..c.attn_layers {
        let w = |n: &str| var(&format!("attn.{l}.{n}"));
        let hn = g.layer_norm(h, T::of(LN_EPS));
        let q = g.matmul(hn, w("wq"))?;
        let k = g.matmul(hn, w("wk"))?;
        let v = g.matmul(hn, w("wv"))?;
        let mut outs = Vec::with_capacity(heads);
        for hd in 0..heads {
            let qh = g.slice_cols(q, hd * dh, dh)?;
            let kh = g.slice_cols(k, hd * dh, dh)?;
            let vh = g.slice_cols(v, hd * dh, dh)?;
            let s = g.batch_matmul(qh, kh, b, true)?;
            let s = g.affine(s, scale, T::zero());
            let s = g.add(s, mask)?;
            let p = g.softmax_rows(s);
            outs.push(g.batch_matmul(p, vh, b, false)?);
        }
        let att = if heads == 1 {
            outs[0]
        } else {
            g.concat(&outs)?
        };
        let att = g.matmul(att, w("wo"))?;
        h = g.add(h, att)?;
        let hn = g.layer_norm(h, T::of(LN_EPS));
        let f = g.matmul(hn, w("ff1"))?;
        let f = g.add(f, w("ff1_b"))?;
        let f = g.relu(f);
        let f = g.matmul(f, w("ff2"))?;
        let f = g.add(f, w("ff2_b"))?;
        h = g.add(h, f)?;
    }
    let last = g.gather(h, (0..b).map(|bi| bi * t + t - 1).collect())?;
    Ok(g.layer_norm(last, T::of(LN_EPS)))
}
