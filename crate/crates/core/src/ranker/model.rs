use std::fmt;
use std::str::FromStr;

use super::attention;
use super::batch::Batch;
use crate::data::GroupView;
use crate::error::{Error, Result};
use crate::numerics::{init, Bound, Graph, ParamId, ParamSet, Purpose, Real, Rng, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderKind {
    Gru,
    Mf,
    SelfAttention,
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::Gru => "gru",
            EncoderKind::Mf => "mf",
            EncoderKind::SelfAttention => "self_attention",
        })
    }
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gru" => Ok(EncoderKind::Gru),
            "mf" => Ok(EncoderKind::Mf),
            "self_attention" | "sasrec" => Ok(EncoderKind::SelfAttention),
            _ => Err(Error::Config(format!(
                "unknown encoder {s:?} (gru, mf, self_attention)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankerConfig {
    pub encoder: EncoderKind,
    pub num_items: usize,
    /// Rows of the user table; only the MF encoder has one.
    pub num_users: usize,
    pub dim: usize,
    /// Width of the predictor's hidden layer.
    pub hidden: usize,
    pub dropout: f64,
    pub max_seq_len: usize,
    pub attn_layers: usize,
    pub attn_heads: usize,
}

impl Default for RankerConfig {
    fn default() -> Self {
        RankerConfig {
            encoder: EncoderKind::Gru,
            num_items: 0,
            num_users: 0,
            dim: 64,
            hidden: 64,
            dropout: 0.4,
            max_seq_len: 50,
            attn_layers: 2,
            attn_heads: 2,
        }
    }
}

impl RankerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_items == 0 || self.dim == 0 || self.hidden == 0 || self.max_seq_len == 0 {
            return bad("num_items, dim, hidden and max_seq_len must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.encoder == EncoderKind::Mf && self.num_users == 0 {
            return bad("the mf encoder needs num_users > 0");
        }
        if self.encoder == EncoderKind::SelfAttention
            && (self.attn_heads == 0
                || self.attn_layers == 0
                || !self.dim.is_multiple_of(self.attn_heads))
        {
            return bad("self_attention needs layers > 0 and dim divisible by heads");
        }
        Ok(())
    }
}

/// Names and shapes of the base parameters, in storage order.
pub fn theta_layout(c: &RankerConfig) -> Vec<(String, Vec<usize>)> {
    let d = c.dim;
    let mut v: Vec<(String, Vec<usize>)> = vec![("item_emb".into(), vec![c.num_items, d])];
    match c.encoder {
        EncoderKind::Mf => v.push(("user_emb".into(), vec![c.num_users, d])),
        EncoderKind::Gru => {
            v.push(("gru.w_ih".into(), vec![d, 3 * d]));
            v.push(("gru.w_hh".into(), vec![d, 3 * d]));
            v.push(("gru.b_ih".into(), vec![3 * d]));
            v.push(("gru.b_hh".into(), vec![3 * d]));
        }
        EncoderKind::SelfAttention => v.extend(attention::layout(c)),
    }
    v.push(("pred.w1".into(), vec![2 * d, c.hidden]));
    v.push(("pred.b1".into(), vec![c.hidden]));
    v.push(("pred.w2".into(), vec![c.hidden, 1]));
    v.push(("pred.b2".into(), vec![1]));
    v
}

/// Per-group predictor parameters supplied by an adaptor. Each `layers` entry
/// has one row per group: `W1` flattened row-major, `b1`, `W2`, `b2`.
/// `extra` rows are added to the pre-activations of layer 1 and layer 2.
#[derive(Clone, Debug, Default)]
pub struct PredictorPatch {
    pub layers: Option<[Var; 4]>,
    pub extra: [Option<Var>; 2],
}

/// The global ranker: item embeddings, a sequential (or MF) user encoder and a
/// two-layer scoring MLP over `[p_u, q_v]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseRanker<T> {
    config: RankerConfig,
    params: ParamSet<T>,
    item_emb: ParamId,
    pred: [ParamId; 4],
}

fn dropout_mask(rng: &mut Rng, n: usize, p: f64) -> Vec<bool> {
    (0..n).map(|_| rng.uniform() >= p).collect()
}

impl<T: Real> BaseRanker<T> {
    pub fn new(config: RankerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::stream(seed, Purpose::Init, &[0]);
        let mut params = ParamSet::new();
        for (name, shape) in theta_layout(&config) {
            let t = if name.ends_with("emb") || name == "attn.pos" {
                init::normal(&mut rng, &shape, 0.01)
            } else if shape.len() == 2 {
                init::xavier(&mut rng, shape[0], shape[1])
            } else {
                Tensor::zeros(&shape)
            };
            params.add(name, t);
        }
        Self::from_params(config, params)
    }

    /// Wraps loaded parameters after checking names and shapes against the config.
    pub fn from_params(config: RankerConfig, params: ParamSet<T>) -> Result<Self> {
        config.validate()?;
        let layout = theta_layout(&config);
        if layout.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} base tensors, found {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, shape), (pn, t)) in layout.iter().zip(params.iter()) {
            if name != pn || shape.as_slice() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "base tensor {pn} {:?} does not match expected {name} {shape:?}",
                    t.shape()
                )));
            }
        }
        let id = |n: &str| params.find(n).expect("layout checked");
        let item_emb = id("item_emb");
        let pred = [id("pred.w1"), id("pred.b1"), id("pred.w2"), id("pred.b2")];
        Ok(BaseRanker {
            config,
            params,
            item_emb,
            pred,
        })
    }

    pub fn config(&self) -> &RankerConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamSet<T> {
        self.params
    }

    pub fn cast<U: Real>(&self) -> BaseRanker<U> {
        BaseRanker::from_params(self.config.clone(), self.params.cast()).expect("same layout")
    }

    fn var(&self, theta: &Bound, name: &str) -> Var {
        theta.var(self.params.find(name).expect("known parameter"))
    }

    pub fn batch(&self, groups: &[GroupView<'_>]) -> Result<Batch> {
        Batch::new(groups, self.config.max_seq_len)
    }

    /// Embedding rows for the history, time-major `(steps·size)×d`, with
    /// dropout when `rng` is given. `None` for the MF encoder.
    pub fn embed_sequence(
        &self,
        g: &mut Graph<T>,
        theta: &Bound,
        batch: &Batch,
        rng: Option<&mut Rng>,
    ) -> Result<Option<Var>> {
        if self.config.encoder == EncoderKind::Mf {
            return Ok(None);
        }
        if batch.lengths.contains(&0) {
            return Err(Error::Empty(
                "history (sequential encoders need at least one item)",
            ));
        }
        let x = g.gather(theta.var(self.item_emb), batch.seq_ids.clone())?;
        Ok(Some(self.maybe_dropout(g, x, rng)?))
    }

    fn maybe_dropout(&self, g: &mut Graph<T>, x: Var, rng: Option<&mut Rng>) -> Result<Var> {
        match rng {
            Some(rng) if self.config.dropout > 0.0 => {
                let keep = dropout_mask(rng, g.value(x).len(), self.config.dropout);
                g.dropout(x, &keep, self.config.dropout)
            }
            _ => Ok(x),
        }
    }

    /// User representation `p_u`, one row per group.
    pub fn encode(
        &self,
        g: &mut Graph<T>,
        theta: &Bound,
        batch: &Batch,
        seq: Option<Var>,
    ) -> Result<Var> {
        match self.config.encoder {
            EncoderKind::Mf => g.gather(self.var(theta, "user_emb"), batch.users.clone()),
            EncoderKind::Gru => self.gru(g, theta, batch, seq.ok_or(Error::Empty("history"))?),
            EncoderKind::SelfAttention => attention::encode(
                g,
                &|n| self.var(theta, n),
                &self.config,
                batch,
                seq.ok_or(Error::Empty("history"))?,
            ),
        }
    }

    fn gru(&self, g: &mut Graph<T>, theta: &Bound, batch: &Batch, x: Var) -> Result<Var> {
        let (b, d) = (batch.size, self.config.dim);
        let w_ih = self.var(theta, "gru.w_ih");
        let w_hh = self.var(theta, "gru.w_hh");
        let b_ih = self.var(theta, "gru.b_ih");
        let b_hh = self.var(theta, "gru.b_hh");
        let xw = g.matmul(x, w_ih)?;
        let xp = g.add(xw, b_ih)?;
        let mut h = g.constant(Tensor::zeros(&[b, d]));
        for t in 0..batch.steps {
            let xt = g.gather(xp, (t * b..(t + 1) * b).collect())?;
            let hw = g.matmul(h, w_hh)?;
            let hp = g.add(hw, b_hh)?;
            let [xr, xz, xn] = split3(g, xt, d)?;
            let [hr, hz, hn] = split3(g, hp, d)?;
            let r = g.add(xr, hr)?;
            let r = g.sigmoid(r);
            let z = g.add(xz, hz)?;
            let z = g.sigmoid(z);
            let rh = g.mul(r, hn)?;
            let n = g.add(xn, rh)?;
            let n = g.tanh(n);
            // h' = (1 - z) n + z h = n + z (h - n)
            let diff = g.sub(h, n)?;
            let zd = g.mul(z, diff)?;
            let next = g.add(n, zd)?;
            let mask = batch.step_mask(t);
            h = if mask.iter().all(|&m| m) {
                next
            } else {
                g.select_rows(mask.to_vec(), next, h)?
            };
        }
        Ok(h)
    }

    pub fn embed_items(&self, g: &mut Graph<T>, theta: &Bound, ids: &[usize]) -> Result<Var> {
        g.gather(theta.var(self.item_emb), ids.to_vec())
    }

    /// Scores rows of `[users | items]`, where consecutive blocks of
    /// `group_size` rows share one group's patch. Returns probabilities as a
    /// column.
    #[allow(clippy::too_many_arguments)]
    pub fn predict(
        &self,
        g: &mut Graph<T>,
        theta: &Bound,
        users: Var,
        items: Var,
        group_size: usize,
        patch: &PredictorPatch,
        rng: Option<&mut Rng>,
    ) -> Result<Var> {
        let x = g.concat(&[users, items])?;
        let rows = g.value(x).rows();
        let d2 = g.value(x).cols();
        if d2 != 2 * self.config.dim {
            return Err(Error::shape(
                "predict",
                format!("input width {d2}, expected {}", 2 * self.config.dim),
            ));
        }
        let rep: Vec<usize> = (0..rows).map(|r| r / group_size).collect();
        let [w1, b1, w2, b2] = self.pred.map(|id| theta.var(id));
        let h = self.layer(
            g,
            x,
            patch.layers.map(|l| (l[0], l[1])),
            (w1, b1),
            group_size,
            self.config.hidden,
            &rep,
        )?;
        let h = match patch.extra[0] {
            Some(e) => {
                let e = g.gather(e, rep.clone())?;
                g.add(h, e)?
            }
            None => h,
        };
        let h = g.relu(h);
        let h = self.maybe_dropout(g, h, rng)?;
        let o = self.layer(
            g,
            h,
            patch.layers.map(|l| (l[2], l[3])),
            (w2, b2),
            group_size,
            1,
            &rep,
        )?;
        let o = match patch.extra[1] {
            Some(e) => {
                let e = g.gather(e, rep)?;
                g.add(o, e)?
            }
            None => o,
        };
        Ok(g.sigmoid(o))
    }

    #[allow(clippy::too_many_arguments)]
    fn layer(
        &self,
        g: &mut Graph<T>,
        x: Var,
        patched: Option<(Var, Var)>,
        base: (Var, Var),
        group_size: usize,
        out: usize,
        rep: &[usize],
    ) -> Result<Var> {
        match patched {
            None => {
                let y = g.matmul(x, base.0)?;
                g.add(y, base.1)
            }
            Some((w, b)) => {
                let y = g.group_matmul(x, w, group_size, out)?;
                let b = g.gather(b, rep.to_vec())?;
                g.add(y, b)
            }
        }
    }

    /// Full base forward pass; probabilities for every candidate, group-major.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        theta: &Bound,
        batch: &Batch,
        mut rng: Option<&mut Rng>,
    ) -> Result<Var> {
        let seq = self.embed_sequence(g, theta, batch, rng.as_deref_mut())?;
        let user = self.encode(g, theta, batch, seq)?;
        let items = self.embed_items(g, theta, &batch.cand_ids)?;
        let users = g.gather(user, batch.repeat_groups(batch.group_size))?;
        self.predict(
            g,
            theta,
            users,
            items,
            batch.group_size,
            &PredictorPatch::default(),
            rng,
        )
    }

    /// Eval-mode scores, one vector per group in candidate order. Results do
    /// not depend on how groups are batched.
    pub fn score_groups(&self, groups: &[GroupView<'_>], batch_size: usize) -> Result<Vec<Vec<T>>> {
        let mut out = Vec::with_capacity(groups.len());
        for chunk in groups.chunks(batch_size.max(1)) {
            let batch = self.batch(chunk)?;
            let mut g = Graph::new();
            let theta = self.params.bind(&mut g, false);
            let s = self.forward(&mut g, &theta, &batch, None)?;
            g.check_finite()?;
            out.extend(
                g.value(s)
                    .data()
                    .chunks(batch.group_size)
                    .map(<[T]>::to_vec),
            );
        }
        Ok(out)
    }

    pub fn score_group(&self, group: GroupView<'_>) -> Result<Vec<T>> {
        Ok(self.score_groups(&[group], 1)?.remove(0))
    }

    /// Eval-mode user representation for one history (or user id under MF).
    pub fn user_representation(&self, group: GroupView<'_>) -> Result<Vec<T>> {
        let batch = self.batch(&[group])?;
        let mut g = Graph::new();
        let theta = self.params.bind(&mut g, false);
        let seq = self.embed_sequence(&mut g, &theta, &batch, None)?;
        let u = self.encode(&mut g, &theta, &batch, seq)?;
        Ok(g.value(u).data().to_vec())
    }

    pub fn item_embedding(&self, item: usize) -> Result<Vec<T>> {
        let t = self.params.get(self.item_emb);
        if item >= t.rows() {
            return Err(Error::IdOutOfRange {
                id: item,
                rows: t.rows(),
            });
        }
        Ok(t.row(item).to_vec())
    }

    /// Eval-mode score of a single `(p_u, q_v)` pair.
    pub fn predict_score(&self, p_u: &[T], q_v: &[T]) -> Result<T> {
        let d = self.config.dim;
        if p_u.len() != d || q_v.len() != d {
            return Err(Error::shape(
                "predict_score",
                format!("{} + {}, expected {d} + {d}", p_u.len(), q_v.len()),
            ));
        }
        let mut g = Graph::new();
        let theta = self.params.bind(&mut g, false);
        let u = g.constant(Tensor::row_vector(p_u.to_vec()));
        let v = g.constant(Tensor::row_vector(q_v.to_vec()));
        let s = self.predict(&mut g, &theta, u, v, 1, &PredictorPatch::default(), None)?;
        Ok(g.value(s).item())
    }
}

fn split3<T: Real>(g: &mut Graph<T>, x: Var, d: usize) -> Result<[Var; 3]> {
    Ok([
        g.slice_cols(x, 0, d)?,
        g.slice_cols(x, d, d)?,
        g.slice_cols(x, 2 * d, d)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(encoder: EncoderKind) -> RankerConfig {
        RankerConfig {
            encoder,
            num_items: 30,
            num_users: 5,
            dim: 8,
            hidden: 6,
            max_seq_len: 6,
            ..Default::default()
        }
    }

    #[test]
    fn layout_counts() {
        let c = RankerConfig {
            num_items: 10_676,
            ..Default::default()
        };
        let n: usize = theta_layout(&c)
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum();
        assert_eq!(n, 683_264 + 24_960 + 8_321);
    }

    #[test]
    fn zero_predictor_gives_half() {
        let mut r = BaseRanker::<f64>::new(cfg(EncoderKind::Gru), 1).unwrap();
        for name in ["pred.w1", "pred.b1", "pred.w2", "pred.b2"] {
            let id = r.params().find(name).unwrap();
            r.params_mut().get_mut(id).data_mut().fill(0.0);
        }
        assert_eq!(r.predict_score(&[0.3; 8], &[-2.0; 8]).unwrap(), 0.5);
    }

    #[test]
    fn mf_ignores_history() {
        let r = BaseRanker::<f32>::new(cfg(EncoderKind::Mf), 2).unwrap();
        let items: Vec<u32> = (0..20).collect();
        let a = r
            .score_group(GroupView {
                user: 3,
                history: &[1, 2, 3],
                items: &items,
            })
            .unwrap();
        let b = r
            .score_group(GroupView {
                user: 3,
                history: &[9],
                items: &items,
            })
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_history_rejected_for_gru() {
        let r = BaseRanker::<f32>::new(cfg(EncoderKind::Gru), 2).unwrap();
        assert!(r
            .score_group(GroupView {
                user: 0,
                history: &[],
                items: &[1, 2]
            })
            .is_err());
    }

    #[test]
    fn batching_does_not_change_scores() {
        for enc in [EncoderKind::Gru, EncoderKind::SelfAttention] {
            let r = BaseRanker::<f32>::new(cfg(enc), 3).unwrap();
            let hists: Vec<Vec<u32>> = vec![vec![1], vec![4, 5, 6, 7, 8, 9, 10, 11], vec![2, 2, 3]];
            let items: Vec<u32> = (10..30).collect();
            let views: Vec<GroupView> = hists
                .iter()
                .map(|h| GroupView {
                    user: 0,
                    history: h,
                    items: &items,
                })
                .collect();
            let together = r.score_groups(&views, 8).unwrap();
            for (v, expect) in views.iter().zip(&together) {
                assert_eq!(&r.score_group(*v).unwrap(), expect);
            }
        }
    }
}
