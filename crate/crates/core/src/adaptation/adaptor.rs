use super::modes::{
    patched_sizes, phi_layout, AdaptorConfig, ExtractorMode, FilmMode, ParamMode, PATCHED,
};
use crate::data::{GroupView, ItemId};
use crate::error::{Error, Result};
use crate::numerics::{init, Bound, Graph, ParamSet, Purpose, Real, Rng, Tensor, Var};
use crate::ranker::{BaseRanker, Batch, PredictorPatch, RankerConfig};

/// Adaptor parameters Φ together with the modes that interpret them.
#[derive(Clone, Debug, PartialEq)]
pub struct Adaptor<T> {
    config: AdaptorConfig,
    ranker: RankerConfig,
    params: ParamSet<T>,
}

/// Randomness of a training pass: dropout masks and the latent noise ε.
pub struct Noise<'a> {
    pub dropout: &'a mut Rng,
    pub epsilon: &'a mut Rng,
}

/// Graph handles produced by one adapted forward pass.
#[derive(Clone, Debug)]
pub struct AdaptedPass {
    /// Probabilities for every candidate, group-major, as a column.
    pub scores: Var,
    pub z: Option<Var>,
    pub mu: Option<Var>,
    pub log_sigma: Option<Var>,
    /// Reading-head scores per pool (`size × slots`), in `w1, b1, w2, b2` order.
    pub head_logits: Vec<Var>,
}

/// `(μ, σ, ε, z)` for one candidate set; `z = μ + ε ⊙ σ`.
#[derive(Clone, Debug, PartialEq)]
pub struct DistributionSample<T> {
    pub mu: Vec<T>,
    pub sigma: Vec<T>,
    pub eps: Vec<T>,
    pub z: Vec<T>,
}

/// Eval-mode output for one group.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptedScores<T> {
    pub scores: Vec<T>,
    /// Empty when the adaptor is disabled.
    pub z: Vec<T>,
    /// Mixing weights per pool; empty for modes without pools.
    pub alphas: Vec<Vec<T>>,
}

/// Two-layer network with a ReLU between the layers.
pub fn mlp2<T: Real>(g: &mut Graph<T>, x: Var, w: [Var; 4]) -> Result<Var> {
    let h = g.matmul(x, w[0])?;
    let h = g.add(h, w[1])?;
    let h = g.relu(h);
    let o = g.matmul(h, w[2])?;
    g.add(o, w[3])
}

/// Mixes pool slots by the softmax of the reading-head scores `z · heads`.
/// Returns the patch rows and the head scores.
pub fn compose_patch<T: Real>(
    g: &mut Graph<T>,
    z: Var,
    heads: Var,
    slots: Var,
) -> Result<(Var, Var)> {
    let logits = g.matmul(z, heads)?;
    Ok((g.softmax_mix(logits, slots)?, logits))
}

/// `γ ⊙ x + β` with `γ, β` given per row (as columns or full rows).
pub fn modulate_inputs<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    gamma: Option<Var>,
    beta: Option<Var>,
) -> Result<Var> {
    let x = match gamma {
        Some(gm) => g.mul(x, gm)?,
        None => x,
    };
    match beta {
        Some(b) => g.add(x, b),
        None => Ok(x),
    }
}

impl<T: Real> Adaptor<T> {
    /// Fresh adaptor whose modulation starts at the identity: FiLM outputs
    /// `γ = 1, β = 0`, weight pools hold ones (or the base weights for
    /// `no_global`), bias pools and generated patches start neutral.
    pub fn new(config: AdaptorConfig, base: &BaseRanker<T>, seed: u64) -> Result<Self> {
        config.validate()?;
        let r = base.config().clone();
        let mut rng = Rng::stream(seed, Purpose::Init, &[1]);
        let head_std = 1.0 / (r.dim as f64).sqrt();
        let mut params = ParamSet::new();
        for (name, shape) in phi_layout(&config, &r) {
            let t = init_tensor::<T>(&name, &shape, &config, base, head_std, &mut rng)?;
            params.add(name, t);
        }
        Ok(Adaptor {
            config,
            ranker: r,
            params,
        })
    }

    pub fn from_params(
        config: AdaptorConfig,
        ranker: RankerConfig,
        params: ParamSet<T>,
    ) -> Result<Self> {
        config.validate()?;
        let layout = phi_layout(&config, &ranker);
        if layout.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} adaptor tensors for this configuration, found {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, shape), (pn, t)) in layout.iter().zip(params.iter()) {
            if name != pn || shape.as_slice() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "adaptor tensor {pn} {:?} does not match expected {name} {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(Adaptor {
            config,
            ranker,
            params,
        })
    }

    pub fn config(&self) -> &AdaptorConfig {
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

    pub fn cast<U: Real>(&self) -> Adaptor<U> {
        Adaptor {
            config: self.config.clone(),
            ranker: self.ranker.clone(),
            params: self.params.cast(),
        }
    }

    fn var(&self, phi: &Bound, name: &str) -> Result<Var> {
        self.params
            .find(name)
            .map(|id| phi.var(id))
            .ok_or_else(|| Error::Checkpoint(format!("adaptor has no tensor {name}")))
    }

    fn mlp_vars(&self, phi: &Bound, prefix: &str) -> Result<[Var; 4]> {
        Ok([
            self.var(phi, &format!("{prefix}.l1"))?,
            self.var(phi, &format!("{prefix}.l1_b"))?,
            self.var(phi, &format!("{prefix}.l2"))?,
            self.var(phi, &format!("{prefix}.l2_b"))?,
        ])
    }

    /// Group summary from pooled candidate embeddings (`size·m × d`, each
    /// group's rows in a fixed order). Returns `(z, μ, log σ)`; in eval
    /// (`eps == None`) `z` is `μ` itself.
    pub fn extract(
        &self,
        g: &mut Graph<T>,
        phi: &Bound,
        cands: Var,
        group_size: usize,
        eps: Option<Var>,
    ) -> Result<(Var, Option<Var>, Option<Var>)> {
        match self.config.extractor {
            ExtractorMode::Avg => Ok((g.mean_groups(cands, group_size)?, None, None)),
            ExtractorMode::Np => {
                let r = mlp2(g, cands, self.mlp_vars(phi, "np.mlp")?)?;
                let r = g.mean_groups(r, group_size)?;
                let s = g.matmul(r, self.var(phi, "np.w_s")?)?;
                let s = g.relu(s);
                let mu = g.matmul(s, self.var(phi, "np.w_mu")?)?;
                let log_sigma = g.matmul(s, self.var(phi, "np.w_sigma")?)?;
                let z = match eps {
                    None => mu,
                    Some(e) => {
                        let sigma = g.exp(log_sigma);
                        let es = g.mul(e, sigma)?;
                        g.add(mu, es)?
                    }
                };
                Ok((z, Some(mu), Some(log_sigma)))
            }
        }
    }

    /// Per-row `(γ, β)` for the time-major history rows `x`.
    pub fn film_coefficients(
        &self,
        g: &mut Graph<T>,
        phi: &Bound,
        z: Var,
        x: Var,
        batch: &Batch,
    ) -> Result<(Option<Var>, Option<Var>)> {
        let rows = batch.seq_rows_to_group();
        match self.config.film {
            FilmMode::None => Ok((None, None)),
            FilmMode::Scalar | FilmMode::Vector => {
                let gamma = mlp2(g, z, self.mlp_vars(phi, "film.scale")?)?;
                let beta = mlp2(g, z, self.mlp_vars(phi, "film.shift")?)?;
                Ok((
                    Some(g.gather(gamma, rows.clone())?),
                    Some(g.gather(beta, rows)?),
                ))
            }
            FilmMode::PerItem => {
                let zr = g.gather(z, rows)?;
                let input = g.concat(&[zr, x])?;
                let gamma = mlp2(g, input, self.mlp_vars(phi, "film.scale")?)?;
                let beta = mlp2(g, input, self.mlp_vars(phi, "film.shift")?)?;
                Ok((Some(gamma), Some(beta)))
            }
            FilmMode::AddBias => {
                let beta = mlp2(g, z, self.mlp_vars(phi, "film.shift")?)?;
                Ok((None, Some(g.gather(beta, rows)?)))
            }
        }
    }

    /// Per-group predictor patch and the pool head scores (if any).
    pub fn predictor_patch(
        &self,
        g: &mut Graph<T>,
        base: &BaseRanker<T>,
        theta: &Bound,
        phi: &Bound,
        z: Var,
    ) -> Result<(PredictorPatch, Vec<Var>)> {
        let mut patch = PredictorPatch::default();
        let mut logits = Vec::new();
        let base_var = |name: &str| theta.var(base.params().find(name).expect("predictor tensor"));
        match self.config.param {
            ParamMode::None => {}
            ParamMode::AddBias1 | ParamMode::AddBias2 => {
                patch.extra[0] = Some(g.matmul(z, self.var(phi, "bias.p1")?)?);
                if self.config.param == ParamMode::AddBias2 {
                    patch.extra[1] = Some(g.matmul(z, self.var(phi, "bias.p2")?)?);
                }
            }
            ParamMode::MemNet | ParamMode::NoGlobal | ParamMode::FreePara => {
                let sizes = patched_sizes(&self.ranker);
                let mut layers = Vec::with_capacity(4);
                for (k, p) in PATCHED.iter().enumerate() {
                    let hat = if self.config.param == ParamMode::FreePara {
                        mlp2(g, z, self.mlp_vars(phi, &format!("gen.{p}"))?)?
                    } else {
                        let heads = self.var(phi, &format!("pool.{p}.heads"))?;
                        let slots = self.var(phi, &format!("pool.{p}.slots"))?;
                        let (hat, a) = compose_patch(g, z, heads, slots)?;
                        logits.push(a);
                        hat
                    };
                    let adapted = if self.config.param == ParamMode::NoGlobal {
                        hat
                    } else {
                        let w = g.reshape(base_var(&format!("pred.{p}")), vec![1, sizes[k]])?;
                        if k % 2 == 0 {
                            g.mul(hat, w)?
                        } else {
                            g.add(hat, w)?
                        }
                    };
                    layers.push(adapted);
                }
                patch.layers = Some([layers[0], layers[1], layers[2], layers[3]]);
            }
        }
        Ok((patch, logits))
    }

    /// One adapted pass: summarize the candidates, condition the history,
    /// encode, patch the predictor and score. One `z` and one patch per group.
    pub fn forward(
        &self,
        base: &BaseRanker<T>,
        g: &mut Graph<T>,
        theta: &Bound,
        phi: &Bound,
        batch: &Batch,
        noise: Option<Noise<'_>>,
    ) -> Result<AdaptedPass> {
        let (mut dropout, epsilon) = match noise {
            Some(n) => (Some(n.dropout), Some(n.epsilon)),
            None => (None, None),
        };
        if self.config.is_disabled() {
            let scores = base.forward(g, theta, batch, dropout)?;
            return Ok(AdaptedPass {
                scores,
                z: None,
                mu: None,
                log_sigma: None,
                head_logits: Vec::new(),
            });
        }
        let m = batch.group_size;
        let pooled = base.embed_items(g, theta, &batch.pool_ids)?;
        let eps = match epsilon {
            Some(rng) if self.config.extractor == ExtractorMode::Np => {
                let n = batch.size * self.ranker.dim;
                let e: Vec<T> = (0..n).map(|_| T::of(rng.gaussian())).collect();
                Some(g.constant(Tensor::matrix(batch.size, self.ranker.dim, e)))
            }
            _ => None,
        };
        let (z, mu, log_sigma) = self.extract(g, phi, pooled, m, eps)?;

        let seq = base.embed_sequence(g, theta, batch, dropout.as_deref_mut())?;
        let seq = match seq {
            Some(x) => {
                let (gamma, beta) = self.film_coefficients(g, phi, z, x, batch)?;
                Some(modulate_inputs(g, x, gamma, beta)?)
            }
            None => None,
        };
        let user = base.encode(g, theta, batch, seq)?;
        let (patch, head_logits) = self.predictor_patch(g, base, theta, phi, z)?;
        let items = base.embed_items(g, theta, &batch.cand_ids)?;
        let users = g.gather(user, batch.repeat_groups(m))?;
        let scores = base.predict(g, theta, users, items, m, &patch, dropout)?;
        Ok(AdaptedPass {
            scores,
            z: Some(z),
            mu,
            log_sigma,
            head_logits,
        })
    }

    /// Eval-mode scores with `z` and pool weights, batched; results do not
    /// depend on batch composition.
    pub fn score_groups(
        &self,
        base: &BaseRanker<T>,
        groups: &[GroupView<'_>],
        batch_size: usize,
    ) -> Result<Vec<AdaptedScores<T>>> {
        let mut out = Vec::with_capacity(groups.len());
        for chunk in groups.chunks(batch_size.max(1)) {
            let batch = base.batch(chunk)?;
            let mut g = Graph::new();
            let theta = base.params().bind(&mut g, false);
            let phi = self.params.bind(&mut g, false);
            let pass = self.forward(base, &mut g, &theta, &phi, &batch, None)?;
            g.check_finite()?;
            let alphas: Vec<Var> = pass
                .head_logits
                .iter()
                .map(|&a| g.softmax_rows(a))
                .collect();
            let scores = g.value(pass.scores).data();
            for b in 0..batch.size {
                let m = batch.group_size;
                out.push(AdaptedScores {
                    scores: scores[b * m..(b + 1) * m].to_vec(),
                    z: pass
                        .z
                        .map(|z| g.value(z).row(b).to_vec())
                        .unwrap_or_default(),
                    alphas: alphas.iter().map(|&a| g.value(a).row(b).to_vec()).collect(),
                });
            }
        }
        Ok(out)
    }

    pub fn score_group(
        &self,
        base: &BaseRanker<T>,
        group: GroupView<'_>,
    ) -> Result<AdaptedScores<T>> {
        Ok(self.score_groups(base, &[group], 1)?.remove(0))
    }

    /// `(μ, σ, ε, z)` for a candidate set. `eps = None` is the eval phase (ε = 0).
    pub fn distribution(
        &self,
        base: &BaseRanker<T>,
        items: &[ItemId],
        eps: Option<&[T]>,
    ) -> Result<DistributionSample<T>> {
        if items.is_empty() {
            return Err(Error::Empty("candidate set"));
        }
        let d = self.ranker.dim;
        let view = GroupView {
            user: 0,
            history: &[],
            items,
        };
        let batch = Batch::new(&[view], self.ranker.max_seq_len)?;
        let mut g = Graph::new();
        let theta = base.params().bind(&mut g, false);
        let phi = self.params.bind(&mut g, false);
        let pooled = base.embed_items(&mut g, &theta, &batch.pool_ids)?;
        let eps_v = match eps {
            Some(e) if e.len() != d => {
                return Err(Error::shape(
                    "distribution",
                    format!("eps has {} values", e.len()),
                ))
            }
            Some(e) => Some(g.constant(Tensor::row_vector(e.to_vec()))),
            None => None,
        };
        let (z, mu, log_sigma) = self.extract(&mut g, &phi, pooled, items.len(), eps_v)?;
        let z = g.value(z).data().to_vec();
        let (mu, sigma) = match (mu, log_sigma) {
            (Some(mu), Some(ls)) => (
                g.value(mu).data().to_vec(),
                g.value(ls).data().iter().map(|v| v.exp()).collect(),
            ),
            _ => (z.clone(), vec![T::zero(); d]),
        };
        let eps = eps.map(<[T]>::to_vec).unwrap_or_else(|| vec![T::zero(); d]);
        Ok(DistributionSample { mu, sigma, eps, z })
    }
}

fn init_tensor<T: Real>(
    name: &str,
    shape: &[usize],
    config: &AdaptorConfig,
    base: &BaseRanker<T>,
    head_std: f64,
    rng: &mut Rng,
) -> Result<Tensor<T>> {
    let leaf = name.rsplit('.').next().unwrap_or(name);
    let stem = name.rsplit_once('.').map(|(s, _)| s).unwrap_or("");
    // Which patched tensor a pool or generator belongs to, and whether it is a weight.
    let patched = stem.rsplit('.').next().filter(|p| PATCHED.contains(p));
    let is_weight_patch = matches!(patched, Some("w1") | Some("w2"));
    Ok(match leaf {
        "heads" => init::normal(rng, shape, head_std),
        "slots" if config.param == ParamMode::NoGlobal => {
            let p = patched.expect("pool name");
            let w = base.params().get(
                base.params()
                    .find(&format!("pred.{p}"))
                    .expect("predictor tensor"),
            );
            let mut data = Vec::with_capacity(shape[0] * w.len());
            for _ in 0..shape[0] {
                data.extend_from_slice(w.data());
            }
            Tensor::new(shape.to_vec(), data)?
        }
        "slots" => Tensor::full(shape, if is_weight_patch { T::one() } else { T::zero() }),
        // Output layers of FiLM and patch generators start at zero so the
        // first pass is the identity modulation.
        "l2" if !name.starts_with("np.") => Tensor::zeros(shape),
        "l2_b"
            if name.starts_with("film.scale") || (name.starts_with("gen.") && is_weight_patch) =>
        {
            Tensor::full(shape, T::one())
        }
        "p1" | "p2" => Tensor::zeros(shape),
        _ if shape.len() == 2 => init::xavier(rng, shape[0], shape[1]),
        _ => Tensor::zeros(shape),
    })
}
