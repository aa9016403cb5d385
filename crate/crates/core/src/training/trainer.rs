use std::fmt::{self, Write as _};
use std::str::FromStr;

use super::loss::bce_graph;
use crate::adaptation::{Adaptor, AdaptorConfig, Noise};
use crate::data::{CandidateGroup, GroupView};
use crate::error::{Error, Result};
use crate::evaluation::evaluate;
use crate::numerics::{
    clip_global_norm, AdamConfig, AdamState, Graph, ParamSet, Purpose, Rng, Tensor,
};
use crate::ranker::{BaseRanker, RankerConfig};

/// Which parameters the adaptor stage starts from and updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainStrategy {
    /// Fresh Θ and Φ, trained together.
    ScratchJoint,
    /// Trained Θ plus fresh Φ, both updated.
    FinetuneJoint,
    /// Trained Θ held fixed, only Φ updated.
    FinetuneAdaptor,
}

impl TrainStrategy {
    pub const ALL: [TrainStrategy; 3] = [
        TrainStrategy::ScratchJoint,
        TrainStrategy::FinetuneJoint,
        TrainStrategy::FinetuneAdaptor,
    ];

    pub fn needs_base(self) -> bool {
        self != TrainStrategy::ScratchJoint
    }

    pub fn updates_theta(self) -> bool {
        self != TrainStrategy::FinetuneAdaptor
    }
}

impl fmt::Display for TrainStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainStrategy::ScratchJoint => "scratch_joint",
            TrainStrategy::FinetuneJoint => "finetune_joint",
            TrainStrategy::FinetuneAdaptor => "finetune_adaptor",
        })
    }
}

impl FromStr for TrainStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TrainStrategy::ALL.into_iter().find(|t| t.to_string() == s).ok_or_else(|| {
            Error::Config(format!("unknown strategy {s:?}; expected scratch_joint, finetune_joint or finetune_adaptor"))
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    /// Groups per step; each group contributes all of its candidates to the loss.
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation GAUC improvement before stopping.
    pub patience: usize,
    pub clip_norm: f64,
    /// Stop after this many optimizer steps (0: no limit).
    pub max_steps: usize,
    pub eval_batch_size: usize,
    pub seed: u64,
    /// Print each log row to stderr as it is produced.
    pub verbose: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 256,
            max_epochs: 20,
            patience: 3,
            clip_norm: 5.0,
            max_steps: 0,
            eval_batch_size: 512,
            seed: 0,
            verbose: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str| Err(Error::Config(format!("{k} must be positive")));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr");
        }
        if self.batch_size == 0 {
            return bad("batch_size");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs");
        }
        if self.patience == 0 {
            return bad("patience");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm");
        }
        if self.eval_batch_size == 0 {
            return bad("eval_batch_size");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: usize,
    /// Mean training loss over the epoch; NaN for the pre-training row.
    pub loss: f64,
    pub valid_gauc: f64,
    pub valid_ndcg: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
    /// Epoch whose parameters were kept (0: the starting point).
    pub best_epoch: usize,
}

impl TrainLog {
    pub fn tsv(&self, header: Option<&str>) -> String {
        let mut s = String::new();
        if let Some(h) = header {
            for line in h.lines() {
                let _ = writeln!(s, "# {line}");
            }
        }
        s.push_str("epoch\tstep\tloss\tvalid_gauc\tvalid_ndcg\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{}\t{:.6}\t{:.6}\t{:.6}",
                r.epoch, r.step, r.loss, r.valid_gauc, r.valid_ndcg
            );
        }
        s
    }

    pub fn best(&self) -> Option<&LogRow> {
        self.rows.iter().find(|r| r.epoch == self.best_epoch)
    }
}

/// Θ and optionally Φ, with which of them the optimizer may touch.
struct Learner {
    base: BaseRanker<f32>,
    adaptor: Option<Adaptor<f32>>,
    train_theta: bool,
}

impl Learner {
    fn snapshot(&self) -> (ParamSet<f32>, Option<ParamSet<f32>>) {
        (
            self.base.params().clone(),
            self.adaptor.as_ref().map(|a| a.params().clone()),
        )
    }

    fn restore(&mut self, (theta, phi): (ParamSet<f32>, Option<ParamSet<f32>>)) {
        *self.base.params_mut() = theta;
        if let (Some(a), Some(p)) = (self.adaptor.as_mut(), phi) {
            *a.params_mut() = p;
        }
    }

    fn validate(&self, valid: &[CandidateGroup], batch_size: usize) -> Result<(f64, f64)> {
        let r = evaluate(&self.base, self.adaptor.as_ref(), valid, batch_size)?;
        Ok((r.gauc, r.ndcg))
    }
}

fn run(
    mut learner: Learner,
    train: &[CandidateGroup],
    valid: &[CandidateGroup],
    cfg: &TrainConfig,
) -> Result<(Learner, TrainLog)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training groups"));
    }
    if valid.is_empty() {
        return Err(Error::Empty("validation groups"));
    }
    let adam_cfg = AdamConfig::with_lr(cfg.lr);
    let mut theta_adam = learner
        .train_theta
        .then(|| AdamState::new(adam_cfg, learner.base.params().tensors()));
    let mut phi_adam = learner
        .adaptor
        .as_ref()
        .map(|a| AdamState::new(adam_cfg, a.params().tensors()));

    let mut log = TrainLog::default();
    let (gauc, ndcg) = learner.validate(valid, cfg.eval_batch_size)?;
    let row = LogRow {
        epoch: 0,
        step: 0,
        loss: f64::NAN,
        valid_gauc: gauc,
        valid_ndcg: ndcg,
    };
    report(cfg, &row);
    log.rows.push(row);
    let mut best = (gauc, learner.snapshot());
    let mut stale = 0;
    let mut step = 0usize;

    'epochs: for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        Rng::stream(cfg.seed, Purpose::Shuffle, &[epoch as u64]).shuffle(&mut order);
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps > 0 && step >= cfg.max_steps {
                break;
            }
            let key = [epoch as u64, step as u64];
            let loss = train_step(
                &mut learner,
                train,
                chunk,
                cfg,
                key,
                theta_adam.as_mut(),
                phi_adam.as_mut(),
            )
            .map_err(|e| match e {
                Error::NonFinite(detail) => Error::Diverged {
                    epoch,
                    step,
                    detail,
                },
                e => e,
            })?;
            loss_sum += loss;
            batches += 1;
            step += 1;
        }
        if batches == 0 {
            break;
        }
        let (gauc, ndcg) = learner.validate(valid, cfg.eval_batch_size)?;
        let row = LogRow {
            epoch,
            step,
            loss: loss_sum / batches as f64,
            valid_gauc: gauc,
            valid_ndcg: ndcg,
        };
        report(cfg, &row);
        log.rows.push(row);
        if gauc > best.0 {
            best = (gauc, learner.snapshot());
            log.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break 'epochs;
            }
        }
        if cfg.max_steps > 0 && step >= cfg.max_steps {
            break;
        }
    }
    learner.restore(best.1);
    Ok((learner, log))
}

fn report(cfg: &TrainConfig, r: &LogRow) {
    if cfg.verbose {
        eprintln!(
            "epoch {:>3}  step {:>6}  loss {:.5}  valid gauc {:.5}  ndcg {:.5}",
            r.epoch, r.step, r.loss, r.valid_gauc, r.valid_ndcg
        );
    }
}

fn train_step(
    learner: &mut Learner,
    train: &[CandidateGroup],
    chunk: &[usize],
    cfg: &TrainConfig,
    key: [u64; 2],
    theta_adam: Option<&mut AdamState<f32>>,
    phi_adam: Option<&mut AdamState<f32>>,
) -> Result<f64> {
    let views: Vec<GroupView<'_>> = chunk.iter().map(|&i| train[i].view()).collect();
    let labels: Vec<u8> = chunk.iter().flat_map(|&i| train[i].labels()).collect();
    let batch = learner.base.batch(&views)?;
    let mut dropout = Rng::stream(cfg.seed, Purpose::Dropout, &key);
    let mut g = Graph::new();
    let theta = learner.base.params().bind(&mut g, learner.train_theta);
    let (scores, phi) = match &learner.adaptor {
        None => (
            learner
                .base
                .forward(&mut g, &theta, &batch, Some(&mut dropout))?,
            None,
        ),
        Some(a) => {
            let phi = a.params().bind(&mut g, true);
            let mut epsilon = Rng::stream(cfg.seed, Purpose::Epsilon, &key);
            let noise = Noise {
                dropout: &mut dropout,
                epsilon: &mut epsilon,
            };
            (
                a.forward(&learner.base, &mut g, &theta, &phi, &batch, Some(noise))?
                    .scores,
                Some(phi),
            )
        }
    };
    let loss = bce_graph(&mut g, scores, &labels)?;
    let value = f64::from(g.scalar(loss));
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("training loss {value}")));
    }
    let mut grads = g.backward(loss)?;
    let n_theta = learner.base.params().len();
    let mut all: Vec<Option<Tensor<f32>>> = if learner.train_theta {
        learner.base.params().collect_grads(&theta, &mut grads)
    } else {
        vec![None; n_theta]
    };
    if let (Some(a), Some(phi)) = (&learner.adaptor, &phi) {
        all.extend(a.params().collect_grads(phi, &mut grads));
    }
    let norm = clip_global_norm(&mut all, cfg.clip_norm);
    if !norm.is_finite() {
        return Err(Error::NonFinite(format!("gradient norm {norm}")));
    }
    let phi_grads = all.split_off(n_theta);
    if let Some(adam) = theta_adam {
        adam.step(learner.base.params_mut().tensors_mut(), &all)?;
    }
    if let (Some(adam), Some(a)) = (phi_adam, learner.adaptor.as_mut()) {
        adam.step(a.params_mut().tensors_mut(), &phi_grads)?;
    }
    Ok(value)
}

/// First stage: Θ alone, early-stopped on validation GAUC. Returns the best
/// epoch's parameters.
pub fn train_base(
    base: BaseRanker<f32>,
    train: &[CandidateGroup],
    valid: &[CandidateGroup],
    cfg: &TrainConfig,
) -> Result<(BaseRanker<f32>, TrainLog)> {
    let (l, log) = run(
        Learner {
            base,
            adaptor: None,
            train_theta: true,
        },
        train,
        valid,
        cfg,
    )?;
    Ok((l.base, log))
}

/// Second stage. `base` is required for the finetune strategies; under
/// `scratch_joint` Θ is freshly initialized from `ranker` (or the given base's
/// configuration) and any trained values are ignored.
pub fn train_adapter(
    base: Option<&BaseRanker<f32>>,
    ranker: &RankerConfig,
    adaptor: &AdaptorConfig,
    strategy: TrainStrategy,
    train: &[CandidateGroup],
    valid: &[CandidateGroup],
    cfg: &TrainConfig,
) -> Result<(BaseRanker<f32>, Adaptor<f32>, TrainLog)> {
    let base = match (strategy, base) {
        (TrainStrategy::ScratchJoint, b) => {
            BaseRanker::new(b.map_or(ranker, |b| b.config()).clone(), cfg.seed)?
        }
        (_, Some(b)) => b.clone(),
        (s, None) => {
            return Err(Error::Config(format!(
                "strategy {s} needs a trained base checkpoint"
            )))
        }
    };
    let a = Adaptor::new(adaptor.clone(), &base, cfg.seed)?;
    let learner = Learner {
        base,
        adaptor: Some(a),
        train_theta: strategy.updates_theta(),
    };
    let (l, log) = run(learner, train, valid, cfg)?;
    Ok((l.base, l.adaptor.expect("adaptor kept"), log))
}
