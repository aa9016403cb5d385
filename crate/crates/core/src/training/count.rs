use std::fmt::Write as _;

use super::checkpoint::Checkpoint;
use crate::adaptation::{AdaptorConfig, ExtractorMode, FilmMode, ParamMode};
use crate::error::Result;
use crate::numerics::ParamSet;
use crate::ranker::RankerConfig;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolCount {
    /// Patched predictor tensor (`w1`, `b1`, `w2`, `b2`).
    pub tensor: String,
    pub slots: usize,
    pub slot_size: usize,
    pub heads: usize,
}

impl PoolCount {
    pub fn total(&self) -> usize {
        self.slots * self.slot_size + self.heads
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamReport {
    pub theta: usize,
    pub phi: usize,
    /// `(component, count)` in first-seen order, keyed by the tensor name prefix.
    pub theta_parts: Vec<(String, usize)>,
    pub phi_parts: Vec<(String, usize)>,
    pub pools: Vec<PoolCount>,
    /// |Φ| from the closed-form expression for the configured modes.
    pub closed_form_phi: Option<usize>,
}

fn component(name: &str) -> &str {
    match name.split('.').next().unwrap_or(name) {
        "np" => "np",
        "film" => "film",
        "pool" => "pools",
        "gen" => "generators",
        "bias" => "bias",
        "gru" => "encoder",
        "attn" => "encoder",
        "pred" => "predictor",
        "item_emb" => "item_embedding",
        "user_emb" => "user_embedding",
        other => other,
    }
}

fn parts(params: &ParamSet<f32>) -> Vec<(String, usize)> {
    let mut out: Vec<(String, usize)> = Vec::new();
    for (name, t) in params.iter() {
        let c = component(name);
        match out.iter_mut().find(|(n, _)| n == c) {
            Some(e) => e.1 += t.len(),
            None => out.push((c.to_string(), t.len())),
        }
    }
    out
}

/// |Φ| written out per mode: `L·K·(hd + d)`-type pool terms plus the `d·d`
/// extractor and FiLM terms, without walking any tensor list.
pub fn closed_form_phi(a: &AdaptorConfig, r: &RankerConfig) -> usize {
    if a.is_disabled() {
        return 0;
    }
    let (d, h, l) = (r.dim, r.hidden, a.slots);
    let patched = 2 * d * h + h + h + 1;
    let np = match a.extractor {
        ExtractorMode::Np => 2 * (d * d + d) + 3 * d * d,
        ExtractorMode::Avg => 0,
    };
    let film = match a.film {
        FilmMode::Scalar => 2 * (d * d + d + d + 1),
        FilmMode::Vector => 2 * (2 * d * d + 2 * d),
        FilmMode::PerItem => 2 * (3 * d * d + 2 * d),
        FilmMode::AddBias => 2 * d * d + 2 * d,
        FilmMode::None => 0,
    };
    let param = match a.param {
        ParamMode::MemNet | ParamMode::NoGlobal => l * patched + 4 * l * d,
        ParamMode::FreePara => 4 * (d * d + d) + (d + 1) * patched,
        ParamMode::AddBias1 => d * h,
        ParamMode::AddBias2 => d * h + d,
        ParamMode::None => 0,
    };
    np + film + param
}

pub fn count_params(ck: &Checkpoint) -> Result<ParamReport> {
    let mut pools = Vec::new();
    if let Some(phi) = &ck.phi {
        for (name, t) in phi.iter() {
            if let Some(p) = name
                .strip_prefix("pool.")
                .and_then(|n| n.strip_suffix(".slots"))
            {
                let heads = phi
                    .find(&format!("pool.{p}.heads"))
                    .map_or(0, |id| phi.get(id).len());
                pools.push(PoolCount {
                    tensor: p.to_string(),
                    slots: t.shape()[0],
                    slot_size: t.shape()[1],
                    heads,
                });
            }
        }
    }
    let closed_form_phi = match &ck.phi {
        Some(_) => Some(closed_form_phi(&ck.adaptor_config()?, &ck.ranker_config()?)),
        None => None,
    };
    Ok(ParamReport {
        theta: ck.theta.count(),
        phi: ck.phi.as_ref().map_or(0, ParamSet::count),
        theta_parts: parts(&ck.theta),
        phi_parts: ck.phi.as_ref().map(parts).unwrap_or_default(),
        pools,
        closed_form_phi,
    })
}

impl ParamReport {
    pub fn ratio(&self) -> f64 {
        self.phi as f64 / self.theta as f64
    }

    /// `section\tcomponent\tcount` lines.
    pub fn tsv(&self) -> String {
        let mut s = String::from("section\tcomponent\tcount\n");
        for (c, n) in &self.theta_parts {
            let _ = writeln!(s, "theta\t{c}\t{n}");
        }
        let _ = writeln!(s, "theta\ttotal\t{}", self.theta);
        for (c, n) in &self.phi_parts {
            let _ = writeln!(s, "phi\t{c}\t{n}");
        }
        for p in &self.pools {
            for k in 0..p.slots {
                let _ = writeln!(s, "phi\tpool.{}.slot{k}\t{}", p.tensor, p.slot_size);
            }
            let _ = writeln!(s, "phi\tpool.{}.heads\t{}", p.tensor, p.heads);
        }
        let _ = writeln!(s, "phi\ttotal\t{}", self.phi);
        if let Some(c) = self.closed_form_phi {
            let _ = writeln!(s, "phi\tclosed_form\t{c}");
        }
        s
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "|Theta| = {}", self.theta);
        for (c, n) in &self.theta_parts {
            let _ = writeln!(s, "  {c:<16} {n:>12}");
        }
        let _ = writeln!(s, "|Phi|   = {}", self.phi);
        for (c, n) in &self.phi_parts {
            let _ = writeln!(s, "  {c:<16} {n:>12}");
        }
        for p in &self.pools {
            let _ = writeln!(
                s,
                "  pool {:<3} {} slots x {} + heads {} = {}",
                p.tensor,
                p.slots,
                p.slot_size,
                p.heads,
                p.total()
            );
        }
        if let Some(c) = self.closed_form_phi {
            let _ = writeln!(s, "closed form |Phi| = {c}");
        }
        if self.theta > 0 {
            let _ = writeln!(s, "|Phi|/|Theta| = {:.4}", self.ratio());
        }
        s
    }
}
