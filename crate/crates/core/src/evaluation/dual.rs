use std::fmt::Write as _;

use super::report::{evaluate, EvaluationReport};
use crate::adaptation::Adaptor;
use crate::data::{build_groups, Instance, Partition, RecallIndex, Sampler, UserSequence};
use crate::error::Result;
use crate::ranker::BaseRanker;

/// Mixing proportions (pop, MF, item-to-item) used for training-distribution test groups.
pub const D_SAME: [f64; 3] = [0.2, 0.5, 0.3];
/// Shifted proportions for the new-distribution test groups.
pub const D_NEW: [f64; 3] = [0.4, 0.1, 0.5];

/// Base and adapted models evaluated on test groups that share their
/// positives but draw negatives with two different recall mixtures.
#[derive(Clone, Debug)]
pub struct DualReport {
    pub d_same: [f64; 3],
    pub d_new: [f64; 3],
    /// base/same, ada/same, base/new, ada/new
    pub reports: [EvaluationReport; 4],
}

pub struct DualInputs<'a> {
    pub base: &'a BaseRanker<f32>,
    /// The adapted model: its own Θ plus Φ.
    pub ada: (&'a BaseRanker<f32>, &'a Adaptor<f32>),
    pub index: &'a RecallIndex,
    pub seqs: &'a [UserSequence],
    pub test: &'a [Instance],
    pub seed: u64,
    pub max_seq_len: usize,
    pub batch_size: usize,
}

pub fn dual_distribution_eval(
    inp: &DualInputs<'_>,
    d_same: [f64; 3],
    d_new: [f64; 3],
) -> Result<DualReport> {
    let mut reports = Vec::with_capacity(4);
    for (setting, d) in [("same_dis", d_same), ("new_dis", d_new)] {
        let sampler = Sampler::Recall {
            index: inp.index,
            d,
        };
        let groups = build_groups(
            inp.test,
            inp.seqs,
            sampler,
            Partition::Test,
            inp.seed,
            inp.max_seq_len,
        )?;
        let base = evaluate(inp.base, None, &groups, inp.batch_size)?.labeled("base", setting);
        let mut ada =
            evaluate(inp.ada.0, Some(inp.ada.1), &groups, inp.batch_size)?.labeled("ada", setting);
        ada.compare_with(&base)?;
        reports.push(base);
        reports.push(ada);
    }
    let reports: [EvaluationReport; 4] = reports.try_into().expect("four reports");
    Ok(DualReport {
        d_same,
        d_new,
        reports,
    })
}

impl DualReport {
    fn pair(&self, new: bool) -> (&EvaluationReport, &EvaluationReport) {
        let o = if new { 2 } else { 0 };
        (&self.reports[o], &self.reports[o + 1])
    }

    /// Relative NDCG improvement of the adapted model over the base model.
    pub fn ndcg_lift(&self, new: bool) -> f64 {
        let (b, a) = self.pair(new);
        (a.ndcg - b.ndcg) / b.ndcg
    }

    pub fn gauc_lift(&self, new: bool) -> f64 {
        let (b, a) = self.pair(new);
        (a.gauc - b.gauc) / b.gauc
    }

    /// The eight aggregate cells plus relative improvements, as
    /// `metric<TAB>model<TAB>setting<TAB>value` rows.
    pub fn tsv_rows(&self) -> String {
        let mut out = String::new();
        for r in &self.reports {
            let _ = writeln!(out, "gauc\t{}\t{}\t{}", r.model, r.setting, r.gauc);
            let _ = writeln!(out, "ndcg\t{}\t{}\t{}", r.model, r.setting, r.ndcg);
        }
        for (new, setting) in [(false, "same_dis"), (true, "new_dis")] {
            let _ = writeln!(
                out,
                "gauc_rel_improvement\tada_vs_base\t{setting}\t{}",
                self.gauc_lift(new)
            );
            let _ = writeln!(
                out,
                "ndcg_rel_improvement\tada_vs_base\t{setting}\t{}",
                self.ndcg_lift(new)
            );
        }
        for r in self.reports.iter().filter(|r| r.comparison.is_some()) {
            let c = r.comparison.as_ref().expect("filtered");
            let _ = writeln!(
                out,
                "paired_t_p_ndcg[vs base]\tada\t{}\t{}",
                r.setting, c.p_ndcg
            );
        }
        out
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "same_dis d = {:?}, new_dis d = {:?}",
            self.d_same, self.d_new
        );
        let _ = writeln!(
            out,
            "  {:<10} {:<6} {:>8} {:>8}",
            "setting", "model", "GAUC", "NDCG"
        );
        for r in &self.reports {
            let _ = writeln!(
                out,
                "  {:<10} {:<6} {:>8.4} {:>8.4}",
                r.setting, r.model, r.gauc, r.ndcg
            );
        }
        for (new, setting) in [(false, "same_dis"), (true, "new_dis")] {
            let _ = writeln!(
                out,
                "  {setting}: ada over base GAUC {:+.2}%, NDCG {:+.2}%",
                100.0 * self.gauc_lift(new),
                100.0 * self.ndcg_lift(new)
            );
        }
        out
    }
}
