use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::metrics::{group_auc, group_ndcg};
use super::significance::paired_test;
use crate::adaptation::Adaptor;
use crate::data::{CandidateGroup, GroupView, UserId};
use crate::error::{Error, Result};
use crate::numerics::Real;
use crate::ranker::BaseRanker;

#[derive(Clone, Debug, PartialEq)]
pub struct UserMetrics {
    pub user: UserId,
    pub gauc: f64,
    pub ndcg: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProvenanceMetrics {
    pub tag: String,
    pub groups: usize,
    pub gauc: f64,
    pub ndcg: f64,
}

/// Paired t-test p-values of this report's per-user metrics against another run.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub against: String,
    pub p_gauc: f64,
    pub p_ndcg: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationReport {
    pub model: String,
    pub setting: String,
    pub adaptor: bool,
    pub groups: usize,
    /// Ascending by user id.
    pub per_user: Vec<UserMetrics>,
    pub gauc: f64,
    pub ndcg: f64,
    pub per_provenance: Vec<ProvenanceMetrics>,
    pub comparison: Option<Comparison>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Per-user means of the group metrics, then unweighted means over users.
fn per_user(rows: &[(UserId, f64, f64)]) -> Vec<UserMetrics> {
    let mut by_user: BTreeMap<UserId, Vec<(f64, f64)>> = BTreeMap::new();
    for &(u, a, n) in rows {
        by_user.entry(u).or_default().push((a, n));
    }
    by_user
        .into_iter()
        .map(|(user, v)| UserMetrics {
            user,
            gauc: mean(v.iter().map(|x| x.0)),
            ndcg: mean(v.iter().map(|x| x.1)),
        })
        .collect()
}

/// Scores of `groups` in the same order; candidate 0 of every group is the positive.
pub fn evaluate_scores<T: Real>(
    groups: &[CandidateGroup],
    scores: &[Vec<T>],
) -> Result<EvaluationReport> {
    if groups.is_empty() {
        return Err(Error::Empty("evaluation group set"));
    }
    if groups.len() != scores.len() {
        return Err(Error::shape(
            "evaluate",
            format!("{} groups, {} score lists", groups.len(), scores.len()),
        ));
    }
    let mut rows = Vec::with_capacity(groups.len());
    let mut by_tag: BTreeMap<String, Vec<(UserId, f64, f64)>> = BTreeMap::new();
    for (g, s) in groups.iter().zip(scores) {
        let labels = g.labels();
        let row = (
            g.user,
            group_auc(s, &labels)?,
            group_ndcg(s, &labels, &g.items)?,
        );
        rows.push(row);
        by_tag.entry(g.provenance.tag()).or_default().push(row);
    }
    let users = per_user(&rows);
    let per_provenance = by_tag
        .into_iter()
        .map(|(tag, rows)| {
            let u = per_user(&rows);
            ProvenanceMetrics {
                tag,
                groups: rows.len(),
                gauc: mean(u.iter().map(|m| m.gauc)),
                ndcg: mean(u.iter().map(|m| m.ndcg)),
            }
        })
        .collect();
    Ok(EvaluationReport {
        model: String::new(),
        setting: String::new(),
        adaptor: false,
        groups: groups.len(),
        gauc: mean(users.iter().map(|m| m.gauc)),
        ndcg: mean(users.iter().map(|m| m.ndcg)),
        per_user: users,
        per_provenance,
        comparison: None,
    })
}

/// Eval-mode scores from the base ranker, or through the adaptor when given.
pub fn score_groups(
    base: &BaseRanker<f32>,
    adaptor: Option<&Adaptor<f32>>,
    groups: &[CandidateGroup],
    batch_size: usize,
) -> Result<Vec<Vec<f32>>> {
    let views: Vec<GroupView<'_>> = groups.iter().map(CandidateGroup::view).collect();
    match adaptor {
        None => base.score_groups(&views, batch_size),
        Some(a) => Ok(a
            .score_groups(base, &views, batch_size)?
            .into_iter()
            .map(|s| s.scores)
            .collect()),
    }
}

pub fn evaluate(
    base: &BaseRanker<f32>,
    adaptor: Option<&Adaptor<f32>>,
    groups: &[CandidateGroup],
    batch_size: usize,
) -> Result<EvaluationReport> {
    let scores = score_groups(base, adaptor, groups, batch_size)?;
    let mut r = evaluate_scores(groups, &scores)?;
    r.adaptor = adaptor.is_some_and(|a| !a.config().is_disabled());
    r.model = if r.adaptor {
        "ada".into()
    } else {
        "base".into()
    };
    Ok(r)
}

impl EvaluationReport {
    pub fn labeled(mut self, model: &str, setting: &str) -> Self {
        self.model = model.into();
        self.setting = setting.into();
        self
    }

    /// Attaches paired-test p-values against `other` (same users required).
    pub fn compare_with(&mut self, other: &EvaluationReport) -> Result<()> {
        let users = |r: &EvaluationReport| r.per_user.iter().map(|m| m.user).collect::<Vec<_>>();
        if users(self) != users(other) {
            return Err(Error::InvalidGroup(
                "paired comparison needs the same users on both sides".into(),
            ));
        }
        let col = |r: &EvaluationReport, f: fn(&UserMetrics) -> f64| {
            r.per_user.iter().map(f).collect::<Vec<_>>()
        };
        self.comparison = Some(Comparison {
            against: other.model.clone(),
            p_gauc: paired_test(&col(self, |m| m.gauc), &col(other, |m| m.gauc))?,
            p_ndcg: paired_test(&col(self, |m| m.ndcg), &col(other, |m| m.ndcg))?,
        });
        Ok(())
    }

    /// `metric<TAB>model<TAB>setting<TAB>value` lines (no header).
    pub fn tsv_rows(&self) -> String {
        let mut out = String::new();
        let (m, s) = (&self.model, &self.setting);
        let _ = writeln!(out, "gauc\t{m}\t{s}\t{}", self.gauc);
        let _ = writeln!(out, "ndcg\t{m}\t{s}\t{}", self.ndcg);
        let _ = writeln!(out, "groups\t{m}\t{s}\t{}", self.groups);
        let _ = writeln!(out, "users\t{m}\t{s}\t{}", self.per_user.len());
        for p in &self.per_provenance {
            let _ = writeln!(out, "gauc[{}]\t{m}\t{s}\t{}", p.tag, p.gauc);
            let _ = writeln!(out, "ndcg[{}]\t{m}\t{s}\t{}", p.tag, p.ndcg);
        }
        if let Some(c) = &self.comparison {
            let _ = writeln!(
                out,
                "paired_t_p_gauc[vs {}]\t{m}\t{s}\t{}",
                c.against, c.p_gauc
            );
            let _ = writeln!(
                out,
                "paired_t_p_ndcg[vs {}]\t{m}\t{s}\t{}",
                c.against, c.p_ndcg
            );
        }
        out
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "model {} ({}), adaptor {}, {} groups, {} users",
            self.model,
            if self.setting.is_empty() {
                "-"
            } else {
                &self.setting
            },
            if self.adaptor { "on" } else { "off" },
            self.groups,
            self.per_user.len()
        );
        let _ = writeln!(
            out,
            "  {:<28} {:>8} {:>8} {:>7}",
            "provenance", "GAUC", "NDCG", "groups"
        );
        let _ = writeln!(
            out,
            "  {:<28} {:>8.4} {:>8.4} {:>7}",
            "all", self.gauc, self.ndcg, self.groups
        );
        for p in &self.per_provenance {
            let _ = writeln!(
                out,
                "  {:<28} {:>8.4} {:>8.4} {:>7}",
                p.tag, p.gauc, p.ndcg, p.groups
            );
        }
        if let Some(c) = &self.comparison {
            let _ = writeln!(
                out,
                "  paired t-test vs {}: p(GAUC) = {:.3e}, p(NDCG) = {:.3e}",
                c.against, c.p_gauc, c.p_ndcg
            );
        }
        out
    }
}

/// TSV with a header line for a set of reports.
pub fn reports_tsv(reports: &[&EvaluationReport], header: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(h) = header {
        for l in h.lines() {
            let _ = writeln!(out, "# {l}");
        }
    }
    out.push_str("metric\tmodel\tsetting\tvalue\n");
    for r in reports {
        out.push_str(&r.tsv_rows());
    }
    out
}
