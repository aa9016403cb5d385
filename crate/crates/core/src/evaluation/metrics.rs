use crate::data::ItemId;
use crate::error::{Error, Result};
use crate::numerics::Real;

fn positive_index<T: Real>(scores: &[T], labels: &[u8]) -> Result<usize> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidGroup(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("score {bad}")));
    }
    let mut pos = labels.iter().enumerate().filter(|(_, &l)| l == 1);
    match (pos.next(), pos.next()) {
        (Some((i, _)), None) if labels.iter().all(|&l| l <= 1) => Ok(i),
        _ => Err(Error::InvalidGroup(
            "exactly one positive label required".into(),
        )),
    }
}

/// Share of negatives scored strictly below the positive, ties counting half.
pub fn group_auc<T: Real>(scores: &[T], labels: &[u8]) -> Result<f64> {
    let p = positive_index(scores, labels)?;
    let n = scores.len() - 1;
    if n == 0 {
        return Err(Error::InvalidGroup("group has no negatives".into()));
    }
    let s = scores[p];
    let (mut below, mut ties) = (0usize, 0usize);
    for (i, &v) in scores.iter().enumerate() {
        if i != p {
            if v < s {
                below += 1;
            } else if v == s {
                ties += 1;
            }
        }
    }
    Ok((below as f64 + 0.5 * ties as f64) / n as f64)
}

/// 1-based rank of the positive: descending score, ties broken by ascending item id.
pub fn positive_rank<T: Real>(scores: &[T], labels: &[u8], items: &[ItemId]) -> Result<usize> {
    let p = positive_index(scores, labels)?;
    if items.len() != scores.len() {
        return Err(Error::InvalidGroup(format!(
            "{} items for {} scores",
            items.len(),
            scores.len()
        )));
    }
    let (s, id) = (scores[p], items[p]);
    Ok(1 + scores
        .iter()
        .zip(items)
        .enumerate()
        .filter(|&(i, (&v, &it))| i != p && (v > s || (v == s && it < id)))
        .count())
}

/// `1 / log2(r + 1)` for the positive's rank `r` over the full list.
pub fn group_ndcg<T: Real>(scores: &[T], labels: &[u8], items: &[ItemId]) -> Result<f64> {
    let r = positive_rank(scores, labels, items)?;
    Ok(1.0 / ((r + 1) as f64).log2())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize) -> Vec<u8> {
        (0..n).map(|i| u8::from(i == 0)).collect()
    }

    #[test]
    fn auc_cases() {
        let mut s = vec![0.0f64; 20];
        s[0] = 1.0;
        assert_eq!(group_auc(&s, &labels(20)).unwrap(), 1.0);
        assert_eq!(group_auc(&[0.3f64; 20], &labels(20)).unwrap(), 0.5);
        let mut s: Vec<f64> = (0..20).map(|i| i as f64).collect();
        s[0] = 9.5; // beats 1..=9, loses to 10..=19
        assert!((group_auc(&s, &labels(20)).unwrap() - 9.0 / 19.0).abs() < 1e-15);
    }

    #[test]
    fn ndcg_closed_forms() {
        let items: Vec<u32> = (0..20).collect();
        let mut s = vec![0.0f64; 20];
        s[0] = 1.0;
        assert_eq!(group_ndcg(&s, &labels(20), &items).unwrap(), 1.0);
        s[5] = 2.0;
        assert!(
            (group_ndcg(&s, &labels(20), &items).unwrap() - 0.630_929_753_571_457_4).abs() < 1e-12
        );
        s[0] = -1.0;
        assert!((group_ndcg(&s, &labels(20), &items).unwrap() - 1.0 / 21f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn ties_break_by_item_id() {
        // positive is item 5, tied with item 3 (ranked ahead) and item 9 (behind)
        let scores = [0.5f32, 0.5, 0.5];
        let l = [1u8, 0, 0];
        assert_eq!(positive_rank(&scores, &l, &[5, 3, 9]).unwrap(), 2);
    }

    #[test]
    fn label_validation() {
        assert!(group_auc(&[0.1f64, 0.2], &[0, 0]).is_err());
        assert!(group_auc(&[0.1f64, 0.2], &[1, 1]).is_err());
        assert!(group_auc(&[f64::NAN, 0.2], &[1, 0]).is_err());
    }
}
