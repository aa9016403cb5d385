use crate::data::GroupView;
use crate::error::{Error, Result};

/// Index arrays for scoring a batch of groups in one graph.
///
/// Histories are left-padded to the longest one in the batch and laid out
/// time-major (row `t * size + b`), so step `t` of every group is a contiguous
/// block. Padded rows point at item 0 and are masked out.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub steps: usize,
    /// Candidates per group.
    pub group_size: usize,
    pub seq_ids: Vec<usize>,
    pub seq_mask: Vec<bool>,
    /// Position of each row within its own history, oldest item at 0.
    pub positions: Vec<usize>,
    pub lengths: Vec<usize>,
    pub users: Vec<usize>,
    /// Candidates in the caller's order, group-major.
    pub cand_ids: Vec<usize>,
    /// Candidates sorted by id within each group; pooling over this order makes
    /// the group summary independent of the caller's order, bit for bit.
    pub pool_ids: Vec<usize>,
}

impl Batch {
    /// Keeps at most the last `max_seq_len` history items of each group.
    pub fn new(groups: &[GroupView<'_>], max_seq_len: usize) -> Result<Batch> {
        let first = groups.first().ok_or(Error::Empty("batch"))?;
        let m = first.items.len();
        if m == 0 {
            return Err(Error::Empty("candidate set"));
        }
        if let Some(g) = groups.iter().find(|g| g.items.len() != m) {
            return Err(Error::InvalidGroup(format!(
                "user {}: {} candidates in a batch of {m}-candidate groups",
                g.user,
                g.items.len()
            )));
        }
        let size = groups.len();
        let hist: Vec<&[u32]> = groups
            .iter()
            .map(|g| &g.history[g.history.len().saturating_sub(max_seq_len)..])
            .collect();
        let steps = hist.iter().map(|h| h.len()).max().unwrap_or(0);
        let mut seq_ids = vec![0; steps * size];
        let mut seq_mask = vec![false; steps * size];
        let mut positions = vec![0; steps * size];
        for (b, h) in hist.iter().enumerate() {
            let pad = steps - h.len();
            for (p, &item) in h.iter().enumerate() {
                let row = (pad + p) * size + b;
                seq_ids[row] = item as usize;
                seq_mask[row] = true;
                positions[row] = p;
            }
        }
        let mut cand_ids = Vec::with_capacity(size * m);
        let mut pool_ids = Vec::with_capacity(size * m);
        for g in groups {
            cand_ids.extend(g.items.iter().map(|&i| i as usize));
            let mut sorted: Vec<usize> = g.items.iter().map(|&i| i as usize).collect();
            sorted.sort_unstable();
            pool_ids.extend(sorted);
        }
        Ok(Batch {
            size,
            steps,
            group_size: m,
            seq_ids,
            seq_mask,
            positions,
            lengths: hist.iter().map(|h| h.len()).collect(),
            users: groups.iter().map(|g| g.user as usize).collect(),
            cand_ids,
            pool_ids,
        })
    }

    /// Row index list that repeats group `b` `times` times, group-major.
    pub fn repeat_groups(&self, times: usize) -> Vec<usize> {
        (0..self.size)
            .flat_map(|b| std::iter::repeat_n(b, times))
            .collect()
    }

    /// Row index list mapping every time-major sequence row to its group.
    pub fn seq_rows_to_group(&self) -> Vec<usize> {
        (0..self.steps).flat_map(|_| 0..self.size).collect()
    }

    pub fn step_mask(&self, t: usize) -> &[bool] {
        &self.seq_mask[t * self.size..(t + 1) * self.size]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn left_padding_time_major() {
        let h1 = [7u32, 8, 9];
        let h2 = [4u32];
        let items = [1u32, 2];
        let groups = [
            GroupView {
                user: 0,
                history: &h1,
                items: &items,
            },
            GroupView {
                user: 5,
                history: &h2,
                items: &[2, 1],
            },
        ];
        let b = Batch::new(&groups, 10).unwrap();
        assert_eq!(b.steps, 3);
        assert_eq!(b.seq_ids, vec![7, 0, 8, 0, 9, 4]);
        assert_eq!(b.seq_mask, vec![true, false, true, false, true, true]);
        assert_eq!(b.positions, vec![0, 0, 1, 0, 2, 0]);
        assert_eq!(b.pool_ids, vec![1, 2, 1, 2]);
        assert_eq!(b.cand_ids, vec![1, 2, 2, 1]);
        assert_eq!(b.repeat_groups(2), vec![0, 0, 1, 1]);
    }

    #[test]
    fn truncates_to_most_recent() {
        let h = [1u32, 2, 3, 4];
        let groups = [GroupView {
            user: 0,
            history: &h,
            items: &[9],
        }];
        let b = Batch::new(&groups, 2).unwrap();
        assert_eq!(b.seq_ids, vec![3, 4]);
    }

    #[test]
    fn mixed_group_sizes_rejected() {
        let groups = [
            GroupView {
                user: 0,
                history: &[1],
                items: &[1, 2],
            },
            GroupView {
                user: 1,
                history: &[1],
                items: &[1],
            },
        ];
        assert!(Batch::new(&groups, 5).is_err());
        assert!(Batch::new(&[], 5).is_err());
    }
}
