use std::collections::BTreeMap;

use super::log::{InteractionLog, ItemId, UserId};

/// One user's items in chronological order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UserSequence {
    pub user: UserId,
    pub items: Vec<ItemId>,
}

/// Groups records by user (ascending id), sorts each user's records by
/// timestamp with a stable sort, and drops users with fewer than `min_len`
/// records.
pub fn build_sequences(log: &InteractionLog, min_len: usize) -> Vec<UserSequence> {
    let mut by_user: BTreeMap<UserId, Vec<(i64, ItemId)>> = BTreeMap::new();
    for r in &log.records {
        by_user
            .entry(r.user)
            .or_default()
            .push((r.timestamp, r.item));
    }
    by_user
        .into_iter()
        .filter(|(_, recs)| recs.len() >= min_len)
        .map(|(user, mut recs)| {
            recs.sort_by_key(|&(t, _)| t);
            UserSequence {
                user,
                items: recs.into_iter().map(|(_, i)| i).collect(),
            }
        })
        .collect()
}

/// A prediction target: item at `target` (0-based) of sequence `seq`, with
/// everything before it as history.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Instance {
    pub seq: usize,
    pub user: UserId,
    pub target: usize,
}

impl Instance {
    pub fn positive(&self, seqs: &[UserSequence]) -> ItemId {
        seqs[self.seq].items[self.target]
    }

    /// The most recent `max_len` items before the target.
    pub fn history<'a>(&self, seqs: &'a [UserSequence], max_len: usize) -> &'a [ItemId] {
        let items = &seqs[self.seq].items[..self.target];
        &items[items.len().saturating_sub(max_len)..]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<Instance>,
    pub valid: Vec<Instance>,
    pub test: Vec<Instance>,
}

/// Leave-one-out: the last item of each sequence is the test target, the one
/// before it the validation target, and every earlier item from the second
/// onwards is a training target.
pub fn leave_one_out_split(seqs: &[UserSequence]) -> Split {
    let mut split = Split::default();
    for (s, seq) in seqs.iter().enumerate() {
        let n = seq.items.len();
        if n < 3 {
            continue;
        }
        for target in 1..n - 2 {
            split.train.push(Instance {
                seq: s,
                user: seq.user,
                target,
            });
        }
        split.valid.push(Instance {
            seq: s,
            user: seq.user,
            target: n - 2,
        });
        split.test.push(Instance {
            seq: s,
            user: seq.user,
            target: n - 1,
        });
    }
    split
}

/// Items each user interacted with in the training portion (all but the last two).
pub fn training_prefix(seq: &UserSequence) -> &[ItemId] {
    &seq.items[..seq.items.len().saturating_sub(2)]
}
