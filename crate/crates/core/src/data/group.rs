use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::log::{ItemId, UserId};
use super::sequences::{Instance, UserSequence};
use crate::error::{Error, Result};

pub const NUM_NEGATIVES: usize = 19;
pub const GROUP_SIZE: usize = NUM_NEGATIVES + 1;

/// How a group's negatives were drawn.
#[derive(Clone, Debug, PartialEq)]
pub enum Provenance {
    /// Distribution-mixer sampling with `categories` involved categories and
    /// popularity-biased (`true`) or uniform within-category draws.
    Mixer { categories: u8, popularity: bool },
    /// Recall-model sampling with mixing proportions over (pop, mf, item2item).
    Recall { d: [f64; 3] },
}

impl Provenance {
    /// Coarse tag used for per-provenance aggregation.
    pub fn tag(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Mixer {
                categories,
                popularity,
            } => {
                write!(
                    f,
                    "mixer:d{categories}:{}",
                    if *popularity { "pop" } else { "uni" }
                )
            }
            Provenance::Recall { d } => write!(f, "recall:{},{},{}", d[0], d[1], d[2]),
        }
    }
}

impl FromStr for Provenance {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if let Some(rest) = s.strip_prefix("mixer:d") {
            let (d, branch) = rest
                .split_once(':')
                .ok_or_else(|| format!("bad mixer tag {s:?}"))?;
            let categories = d.parse().map_err(|_| format!("bad mixer tag {s:?}"))?;
            let popularity = match branch {
                "pop" => true,
                "uni" => false,
                _ => return Err(format!("bad mixer branch {branch:?}")),
            };
            return Ok(Provenance::Mixer {
                categories,
                popularity,
            });
        }
        if let Some(rest) = s.strip_prefix("recall:") {
            let v: Vec<f64> = rest
                .split(',')
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| format!("bad recall tag {s:?}"))?;
            let d: [f64; 3] = v
                .try_into()
                .map_err(|_| format!("recall tag needs 3 values: {s:?}"))?;
            return Ok(Provenance::Recall { d });
        }
        Err(format!("unknown provenance {s:?}"))
    }
}

/// One ranking task: a history plus one positive and nineteen negatives.
/// `items[0]` is the positive.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateGroup {
    pub user: UserId,
    pub history: Vec<ItemId>,
    pub items: Vec<ItemId>,
    pub provenance: Provenance,
}

impl CandidateGroup {
    pub fn new(
        user: UserId,
        history: Vec<ItemId>,
        positive: ItemId,
        negatives: Vec<ItemId>,
        provenance: Provenance,
    ) -> Result<Self> {
        let mut items = Vec::with_capacity(GROUP_SIZE);
        items.push(positive);
        items.extend(negatives);
        let g = CandidateGroup {
            user,
            history,
            items,
            provenance,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.items.len() != GROUP_SIZE {
            return Err(Error::InvalidGroup(format!(
                "{} candidates, expected {GROUP_SIZE}",
                self.items.len()
            )));
        }
        let mut sorted = self.items.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.items.len() {
            return Err(Error::InvalidGroup(format!(
                "duplicate candidates for user {}",
                self.user
            )));
        }
        Ok(())
    }

    pub fn positive(&self) -> ItemId {
        self.items[0]
    }

    pub fn negatives(&self) -> &[ItemId] {
        &self.items[1..]
    }

    pub fn labels(&self) -> Vec<u8> {
        (0..self.items.len()).map(|i| u8::from(i == 0)).collect()
    }

    pub fn view(&self) -> GroupView<'_> {
        GroupView {
            user: self.user,
            history: &self.history,
            items: &self.items,
        }
    }

    fn to_line(&self) -> String {
        let negs: Vec<String> = self.negatives().iter().map(|i| i.to_string()).collect();
        format!(
            "{}\t{}\t{}\t{}",
            self.user,
            self.positive(),
            negs.join(","),
            self.provenance
        )
    }
}

/// Borrowed scoring input: any number of candidates, no labels.
#[derive(Clone, Copy, Debug)]
pub struct GroupView<'a> {
    pub user: UserId,
    pub history: &'a [ItemId],
    pub items: &'a [ItemId],
}

/// A prepared-file line before its history is attached.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupLine {
    pub user: UserId,
    pub positive: ItemId,
    pub negatives: Vec<ItemId>,
    pub provenance: Provenance,
}

/// Which leave-one-out partition a prepared file holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Partition {
    Train,
    Valid,
    Test,
}

pub fn groups_to_tsv(groups: &[CandidateGroup], header: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(h) = header {
        for l in h.lines() {
            out.push_str("# ");
            out.push_str(l);
            out.push('\n');
        }
    }
    for g in groups {
        out.push_str(&g.to_line());
        out.push('\n');
    }
    out
}

pub fn save_groups(path: &Path, groups: &[CandidateGroup], header: Option<&str>) -> Result<()> {
    fs::write(path, groups_to_tsv(groups, header))?;
    Ok(())
}

pub fn parse_group_lines(text: &str, path: &Path) -> Result<Vec<GroupLine>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        if raw.is_empty() || raw.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = raw.split('\t').collect();
        if f.len() != 4 {
            return Err(err(lineno, format!("expected 4 fields, found {}", f.len())));
        }
        let user = f[0]
            .parse()
            .map_err(|_| err(lineno, "bad user id".into()))?;
        let positive = f[1]
            .parse()
            .map_err(|_| err(lineno, "bad positive item".into()))?;
        let negatives: Vec<ItemId> = f[2]
            .split(',')
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| err(lineno, "bad negative list".into()))?;
        if negatives.len() != NUM_NEGATIVES {
            return Err(err(
                lineno,
                format!("{} negatives, expected {NUM_NEGATIVES}", negatives.len()),
            ));
        }
        let provenance = f[3].parse().map_err(|m| err(lineno, m))?;
        out.push(GroupLine {
            user,
            positive,
            negatives,
            provenance,
        });
    }
    Ok(out)
}

/// Rebuilds full groups from prepared lines by re-deriving each line's history
/// from the user sequences. Train lines of a user are in chronological order,
/// so the k-th train line of a user targets position `k + 1`.
pub fn attach_histories(
    lines: Vec<GroupLine>,
    seqs: &[UserSequence],
    partition: Partition,
    max_seq_len: usize,
) -> Result<Vec<CandidateGroup>> {
    let index: HashMap<UserId, usize> = seqs.iter().enumerate().map(|(i, s)| (s.user, i)).collect();
    let mut next_train: HashMap<UserId, usize> = HashMap::new();
    let mut out = Vec::with_capacity(lines.len());
    for line in lines {
        let &seq = index
            .get(&line.user)
            .ok_or_else(|| Error::InvalidGroup(format!("user {} has no sequence", line.user)))?;
        let n = seqs[seq].items.len();
        let target = match partition {
            Partition::Test => n - 1,
            Partition::Valid => n - 2,
            Partition::Train => {
                let k = next_train.entry(line.user).or_insert(0);
                *k += 1;
                *k
            }
        };
        if target >= n || (partition == Partition::Train && target > n - 3) {
            return Err(Error::InvalidGroup(format!(
                "too many train groups for user {}",
                line.user
            )));
        }
        let inst = Instance {
            seq,
            user: line.user,
            target,
        };
        if inst.positive(seqs) != line.positive {
            return Err(Error::InvalidGroup(format!(
                "user {}: positive {} does not match sequence item {} at position {target}",
                line.user,
                line.positive,
                inst.positive(seqs)
            )));
        }
        let history = inst.history(seqs, max_seq_len).to_vec();
        out.push(CandidateGroup::new(
            line.user,
            history,
            line.positive,
            line.negatives,
            line.provenance,
        )?);
    }
    Ok(out)
}

pub fn load_groups(
    path: &Path,
    seqs: &[UserSequence],
    partition: Partition,
    max_seq_len: usize,
) -> Result<Vec<CandidateGroup>> {
    let text = fs::read_to_string(path)?;
    attach_histories(
        parse_group_lines(&text, path)?,
        seqs,
        partition,
        max_seq_len,
    )
}
