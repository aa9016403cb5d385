use super::catalog::Catalog;
use super::group::{CandidateGroup, Partition, Provenance};
use super::log::ItemId;
use super::mixer::mixer_sample_negatives;
use super::recall::{recall_sample_negatives, RecallIndex};
use super::sequences::{Instance, UserSequence};
use crate::error::Result;
use crate::numerics::{Purpose, Rng};

/// Negative-sampling protocol used to turn instances into candidate groups.
#[derive(Clone, Copy, Debug)]
pub enum Sampler<'a> {
    Mixer {
        catalog: &'a Catalog,
        /// Also keep items from the user's history out of the negatives.
        exclude_seen: bool,
    },
    Recall {
        index: &'a RecallIndex,
        d: [f64; 3],
    },
}

impl Partition {
    fn key(self) -> u64 {
        match self {
            Partition::Train => 0,
            Partition::Valid => 1,
            Partition::Test => 2,
        }
    }
}

/// One group per instance. Each group draws from its own stream keyed by
/// partition, user and target position (and the mixing proportions for the
/// recall sampler), so a group does not depend on which others are built.
pub fn build_groups(
    instances: &[Instance],
    seqs: &[UserSequence],
    sampler: Sampler<'_>,
    partition: Partition,
    seed: u64,
    max_seq_len: usize,
) -> Result<Vec<CandidateGroup>> {
    let mut out = Vec::with_capacity(instances.len());
    for inst in instances {
        let positive = inst.positive(seqs);
        let history = inst.history(seqs, max_seq_len).to_vec();
        let mut key = vec![partition.key(), u64::from(inst.user), inst.target as u64];
        let (negatives, provenance) = match sampler {
            Sampler::Mixer {
                catalog,
                exclude_seen,
            } => {
                let mut rng = Rng::stream(seed, Purpose::MixerSampling, &key);
                let seen: &[ItemId] = if exclude_seen {
                    &seqs[inst.seq].items[..inst.target]
                } else {
                    &[]
                };
                let (negs, draw) = mixer_sample_negatives(&mut rng, positive, catalog, seen)?;
                (
                    negs,
                    Provenance::Mixer {
                        categories: draw.d as u8,
                        popularity: draw.popularity,
                    },
                )
            }
            Sampler::Recall { index, d } => {
                key.extend(d.iter().map(|p| p.to_bits()));
                let mut rng = Rng::stream(seed, Purpose::RecallSampling, &key);
                let full_history = &seqs[inst.seq].items[..inst.target];
                let (negs, _) =
                    recall_sample_negatives(&mut rng, inst.user, full_history, positive, index, d)?;
                (negs, Provenance::Recall { d })
            }
        };
        out.push(CandidateGroup::new(
            inst.user, history, positive, negatives, provenance,
        )?);
    }
    Ok(out)
}
