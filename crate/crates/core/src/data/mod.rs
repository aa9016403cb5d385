//! Interaction logs, user sequences, leave-one-out splitting and candidate
//! group construction.

mod build;
mod catalog;
mod group;
mod log;
mod mixer;
mod recall;
mod sequences;
mod synthetic;

pub use build::{build_groups, Sampler};
pub use catalog::Catalog;
pub use group::{
    attach_histories, groups_to_tsv, load_groups, parse_group_lines, save_groups, CandidateGroup,
    GroupLine, GroupView, Partition, Provenance, GROUP_SIZE, NUM_NEGATIVES,
};
pub use log::{
    load_interactions, parse_interactions, CategoryId, Interaction, InteractionLog, ItemId, UserId,
};
pub use mixer::{mixer_sample_negatives, split_budget, MixerDraw};
pub use recall::{
    build_recall_index, recall_sample_negatives, scaled_windows, RecallConfig, RecallIndex,
    I2I_WINDOW, MF_WINDOW, POP_WINDOW, RECENT_ITEMS,
};
pub use sequences::{
    build_sequences, leave_one_out_split, training_prefix, Instance, Split, UserSequence,
};
pub use synthetic::{generate_synthetic, synthetic_catalog, SyntheticCatalog, SyntheticConfig};
