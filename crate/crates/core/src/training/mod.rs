//! Loss, the two training stages, checkpoints and parameter accounting.

mod checkpoint;
mod count;
mod loss;
mod trainer;

pub use checkpoint::{model_echo, Checkpoint, MAGIC, VERSION};
pub use count::{closed_form_phi, count_params, ParamReport, PoolCount};
pub use loss::{bce_graph, bce_loss, PROB_FLOOR};
pub use trainer::{train_adapter, train_base, LogRow, TrainConfig, TrainLog, TrainStrategy};
