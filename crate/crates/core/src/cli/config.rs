//! Flat `key=value` run configuration shared by every subcommand.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::adaptation::{AdaptorConfig, ExtractorMode, FilmMode, ParamMode};
use crate::data::{RecallConfig, SyntheticConfig};
use crate::error::{Error, Result};
use crate::ranker::{EncoderKind, RankerConfig};
use crate::training::{TrainConfig, TrainStrategy};

/// A value that can appear on the right of `key=value`.
pub trait ConfigValue: Sized {
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! plain_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> std::result::Result<Self, String> {
                s.parse().map_err(|e| format!("{e}").trim_start_matches("config: ").to_string())
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

plain_value!(
    usize,
    u64,
    f64,
    bool,
    String,
    EncoderKind,
    ExtractorMode,
    FilmMode,
    ParamMode,
    TrainStrategy
);

impl ConfigValue for [f64; 3] {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        let v: Vec<f64> = s
            .split(',')
            .map(|x| x.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format!("{e}"))?;
        v.try_into()
            .map_err(|_| "expected three comma-separated numbers".to_string())
    }

    fn render(&self) -> String {
        format!("{},{},{}", self[0], self[1], self[2])
    }
}

/// Negative-sampling protocol for `prepare`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplerKind {
    Mixer,
    Recall,
}

impl FromStr for SamplerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mixer" => Ok(SamplerKind::Mixer),
            "recall" => Ok(SamplerKind::Recall),
            _ => Err("expected mixer or recall".into()),
        }
    }
}

impl std::fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SamplerKind::Mixer => "mixer",
            SamplerKind::Recall => "recall",
        })
    }
}

plain_value!(SamplerKind);

macro_rules! run_config {
    ($( #[doc = $doc:literal] $field:ident $key:literal : $ty:ty = $default:expr; )*) => {
        #[derive(Clone, Debug, PartialEq)]
        pub struct RunConfig {
            $( #[doc = $doc] pub $field: $ty, )*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                RunConfig { $( $field: $default, )* }
            }
        }

        impl RunConfig {
            /// Every key with its one-line description, in canonical order.
            pub const KEYS: &'static [(&'static str, &'static str)] = &[$( ($key, $doc.trim_ascii()), )*];

            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                let value = value.trim();
                match key {
                    $( $key => {
                        self.$field = <$ty as ConfigValue>::parse_value(value)
                            .map_err(|e| Error::Config(format!("bad value {value:?} for {key}: {e}")))?;
                    } )*
                    _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
                }
                Ok(())
            }

            /// `(key, rendered value)` for every key, in canonical order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$( ($key, self.$field.render()), )*]
            }
        }
    };
}

run_config! {
    /// Run directory; relative artifact paths resolve against it. Not echoed.
    out "out": String = "run".into();
    /// Master seed for data generation, sampling, initialization and training.
    seed "seed": u64 = 0;
    /// Interaction TSV (user, item, timestamp, categories).
    interactions "interactions": String = "interactions.tsv".into();
    /// Prepared training groups.
    train_groups "train_groups": String = "train.tsv".into();
    /// Prepared validation groups.
    valid_groups "valid_groups": String = "valid.tsv".into();
    /// Prepared test groups.
    test_groups "test_groups": String = "test.tsv".into();
    /// Checkpoint written by train-base and read by train-adapt.
    base_checkpoint "base_checkpoint": String = "base.adrk".into();
    /// Checkpoint written by train-adapt; default model for eval and inspect.
    ada_checkpoint "ada_checkpoint": String = "ada.adrk".into();
    /// Synthetic data: number of users.
    num_users "num_users": usize = 2000;
    /// Synthetic data: number of items.
    num_items "num_items": usize = 500;
    /// Synthetic data: number of categories.
    num_categories "num_categories": usize = 10;
    /// Synthetic data: Dirichlet concentration of user category preferences.
    dirichlet_alpha "dirichlet_alpha": f64 = 0.5;
    /// Synthetic data: Zipf exponent of within-category popularity.
    zipf_s "zipf_s": f64 = 1.0;
    /// Synthetic data: shortest user sequence.
    seq_len_min "seq_len_min": usize = 10;
    /// Synthetic data: longest user sequence.
    seq_len_max "seq_len_max": usize = 30;
    /// Synthetic data: probability of staying in the previous category.
    stickiness "stickiness": f64 = 0.5;
    /// Synthetic data: probability that an item has a second category.
    multi_category_prob "multi_category_prob": f64 = 0.2;
    /// Users with fewer interactions are dropped.
    min_len "min_len": usize = 10;
    /// Negative sampler for prepare: mixer or recall.
    sampler "sampler": SamplerKind = SamplerKind::Mixer;
    /// Recall sampler mixing proportions over (pop, mf, item2item).
    recall_d "recall_d": [f64; 3] = [0.2, 0.5, 0.3];
    /// Mixer sampler: also exclude the user's earlier items from negatives.
    exclude_seen "exclude_seen": bool = false;
    /// Embedding size of the recall models.
    recall_dim "recall_dim": usize = 64;
    /// Training epochs of the recall MF model.
    recall_mf_epochs "recall_mf_epochs": usize = 10;
    /// Training epochs of the recall item-to-item model.
    recall_i2i_epochs "recall_i2i_epochs": usize = 5;
    /// Sequential encoder: gru, mf or self_attention.
    encoder "encoder": EncoderKind = EncoderKind::Gru;
    /// Embedding and encoder width.
    d "d": usize = 64;
    /// Predictor hidden width.
    hidden "hidden": usize = 64;
    /// Dropout rate in training.
    dropout "dropout": f64 = 0.4;
    /// Histories are truncated to their most recent items.
    max_seq_len "max_seq_len": usize = 50;
    /// Self-attention encoder layers.
    attn_layers "attn_layers": usize = 2;
    /// Self-attention encoder heads.
    attn_heads "attn_heads": usize = 2;
    /// Distribution extractor: np or avg.
    extractor "extractor": ExtractorMode = ExtractorMode::Np;
    /// Input modulation: film_scalar, film_vector, film_per_item, add_bias or none.
    input_mod "input_mod": FilmMode = FilmMode::Scalar;
    /// Parameter modulation: mem_net, free_para, no_global, add_bias_1, add_bias_2 or none.
    param_mod "param_mod": ParamMode = ParamMode::MemNet;
    /// Slots per parameter pool.
    slots "L": usize = 10;
    /// Adaptor stage strategy: scratch_joint, finetune_joint or finetune_adaptor.
    strategy "strategy": TrainStrategy = TrainStrategy::FinetuneAdaptor;
    /// Adam learning rate.
    lr "lr": f64 = 1e-3;
    /// Groups per optimizer step.
    batch_size "batch_size": usize = 256;
    /// Epoch limit per training stage.
    max_epochs "max_epochs": usize = 20;
    /// Epochs without validation GAUC improvement before stopping.
    patience "patience": usize = 3;
    /// Global gradient-norm clip.
    clip_norm "clip_norm": f64 = 5.0;
    /// Step limit per training stage (0: none).
    max_steps "max_steps": usize = 0;
    /// Groups per scoring batch in evaluation.
    eval_batch_size "eval_batch_size": usize = 512;
    /// Training-distribution recall mixture for dual-distribution evaluation.
    d_same "d_same": [f64; 3] = crate::evaluation::D_SAME;
    /// Shifted recall mixture for dual-distribution evaluation.
    d_new "d_new": [f64; 3] = crate::evaluation::D_NEW;
    /// Print training progress to stderr.
    verbose "verbose": bool = false;
}

impl RunConfig {
    /// Applies `key=value` lines. Blank lines and `#` comments are skipped;
    /// a key may appear once per file.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{origin}:{}: expected key=value", i + 1)))?;
            let k = k.trim();
            if seen.contains(&k) {
                return Err(Error::Config(format!(
                    "{origin}:{}: duplicate key {k:?}",
                    i + 1
                )));
            }
            seen.push(k);
            self.set(k, v)
                .map_err(|e| Error::Config(format!("{origin}:{}: {}", i + 1, strip(&e))))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut c = RunConfig::default();
        c.apply_text(&text, &path.display().to_string())?;
        Ok(c)
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {kv:?} is not key=value")))?;
        self.set(k.trim(), v)
    }

    /// Entries that describe the run's content; the run directory is left out
    /// so identical runs in different places produce identical artifacts.
    pub fn echo_entries(&self) -> Vec<(&'static str, String)> {
        self.entries()
            .into_iter()
            .filter(|(k, _)| *k != "out")
            .collect()
    }

    /// Canonical `key=value` text of the echoed entries.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.echo_entries() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// First 16 hex digits of the SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Header block written as `#` comments at the top of text artifacts.
    pub fn header(&self, command: &str) -> String {
        format!(
            "ada-ranker {command}\nconfig_hash={}\n{}",
            self.hash(),
            self.canonical()
        )
    }

    /// Rendered defaults with their descriptions, loadable as a config file.
    pub fn documented(&self) -> String {
        let mut s = String::new();
        for ((k, v), (_, doc)) in self.entries().into_iter().zip(Self::KEYS) {
            let _ = writeln!(s, "# {doc}\n{k}={v}\n");
        }
        s
    }

    /// Resolves a path-valued key against the run directory.
    pub fn path(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            Path::new(&self.out).join(p)
        }
    }

    pub fn synthetic(&self) -> SyntheticConfig {
        SyntheticConfig {
            num_users: self.num_users,
            num_items: self.num_items,
            num_categories: self.num_categories,
            dirichlet_alpha: self.dirichlet_alpha,
            zipf_s: self.zipf_s,
            seq_len_range: (self.seq_len_min, self.seq_len_max),
            stickiness: self.stickiness,
            multi_category_prob: self.multi_category_prob,
        }
    }

    pub fn recall(&self) -> RecallConfig {
        RecallConfig {
            dim: self.recall_dim,
            mf_epochs: self.recall_mf_epochs,
            i2i_epochs: self.recall_i2i_epochs,
            ..RecallConfig::default()
        }
    }

    pub fn ranker(&self, num_items: usize, num_users: usize) -> RankerConfig {
        RankerConfig {
            encoder: self.encoder,
            num_items,
            num_users,
            dim: self.d,
            hidden: self.hidden,
            dropout: self.dropout,
            max_seq_len: self.max_seq_len,
            attn_layers: self.attn_layers,
            attn_heads: self.attn_heads,
        }
    }

    pub fn adaptor(&self) -> AdaptorConfig {
        AdaptorConfig {
            extractor: self.extractor,
            film: self.input_mod,
            param: self.param_mod,
            slots: self.slots,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            clip_norm: self.clip_norm,
            max_steps: self.max_steps,
            eval_batch_size: self.eval_batch_size,
            seed: self.seed,
            verbose: self.verbose,
        }
    }
}

fn strip(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_round_trips_through_text() {
        let mut c = RunConfig::default();
        c.apply_text(
            "d=16\nL = 4\n# comment\n\nrecall_d=0.1,0.2,0.7\nstrategy=scratch_joint",
            "t",
        )
        .unwrap();
        assert_eq!(
            (c.d, c.slots, c.strategy),
            (16, 4, TrainStrategy::ScratchJoint)
        );
        let mut back = RunConfig::default();
        back.apply_text(&c.documented(), "doc").unwrap();
        assert_eq!(back, c);
        assert_eq!(RunConfig::KEYS.len(), c.entries().len());
    }

    #[test]
    fn unknown_and_malformed_keys_are_config_errors() {
        let mut c = RunConfig::default();
        for bad in [
            "nope=1",
            "d=abc",
            "d",
            "input_mod=film_x",
            "d=1\nd=2",
            "recall_d=1,2",
        ] {
            assert!(c.apply_text(bad, "t").unwrap_err().is_config(), "{bad}");
        }
    }

    #[test]
    fn hash_ignores_run_directory() {
        let a = RunConfig::default();
        let b = RunConfig {
            out: "elsewhere".into(),
            ..RunConfig::default()
        };
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig {
            seed: 1,
            ..RunConfig::default()
        };
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 16);
    }
}
