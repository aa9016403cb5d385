use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ranker::RankerConfig;

macro_rules! named_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $s:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self {
                    $($name::$variant => $s),+
                })
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($name::$variant),)+
                    _ => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($name), " {:?}; expected one of: {}"),
                        s,
                        [$($s),+].join(", ")
                    ))),
                }
            }
        }
    };
}

named_enum! {
    /// How the group summary `z` is obtained from the candidate embeddings.
    ExtractorMode {
        Np => "np",
        Avg => "avg",
    }
}

named_enum! {
    /// Conditioning of the history embeddings on `z`.
    FilmMode {
        Scalar => "film_scalar",
        Vector => "film_vector",
        PerItem => "film_per_item",
        AddBias => "add_bias",
        None => "none",
    }
}

named_enum! {
    /// How `z` modulates the predictor parameters.
    ParamMode {
        MemNet => "mem_net",
        FreePara => "free_para",
        NoGlobal => "no_global",
        AddBias1 => "add_bias_1",
        AddBias2 => "add_bias_2",
        None => "none",
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptorConfig {
    pub extractor: ExtractorMode,
    pub film: FilmMode,
    pub param: ParamMode,
    /// Slots per parameter pool.
    pub slots: usize,
}

impl Default for AdaptorConfig {
    fn default() -> Self {
        AdaptorConfig {
            extractor: ExtractorMode::Np,
            film: FilmMode::Scalar,
            param: ParamMode::MemNet,
            slots: 10,
        }
    }
}

impl AdaptorConfig {
    /// Everything off: scoring reduces to the base ranker.
    pub fn disabled() -> Self {
        AdaptorConfig {
            film: FilmMode::None,
            param: ParamMode::None,
            ..Default::default()
        }
    }

    pub fn is_disabled(&self) -> bool {
        self.film == FilmMode::None && self.param == ParamMode::None
    }

    pub fn has_pools(&self) -> bool {
        matches!(self.param, ParamMode::MemNet | ParamMode::NoGlobal)
    }

    pub fn validate(&self) -> Result<()> {
        if self.has_pools() && self.slots == 0 {
            return Err(Error::Config(
                "parameter pools need at least one slot".into(),
            ));
        }
        Ok(())
    }
}

/// The four predictor tensors an adaptor can patch.
pub const PATCHED: [&str; 4] = ["w1", "b1", "w2", "b2"];

/// Flattened sizes of the patched tensors, in [`PATCHED`] order.
pub fn patched_sizes(r: &RankerConfig) -> [usize; 4] {
    [2 * r.dim * r.hidden, r.hidden, r.hidden, 1]
}

/// Names and shapes of the adaptor parameters, in storage order.
pub fn phi_layout(a: &AdaptorConfig, r: &RankerConfig) -> Vec<(String, Vec<usize>)> {
    let d = r.dim;
    let mut v: Vec<(String, Vec<usize>)> = Vec::new();
    let mlp = |v: &mut Vec<(String, Vec<usize>)>, prefix: &str, input: usize, output: usize| {
        v.push((format!("{prefix}.l1"), vec![input, d]));
        v.push((format!("{prefix}.l1_b"), vec![d]));
        v.push((format!("{prefix}.l2"), vec![d, output]));
        v.push((format!("{prefix}.l2_b"), vec![output]));
    };
    if !a.is_disabled() && a.extractor == ExtractorMode::Np {
        mlp(&mut v, "np.mlp", d, d);
        for w in ["w_s", "w_mu", "w_sigma"] {
            v.push((format!("np.{w}"), vec![d, d]));
        }
    }
    match a.film {
        FilmMode::Scalar => {
            mlp(&mut v, "film.scale", d, 1);
            mlp(&mut v, "film.shift", d, 1);
        }
        FilmMode::Vector => {
            mlp(&mut v, "film.scale", d, d);
            mlp(&mut v, "film.shift", d, d);
        }
        FilmMode::PerItem => {
            mlp(&mut v, "film.scale", 2 * d, d);
            mlp(&mut v, "film.shift", 2 * d, d);
        }
        FilmMode::AddBias => mlp(&mut v, "film.shift", d, d),
        FilmMode::None => {}
    }
    let sizes = patched_sizes(r);
    match a.param {
        ParamMode::MemNet | ParamMode::NoGlobal => {
            for (p, &n) in PATCHED.iter().zip(&sizes) {
                v.push((format!("pool.{p}.slots"), vec![a.slots, n]));
                v.push((format!("pool.{p}.heads"), vec![d, a.slots]));
            }
        }
        ParamMode::FreePara => {
            for (p, &n) in PATCHED.iter().zip(&sizes) {
                mlp(&mut v, &format!("gen.{p}"), d, n);
            }
        }
        ParamMode::AddBias1 => v.push(("bias.p1".into(), vec![d, r.hidden])),
        ParamMode::AddBias2 => {
            v.push(("bias.p1".into(), vec![d, r.hidden]));
            v.push(("bias.p2".into(), vec![d, 1]));
        }
        ParamMode::None => {}
    }
    v
}
