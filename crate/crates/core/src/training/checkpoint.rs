//! `ADRK` checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "ADRK" | u32 version
//! section*: [u8; 4] tag | u64 body length | body | u32 CRC-32 of body
//! ```
//!
//! Sections in order: `CONF` (key=value lines), `THTA` (base tensors) and an
//! optional `PHI_` (adaptor tensors). A tensor section body is a u32 tensor
//! count followed by, per tensor: u32 name length, UTF-8 name, u32 rank, u64
//! extents, then f32 values in row-major order.

use std::fs;
use std::path::Path;

use crate::adaptation::{Adaptor, AdaptorConfig};
use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Tensor};
use crate::ranker::{BaseRanker, RankerConfig};

pub const MAGIC: &[u8; 4] = b"ADRK";
pub const VERSION: u32 = 1;
const CONF: &[u8; 4] = b"CONF";
const THETA: &[u8; 4] = b"THTA";
const PHI: &[u8; 4] = b"PHI_";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Effective configuration, in order. Contains at least the model keys.
    pub echo: Vec<(String, String)>,
    pub theta: ParamSet<f32>,
    pub phi: Option<ParamSet<f32>>,
}

/// Keys that define the model architecture.
pub fn model_echo(r: &RankerConfig, a: Option<&AdaptorConfig>) -> Vec<(String, String)> {
    let mut v: Vec<(String, String)> = vec![
        ("encoder".into(), r.encoder.to_string()),
        ("num_items".into(), r.num_items.to_string()),
        ("num_users".into(), r.num_users.to_string()),
        ("dim".into(), r.dim.to_string()),
        ("hidden".into(), r.hidden.to_string()),
        ("dropout".into(), r.dropout.to_string()),
        ("max_seq_len".into(), r.max_seq_len.to_string()),
        ("attn_layers".into(), r.attn_layers.to_string()),
        ("attn_heads".into(), r.attn_heads.to_string()),
    ];
    if let Some(a) = a {
        v.push(("extractor".into(), a.extractor.to_string()));
        v.push(("input_mod".into(), a.film.to_string()));
        v.push(("param_mod".into(), a.param.to_string()));
        v.push(("slots".into(), a.slots.to_string()));
    }
    v
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn encode_tensors(params: &ParamSet<f32>) -> Vec<u8> {
    let mut b = Vec::new();
    put_u32(&mut b, params.len() as u32);
    for (name, t) in params.iter() {
        put_u32(&mut b, name.len() as u32);
        b.extend_from_slice(name.as_bytes());
        put_u32(&mut b, t.shape().len() as u32);
        for &e in t.shape() {
            b.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for &v in t.data() {
            b.extend_from_slice(&v.to_le_bytes());
        }
    }
    b
}

fn encode_echo(echo: &[(String, String)]) -> Vec<u8> {
    echo.iter()
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect::<String>()
        .into_bytes()
}

fn put_section(out: &mut Vec<u8>, tag: &[u8; 4], body: &[u8]) {
    out.extend_from_slice(tag);
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(body);
    put_u32(out, crc32fast::hash(body));
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn decode_tensors(body: &[u8]) -> Result<ParamSet<f32>> {
    let mut r = Reader { buf: body, pos: 0 };
    let n = r.u32()?;
    let mut params = ParamSet::new();
    for _ in 0..n {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        if params.find(name).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
        }
        let rank = r.u32()? as usize;
        let shape: Vec<usize> = (0..rank)
            .map(|_| r.u64().map(|e| e as usize))
            .collect::<Result<_>>()?;
        let count = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e));
        let count =
            count.ok_or_else(|| Error::Checkpoint(format!("tensor {name} is too large")))?;
        let bytes = r.take(
            count
                .checked_mul(4)
                .ok_or_else(|| Error::Checkpoint("tensor too large".into()))?,
        )?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        params.add(name.to_string(), Tensor::new(shape, data)?);
    }
    if !r.done() {
        return Err(Error::Checkpoint("trailing bytes in tensor section".into()));
    }
    Ok(params)
}

impl Checkpoint {
    /// Snapshot of a model. `extra` keys are appended to the model keys unless
    /// already present.
    pub fn from_model(
        base: &BaseRanker<f32>,
        adaptor: Option<&Adaptor<f32>>,
        extra: &[(String, String)],
    ) -> Self {
        let mut echo = model_echo(base.config(), adaptor.map(Adaptor::config));
        for (k, v) in extra {
            if !echo.iter().any(|(e, _)| e == k) {
                echo.push((k.clone(), v.clone()));
            }
        }
        Checkpoint {
            echo,
            theta: base.params().clone(),
            phi: adaptor.map(|a| a.params().clone()),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.echo
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn parse<V: std::str::FromStr>(&self, key: &str) -> Result<V> {
        let raw = self
            .get(key)
            .ok_or_else(|| Error::Checkpoint(format!("config echo lacks {key}")))?;
        raw.parse()
            .map_err(|_| Error::Checkpoint(format!("bad value {raw:?} for {key}")))
    }

    pub fn ranker_config(&self) -> Result<RankerConfig> {
        Ok(RankerConfig {
            encoder: self.get("encoder").unwrap_or("gru").parse()?,
            num_items: self.parse("num_items")?,
            num_users: self.parse("num_users")?,
            dim: self.parse("dim")?,
            hidden: self.parse("hidden")?,
            dropout: self.parse("dropout")?,
            max_seq_len: self.parse("max_seq_len")?,
            attn_layers: self.parse("attn_layers")?,
            attn_heads: self.parse("attn_heads")?,
        })
    }

    pub fn adaptor_config(&self) -> Result<AdaptorConfig> {
        Ok(AdaptorConfig {
            extractor: self.parse::<String>("extractor")?.parse()?,
            film: self.parse::<String>("input_mod")?.parse()?,
            param: self.parse::<String>("param_mod")?.parse()?,
            slots: self.parse("slots")?,
        })
    }

    /// Rebuilds the ranker and, when the file has a Φ section, the adaptor.
    pub fn model(&self) -> Result<(BaseRanker<f32>, Option<Adaptor<f32>>)> {
        let rc = self.ranker_config()?;
        let base = BaseRanker::from_params(rc.clone(), self.theta.clone())?;
        let adaptor = match &self.phi {
            Some(phi) => Some(Adaptor::from_params(
                self.adaptor_config()?,
                rc,
                phi.clone(),
            )?),
            None => None,
        };
        Ok((base, adaptor))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_section(&mut out, CONF, &encode_echo(&self.echo));
        put_section(&mut out, THETA, &encode_tensors(&self.theta));
        if let Some(phi) = &self.phi {
            put_section(&mut out, PHI, &encode_tensors(phi));
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4).ok() != Some(MAGIC.as_slice()) {
            return Err(Error::Checkpoint("not an ADRK file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version}"
            )));
        }
        let mut sections: Vec<([u8; 4], &[u8])> = Vec::new();
        while !r.done() {
            let tag: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
            let len = usize::try_from(r.u64()?)
                .map_err(|_| Error::Checkpoint("section too large".into()))?;
            let body = r.take(len)?;
            let crc = r.u32()?;
            if crc != crc32fast::hash(body) {
                return Err(Error::Checkpoint(format!(
                    "checksum mismatch in section {}",
                    String::from_utf8_lossy(&tag)
                )));
            }
            sections.push((tag, body));
        }
        let tags: Vec<[u8; 4]> = sections.iter().map(|s| s.0).collect();
        let expected_theta_only = [*CONF, *THETA];
        let expected_full = [*CONF, *THETA, *PHI];
        if tags != expected_theta_only && tags != expected_full {
            return Err(Error::Checkpoint(
                "expected sections CONF, THTA and optionally PHI_".into(),
            ));
        }
        let conf = std::str::from_utf8(sections[0].1)
            .map_err(|_| Error::Checkpoint("config is not UTF-8".into()))?;
        let mut echo = Vec::new();
        for line in conf.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("bad config line {line:?}")))?;
            echo.push((k.to_string(), v.to_string()));
        }
        let theta = decode_tensors(sections[1].1)?;
        let phi = sections.get(2).map(|s| decode_tensors(s.1)).transpose()?;
        Ok(Checkpoint { echo, theta, phi })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// CRC-32 of the Θ section body as written to disk.
    pub fn theta_checksum(&self) -> u32 {
        crc32fast::hash(&encode_tensors(&self.theta))
    }

    pub fn phi_checksum(&self) -> Option<u32> {
        self.phi
            .as_ref()
            .map(|p| crc32fast::hash(&encode_tensors(p)))
    }
}
