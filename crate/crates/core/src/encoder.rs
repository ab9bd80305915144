//! Text to fixed-width vectors, either by signed feature hashing or by
//! averaging rows of a plain-text embedding table.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Clone, Debug, PartialEq)]
pub enum EncoderMode {
    Hashed,
    EmbeddingFile(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub mode: EncoderMode,
    pub dim: usize,
    pub hash_seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            mode: EncoderMode::Hashed,
            dim: 64,
            hash_seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if matches!(self.mode, EncoderMode::Hashed) && self.dim < 8 {
            return Err(Error::Config(format!("encoder dim must be >= 8, got {}", self.dim)));
        }
        Ok(())
    }
}

pub type EmbeddingTable = HashMap<String, Vec<f64>>;

/// A ready-to-use encoder; file-backed tables are loaded once here.
#[derive(Clone, Debug)]
pub struct Encoder {
    cfg: EncoderConfig,
    table: Option<EmbeddingTable>,
    dim: usize,
}

impl Encoder {
    pub fn new(cfg: EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        match &cfg.mode {
            EncoderMode::Hashed => Ok(Encoder {
                dim: cfg.dim,
                table: None,
                cfg,
            }),
            EncoderMode::EmbeddingFile(path) => {
                let (table, dim) = load_embedding_file(path)?;
                Ok(Encoder {
                    dim,
                    table: Some(table),
                    cfg,
                })
            }
        }
    }

    /// Width of every vector this encoder returns. For an empty embedding
    /// file this is 0 and [`Encoder::encode`] fails.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn encode(&self, text: &str) -> Result<Vec<f64>> {
        match &self.table {
            None => Ok(encode_hashed(text, self.dim, self.cfg.hash_seed)),
            Some(table) => {
                if table.is_empty() {
                    return Err(Error::Empty("embedding table has no entries".into()));
                }
                let mut out = vec![0.0; self.dim];
                let mut n = 0usize;
                for tok in tokenize(text) {
                    n += 1;
                    if let Some(v) = table.get(&tok) {
                        for (o, x) in out.iter_mut().zip(v) {
                            *o += x;
                        }
                    }
                }
                if n > 0 {
                    out.iter_mut().for_each(|o| *o /= n as f64);
                }
                Ok(out)
            }
        }
    }
}

/// Maximal ASCII-alphanumeric runs, lowercased. Non-ASCII characters act as
/// separators so the result does not depend on Unicode tables.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|ch: char| !ch.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_ascii_lowercase())
}

pub fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET ^ seed.wrapping_mul(FNV_PRIME);
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Signed feature hashing: bucket from the low bits, sign from the top bit.
pub fn encode_hashed(text: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for tok in tokenize(text) {
        let h = fnv1a(seed, tok.as_bytes());
        let bucket = (h % dim as u64) as usize;
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        v[bucket] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Parses `token f1 f2 ...` lines. Blank lines are skipped. Returns the
/// table and its common vector length (0 when empty).
pub fn load_embedding_file(path: &Path) -> Result<(EmbeddingTable, usize)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut table = HashMap::new();
    let mut dim = None;
    for (i, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(tok) = parts.next() else { continue };
        let vals: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>().map_err(|e| Error::Format {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: format!("bad number {p:?}: {e}"),
                })
            })
            .collect::<Result<_>>()?;
        match dim {
            None => dim = Some(vals.len()),
            Some(d) if d != vals.len() => {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: format!("vector has {} values, expected {d}", vals.len()),
                })
            }
            _ => {}
        }
        table.insert(tok.to_ascii_lowercase(), vals);
    }
    Ok((table, dim.unwrap_or(0)))
}
