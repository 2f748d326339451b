use std::collections::HashMap;
use std::path::Path;

use autograd::ndarray::{ArrayD, IxDyn};
use autograd::{ParamId, ParamStore, Real, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::Ctx;

pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingMode {
    TrainableTable,
    Hashed,
    ExternalFile,
}

#[derive(Debug, Clone)]
enum Kind {
    /// Row 0 is the unknown-token row.
    Trainable { index: HashMap<String, usize>, table: ParamId },
    Hashed { buckets: u64, seed: u64 },
    External { index: HashMap<String, usize>, rows: Vec<Vec<f64>> },
}

/// Maps tokens to `L`-wide vectors.
#[derive(Debug, Clone)]
pub struct EmbeddingProvider {
    kind: Kind,
    dim: usize,
    tokens: Vec<String>,
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl EmbeddingProvider {
    /// Learned table over `words` plus an unknown-token row, registered in `store`.
    pub fn trainable<S: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        words: &[String],
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let mut tokens = vec![UNK_TOKEN.to_string()];
        tokens.extend(words.iter().filter(|w| w.as_str() != UNK_TOKEN).cloned());
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let table = store.add(format!("{name}.table"), {
            let data = (0..tokens.len() * dim)
                .map(|_| S::lit(rng.sample::<f64, _>(StandardNormal)))
                .collect();
            ArrayD::from_shape_vec(IxDyn(&[tokens.len(), dim]), data).unwrap()
        });
        Self {
            kind: Kind::Trainable { index, table },
            dim,
            tokens,
        }
    }

    /// Fixed random vectors chosen by hashing the token into `buckets` rows.
    pub fn hashed(dim: usize, buckets: u64, seed: u64) -> Result<Self> {
        if buckets == 0 || dim == 0 {
            return Err(Error::Config("hashed embeddings need buckets > 0 and dim > 0".into()));
        }
        Ok(Self {
            kind: Kind::Hashed { buckets, seed },
            dim,
            tokens: Vec::new(),
        })
    }

    /// Reads a table whose first line is `<count or label> <dim>` and whose
    /// other lines are a token followed by `dim` numbers. A `<unk>` entry,
    /// if present, is used for missing tokens; otherwise they embed to zero.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Syntax {
            line: 1,
            message: "missing header".into(),
        })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let dim = match fields.as_slice() {
            [_, d] => d.parse::<usize>().ok().filter(|&d| d > 0),
            _ => None,
        }
        .ok_or(Error::Syntax {
            line: 1,
            message: format!("expected '<count> <dim>' header, got {header:?}"),
        })?;
        let mut index = HashMap::new();
        let mut rows = Vec::new();
        let mut tokens = Vec::new();
        for (i, line) in lines {
            let mut parts = line.split_whitespace();
            let tok = parts.next().unwrap().to_string();
            let row = parts
                .map(|p| p.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Syntax {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            if row.len() != dim {
                return Err(Error::Syntax {
                    line: i + 1,
                    message: format!("expected {dim} values, got {}", row.len()),
                });
            }
            if index.insert(tok.clone(), rows.len()).is_some() {
                return Err(Error::Syntax {
                    line: i + 1,
                    message: format!("duplicate token {tok:?}"),
                });
            }
            tokens.push(tok);
            rows.push(row);
        }
        Ok(Self {
            kind: Kind::External { index, rows },
            dim,
            tokens,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_text(&text)
    }

    pub fn mode(&self) -> EmbeddingMode {
        match self.kind {
            Kind::Trainable { .. } => EmbeddingMode::TrainableTable,
            Kind::Hashed { .. } => EmbeddingMode::Hashed,
            Kind::External { .. } => EmbeddingMode::ExternalFile,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Known tokens in row order (trainable mode starts with `<unk>`).
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn table_param(&self) -> Option<ParamId> {
        match self.kind {
            Kind::Trainable { table, .. } => Some(table),
            _ => None,
        }
    }

    fn hashed_row(&self, token: &str, buckets: u64, seed: u64) -> Vec<f64> {
        let bucket = fnv1a(token) % buckets;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ bucket.wrapping_mul(0x9E3779B97F4A7C15));
        let scale = 1.0 / (self.dim as f64).sqrt();
        (0..self.dim)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// `[B, N, L]` embeddings; row `(b, k)` is token `k` of caption `b`,
    /// zero past the end of a caption. Captions longer than `n` are cut.
    pub fn embed<'t, S: Real>(&self, ctx: Ctx<'t, '_, S>, captions: &[Vec<&str>], n: usize) -> Var<'t, S> {
        let b = captions.len();
        match &self.kind {
            Kind::Trainable { index, table } => {
                let mut rows = vec![None; b * n];
                for (bi, cap) in captions.iter().enumerate() {
                    for (k, tok) in cap.iter().take(n).enumerate() {
                        rows[bi * n + k] = Some(index.get(*tok).copied().unwrap_or(0));
                    }
                }
                ctx.p(*table).gather_rows(&rows).reshape(&[b, n, self.dim])
            }
            kind => {
                let mut out = ArrayD::<S>::zeros(IxDyn(&[b, n, self.dim]));
                for (bi, cap) in captions.iter().enumerate() {
                    for (k, tok) in cap.iter().take(n).enumerate() {
                        let row = match kind {
                            Kind::Hashed { buckets, seed } => self.hashed_row(tok, *buckets, *seed),
                            Kind::External { index, rows } => index
                                .get(*tok)
                                .or_else(|| index.get(UNK_TOKEN))
                                .map_or_else(|| vec![0.0; self.dim], |&i| rows[i].clone()),
                            Kind::Trainable { .. } => unreachable!(),
                        };
                        for (d, v) in row.into_iter().enumerate() {
                            out[[bi, k, d]] = S::lit(v);
                        }
                    }
                }
                ctx.constant(out)
            }
        }
    }
}
