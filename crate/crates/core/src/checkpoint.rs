//! Model checkpoints.
//!
//! Layout (little-endian): 8-byte magic, version byte, then `u32`-prefixed
//! strings for the run config (TOML), the relation labels, the tag labels and
//! the word lexicon (one entry per line), then a `u32` parameter count and per
//! parameter a `u32`-prefixed name, `u32` rank, `u64` dims and `f32` values.
//! Loading rebuilds the model from the config and fills parameters by name.

use std::path::Path;

use autograd::ndarray::{ArrayD, IxDyn};
use autograd::ParamStore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::ByteReader;
use crate::ling_graph::{LabelSet, RelationVocab};
use crate::model::FgT2M;
use crate::text::EmbeddingProvider;

pub const MAGIC: &[u8; 8] = b"FGT2MCKP";
pub const VERSION: u8 = 1;

/// Builds a fresh model for `cfg`, registering its parameters in `store`.
pub fn build_model(
    cfg: &RunConfig,
    vocab: &RelationVocab,
    lexicon: &[String],
    store: &mut ParamStore<f32>,
    seed: u64,
) -> Result<FgT2M> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mcfg = cfg.model_config()?;
    match cfg.text.embedding.as_str() {
        "trainable" => FgT2M::new(store, mcfg, vocab, lexicon, &mut rng),
        "hashed" => {
            let emb = EmbeddingProvider::hashed(cfg.model.width, cfg.text.hash_buckets, seed)?;
            FgT2M::with_embeddings(store, mcfg, vocab, emb, &mut rng)
        }
        _ => {
            let path = cfg
                .text
                .embedding_file
                .as_deref()
                .ok_or_else(|| Error::Config("text.embedding=file needs text.embedding_file".into()))?;
            let emb = EmbeddingProvider::from_file(Path::new(path))?;
            FgT2M::with_embeddings(store, mcfg, vocab, emb, &mut rng)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub vocab: RelationVocab,
    pub lexicon: Vec<String>,
    pub params: ParamStore<f32>,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl Checkpoint {
    /// Rebuilds the model structure; its parameters are `self.params`.
    pub fn model(&self) -> Result<FgT2M> {
        let mut scratch = ParamStore::new();
        let model = build_model(&self.config, &self.vocab, &self.lexicon, &mut scratch, self.config.train.seed)?;
        if scratch.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "checkpoint holds {} parameters, model has {}",
                self.params.len(),
                scratch.len()
            )));
        }
        for (a, b) in scratch.iter().zip(self.params.iter()) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(Error::Contract(format!(
                    "parameter {} {:?} does not match checkpoint entry {} {:?}",
                    a.name,
                    a.value.shape(),
                    b.name,
                    b.value.shape()
                )));
            }
        }
        Ok(model)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        put_str(&mut out, &self.config.to_toml());
        put_str(&mut out, &self.vocab.relations.to_text());
        put_str(&mut out, &self.vocab.upos_tags.to_text());
        put_str(&mut out, &self.lexicon.join("\n"));
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in self.params.iter() {
            put_str(&mut out, &p.name);
            out.extend_from_slice(&(p.value.ndim() as u32).to_le_bytes());
            for &d in p.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in p.value.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(8, "magic")? != MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: "bad magic".into(),
            });
        }
        let version = r.take(1, "version")?[0];
        if version != VERSION {
            return Err(Error::Format {
                offset: 8,
                message: format!("unsupported version {version}"),
            });
        }
        let at = |offset: usize| {
            move |e: Error| Error::Format {
                offset: offset as u64,
                message: e.to_string(),
            }
        };
        let pos = r.pos;
        let config = RunConfig::from_toml(&r.string("config")?).map_err(at(pos))?;
        let pos = r.pos;
        let relations = LabelSet::from_text(&r.string("relations")?).map_err(at(pos))?;
        let pos = r.pos;
        let upos = LabelSet::from_text(&r.string("tags")?).map_err(at(pos))?;
        let vocab = RelationVocab::new(relations, upos).map_err(at(pos))?;
        let lexicon: Vec<String> = r
            .string("lexicon")?
            .lines()
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        let count = r.u32("parameter count")? as usize;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name = r.string("parameter name")?;
            let rank = r.u32("rank")? as usize;
            if rank > 8 {
                return Err(r.err(format!("parameter {name} has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64("dimension")? as usize);
            }
            let n = shape
                .iter()
                .try_fold(4usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| r.err(format!("parameter {name} shape overflows")))?;
            let data: Vec<f32> = r
                .take(n, "parameter values")?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(r.err(format!("parameter {name} holds non-finite values")));
            }
            if params.find(&name).is_some() {
                return Err(r.err(format!("duplicate parameter {name}")));
            }
            params.add(name, ArrayD::from_shape_vec(IxDyn(&shape), data).unwrap());
        }
        if r.pos != bytes.len() {
            return Err(r.err("trailing bytes after last parameter"));
        }
        Ok(Self {
            config,
            vocab,
            lexicon,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::atomic_write(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
        Self::decode(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::ToyGrammar;

    fn small() -> RunConfig {
        let o: Vec<(String, String)> = [("model.width", "8"), ("model.heads", "2"), ("lsam.edge_dim", "4")]
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        RunConfig::from_toml_with("", &o).unwrap()
    }

    #[test]
    fn round_trip_rebuilds_the_same_model() {
        let cfg = small();
        let vocab = RelationVocab::universal();
        let lexicon = ToyGrammar::new().lexicon();
        let mut params = ParamStore::new();
        build_model(&cfg, &vocab, &lexicon, &mut params, 4).unwrap();
        let ck = Checkpoint {
            config: cfg,
            vocab,
            lexicon,
            params,
        };
        let back = Checkpoint::decode(&ck.encode()).unwrap();
        assert_eq!(back.config, ck.config);
        assert_eq!(back.lexicon, ck.lexicon);
        assert_eq!(back.vocab, ck.vocab);
        for (a, b) in back.params.iter().zip(ck.params.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
        }
        back.model().unwrap();
    }

    #[test]
    fn corruption_is_reported_with_offset() {
        let cfg = small();
        let vocab = RelationVocab::universal();
        let lexicon = ToyGrammar::new().lexicon();
        let mut params = ParamStore::new();
        build_model(&cfg, &vocab, &lexicon, &mut params, 0).unwrap();
        let bytes = Checkpoint {
            config: cfg,
            vocab,
            lexicon,
            params,
        }
        .encode();
        let err = Checkpoint::decode(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::decode(&bad), Err(Error::Format { offset: 0, .. })));
        let mut long = bytes;
        long.push(0);
        assert!(Checkpoint::decode(&long).is_err());
    }
}
