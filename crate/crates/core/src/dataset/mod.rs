//! Procedurally generated caption/motion pairs whose motion channels encode
//! the caption's attributes.

mod file;
mod motion;
mod spec;

pub use file::{decode_records, encode_records, read_dataset, write_dataset, MAGIC, VERSION};
pub use motion::{
    channel, count_peaks, envelope, envelope_peaks, synth_motion, synth_motion_with_jitter, CHANNELS, JITTER,
    MIN_FRAMES,
};
pub(crate) use spec::COUNT_WORDS;
pub use spec::{sample_spec, Action, Connective, Direction, Side, ToyMotionSpec};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffusion::MotionSequence;
use crate::error::Result;
use crate::ling_graph::{DependencyParse, RelationVocab};
use crate::text::ToyGrammar;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub caption: String,
    pub parse: DependencyParse,
    pub motion: MotionSequence,
    pub spec: ToyMotionSpec,
}

/// Record `index` of the corpus for `seed`; each record has its own stream,
/// so any subset can be regenerated independently.
pub fn generate_record(
    seed: u64,
    index: u64,
    frames: usize,
    grammar: &ToyGrammar,
    vocab: &RelationVocab,
) -> Result<DatasetRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let (spec, caption) = sample_spec(&mut rng, grammar);
    let parse = grammar.parse(&caption, vocab)?;
    let motion = synth_motion(&spec, frames, &mut rng)?;
    Ok(DatasetRecord {
        caption,
        parse,
        motion,
        spec,
    })
}

pub fn generate_dataset(
    count: usize,
    frames: usize,
    seed: u64,
    grammar: &ToyGrammar,
    vocab: &RelationVocab,
) -> Result<Vec<DatasetRecord>> {
    (0..count as u64)
        .map(|i| generate_record(seed, i, frames, grammar, vocab))
        .collect()
}
