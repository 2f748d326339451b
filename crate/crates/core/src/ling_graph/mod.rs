//! Dependency parses, the graphs built from them, and the attention stack
//! that turns word embeddings into per-layer text features.

mod gat;
mod graph;
mod parse;
mod vocab;

pub use gat::{
    repeated_sentence_features, GatConfig, GatLayerParams, GatStack, HierarchicalTextFeatures,
};
pub use graph::{build_graph, GraphBatch, ParseGraph};
pub use parse::{load_conllu, DependencyParse, Token};
pub use vocab::{LabelSet, RelationVocab, SELF_LABEL, UD_RELATIONS, UD_UPOS, UNK_LABEL};
