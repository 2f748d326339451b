use autograd::ndarray::{Array2, ArrayD, IxDyn};
use log::warn;

use crate::error::{Error, Result};

use super::parse::DependencyParse;
use super::vocab::RelationVocab;

/// Relation-typed, symmetrized dependency graph with self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseGraph {
    adjacency: Array2<bool>,
    relations: Array2<Option<usize>>,
    upos_ids: Vec<usize>,
}

impl ParseGraph {
    pub fn n_nodes(&self) -> usize {
        self.upos_ids.len()
    }

    pub fn adjacency(&self) -> &Array2<bool> {
        &self.adjacency
    }

    /// Relation id of edge `i - j`, if present.
    pub fn relation(&self, i: usize, j: usize) -> Option<usize> {
        self.relations[[i, j]]
    }

    pub fn upos_ids(&self) -> &[usize] {
        &self.upos_ids
    }

    /// Directed entries `(receiver, sender, relation)` in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize, usize)> {
        self.relations
            .indexed_iter()
            .filter_map(|((i, j), r)| r.map(|r| (i, j, r)))
            .collect()
    }

    pub fn num_directed_edges(&self) -> usize {
        self.adjacency.iter().filter(|&&a| a).count()
    }

    /// Relabels nodes so that old node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> ParseGraph {
        let n = self.n_nodes();
        assert_eq!(perm.len(), n);
        let mut adjacency = Array2::from_elem((n, n), false);
        let mut relations = Array2::from_elem((n, n), None);
        let mut upos_ids = vec![0; n];
        for i in 0..n {
            upos_ids[perm[i]] = self.upos_ids[i];
            for j in 0..n {
                adjacency[[perm[i], perm[j]]] = self.adjacency[[i, j]];
                relations[[perm[i], perm[j]]] = self.relations[[i, j]];
            }
        }
        ParseGraph {
            adjacency,
            relations,
            upos_ids,
        }
    }
}

/// Tree edges in both directions carrying the dependent's relation, plus a
/// `SELF` loop on every node.
pub fn build_graph(parse: &DependencyParse, vocab: &RelationVocab) -> ParseGraph {
    let n = parse.len();
    let mut adjacency = Array2::from_elem((n, n), false);
    let mut relations = Array2::from_elem((n, n), None);
    let self_id = vocab.self_id();
    for (i, tok) in parse.tokens().iter().enumerate() {
        adjacency[[i, i]] = true;
        relations[[i, i]] = Some(self_id);
        if let Some(h) = tok.head {
            for (a, b) in [(i, h), (h, i)] {
                adjacency[[a, b]] = true;
                relations[[a, b]] = Some(tok.deprel);
            }
        }
    }
    ParseGraph {
        adjacency,
        relations,
        upos_ids: parse.tokens().iter().map(|t| t.upos).collect(),
    }
}

/// Several graphs padded to a common node count for batched attention.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub batch: usize,
    pub max_nodes: usize,
    /// `[B, 1, N, N]`: receiver `i` may attend to sender `j`.
    pub adjacency: ArrayD<bool>,
    /// Row-major `[B, N, N]` relation ids, `None` where there is no edge.
    pub relation_index: Vec<Option<usize>>,
    /// Row-major `[B, N]` tag ids, `None` on padding.
    pub upos_index: Vec<Option<usize>>,
    /// `[B, N]`.
    pub word_mask: ArrayD<bool>,
    pub lengths: Vec<usize>,
}

impl GraphBatch {
    /// Pads every graph to `max_nodes` (or the largest graph when `None`).
    /// Larger graphs are cut to their first `max_nodes` nodes.
    pub fn new(graphs: &[&ParseGraph], max_nodes: Option<usize>) -> Result<Self> {
        if graphs.is_empty() {
            return Err(Error::Contract("empty graph batch".into()));
        }
        let n = max_nodes.unwrap_or_else(|| graphs.iter().map(|g| g.n_nodes()).max().unwrap());
        if n == 0 {
            return Err(Error::Contract("graph batch with zero nodes".into()));
        }
        let b = graphs.len();
        let mut adjacency = ArrayD::from_elem(IxDyn(&[b, 1, n, n]), false);
        let mut relation_index = vec![None; b * n * n];
        let mut upos_index = vec![None; b * n];
        let mut word_mask = ArrayD::from_elem(IxDyn(&[b, n]), false);
        let mut lengths = Vec::with_capacity(b);
        for (bi, g) in graphs.iter().enumerate() {
            let len = g.n_nodes().min(n);
            if g.n_nodes() > n {
                warn!("graph with {} nodes truncated to {n}", g.n_nodes());
            }
            lengths.push(len);
            for i in 0..len {
                word_mask[[bi, i]] = true;
                upos_index[bi * n + i] = Some(g.upos_ids[i]);
                for j in 0..len {
                    if g.adjacency[[i, j]] {
                        adjacency[[bi, 0, i, j]] = true;
                        relation_index[(bi * n + i) * n + j] = g.relations[[i, j]];
                    }
                }
            }
        }
        Ok(Self {
            batch: b,
            max_nodes: n,
            adjacency,
            relation_index,
            upos_index,
            word_mask,
            lengths,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ling_graph::load_conllu;

    const WALKS: &str = "1\ta\tDET\t3\tdet\n2\tperson\tNOUN\t3\tnsubj\n3\twalks\tVERB\t0\troot\n";

    #[test]
    fn three_token_tree_has_seven_entries() {
        let v = RelationVocab::universal();
        let g = build_graph(&load_conllu(WALKS, &v).unwrap(), &v);
        assert_eq!(g.num_directed_edges(), 7);
        assert_eq!(g.adjacency(), &g.adjacency().t().to_owned());
        for i in 0..3 {
            assert_eq!(g.relation(i, i), Some(v.self_id()));
        }
        assert_eq!(g.relation(0, 2), Some(v.relation_id("det")));
        assert_eq!(g.relation(2, 0), Some(v.relation_id("det")));
        assert_eq!(g.relation(0, 1), None);
    }

    #[test]
    fn single_token_graph() {
        let v = RelationVocab::universal();
        let g = build_graph(&load_conllu("1\tgo\tVERB\t0\troot\n", &v).unwrap(), &v);
        assert_eq!(g.n_nodes(), 1);
        assert!(g.adjacency()[[0, 0]]);
        assert_eq!(g.relation(0, 0), Some(v.self_id()));
    }

    #[test]
    fn reordered_tokens_give_an_isomorphic_graph() {
        let v = RelationVocab::universal();
        let g = build_graph(&load_conllu(WALKS, &v).unwrap(), &v);
        // old order [a, person, walks] -> new order [walks, a, person]
        let text = "1\twalks\tVERB\t0\troot\n2\ta\tDET\t1\tdet\n3\tperson\tNOUN\t1\tnsubj\n";
        let h = build_graph(&load_conllu(text, &v).unwrap(), &v);
        assert_eq!(g.permuted(&[1, 2, 0]), h);
    }

    #[test]
    fn batch_pads_and_truncates() {
        let v = RelationVocab::universal();
        let g = build_graph(&load_conllu(WALKS, &v).unwrap(), &v);
        let b = GraphBatch::new(&[&g, &g], Some(5)).unwrap();
        assert_eq!(b.adjacency.shape(), &[2, 1, 5, 5]);
        assert_eq!(b.lengths, vec![3, 3]);
        assert!(!b.word_mask[[1, 3]]);
        assert!(b.upos_index[4].is_none());
        let t = GraphBatch::new(&[&g], Some(2)).unwrap();
        assert_eq!(t.lengths, vec![2]);
        assert!(t.adjacency[[0, 0, 0, 0]] && !t.adjacency[[0, 0, 0, 1]]);
    }
}
