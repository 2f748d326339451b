use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const SELF_LABEL: &str = "SELF";
pub const UNK_LABEL: &str = "UNK";

/// Universal Dependencies v2 relation labels.
pub const UD_RELATIONS: [&str; 37] = [
    "acl", "advcl", "advmod", "amod", "appos", "aux", "case", "cc", "ccomp", "clf", "compound",
    "conj", "cop", "csubj", "dep", "det", "discourse", "dislocated", "expl", "fixed", "flat",
    "goeswith", "iobj", "list", "mark", "nmod", "nsubj", "nummod", "obj", "obl", "orphan",
    "parataxis", "punct", "reparandum", "root", "vocative", "xcomp",
];

/// Universal part-of-speech tags.
pub const UD_UPOS: [&str; 17] = [
    "ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "INTJ", "NOUN", "NUM", "PART", "PRON", "PROPN",
    "PUNCT", "SCONJ", "SYM", "VERB", "X",
];

/// Ordered label list with a reverse index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelSet {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, l) in labels.iter().enumerate() {
            if index.insert(l.clone(), i).is_some() {
                return Err(Error::Input(format!("duplicate label {l:?}")));
            }
        }
        Ok(Self { labels, index })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// One label per line.
    pub fn to_text(&self) -> String {
        let mut s = self.labels.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect(),
        )
    }
}

/// Relation and part-of-speech label spaces for graph construction.
///
/// Relations always contain `SELF` (self-loops) and `UNK`; tags always
/// contain `UNK`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationVocab {
    pub relations: LabelSet,
    pub upos_tags: LabelSet,
}

impl Default for RelationVocab {
    fn default() -> Self {
        Self::universal()
    }
}

impl RelationVocab {
    pub fn universal() -> Self {
        let mut rel: Vec<String> = UD_RELATIONS.iter().map(|s| s.to_string()).collect();
        rel.push(SELF_LABEL.into());
        rel.push(UNK_LABEL.into());
        let mut upos: Vec<String> = UD_UPOS.iter().map(|s| s.to_string()).collect();
        upos.push(UNK_LABEL.into());
        Self {
            relations: LabelSet::new(rel).unwrap(),
            upos_tags: LabelSet::new(upos).unwrap(),
        }
    }

    pub fn new(relations: LabelSet, upos_tags: LabelSet) -> Result<Self> {
        for (set, needed) in [
            (&relations, &[SELF_LABEL, UNK_LABEL][..]),
            (&upos_tags, &[UNK_LABEL][..]),
        ] {
            for l in needed {
                if set.get(l).is_none() {
                    return Err(Error::Input(format!("vocabulary lacks reserved label {l}")));
                }
            }
        }
        Ok(Self {
            relations,
            upos_tags,
        })
    }

    pub fn self_id(&self) -> usize {
        self.relations.get(SELF_LABEL).unwrap()
    }

    pub fn unk_relation(&self) -> usize {
        self.relations.get(UNK_LABEL).unwrap()
    }

    pub fn unk_upos(&self) -> usize {
        self.upos_tags.get(UNK_LABEL).unwrap()
    }

    /// Exact label, else the base relation of a subtype (`obl:tmod` → `obl`),
    /// else `UNK`.
    pub fn relation_id(&self, label: &str) -> usize {
        self.relations
            .get(label)
            .or_else(|| label.split(':').next().and_then(|b| self.relations.get(b)))
            .unwrap_or_else(|| self.unk_relation())
    }

    pub fn upos_id(&self, tag: &str) -> usize {
        self.upos_tags.get(tag).unwrap_or_else(|| self.unk_upos())
    }

    /// Writes `relations.txt` and `upos.txt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        crate::io::atomic_write(&dir.join("relations.txt"), self.relations.to_text().as_bytes())?;
        crate::io::atomic_write(&dir.join("upos.txt"), self.upos_tags.to_text().as_bytes())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read_to_string(&p).map_err(|e| Error::file(p, e))
        };
        Self::new(
            LabelSet::from_text(&read("relations.txt")?)?,
            LabelSet::from_text(&read("upos.txt")?)?,
        )
    }
}
