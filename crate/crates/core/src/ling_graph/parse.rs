use crate::error::{Error, Result};

use super::vocab::RelationVocab;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub form: String,
    pub upos: usize,
    /// Governing token (0-based), `None` for the root.
    pub head: Option<usize>,
    pub deprel: usize,
}

/// A validated single-root dependency tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencyParse {
    tokens: Vec<Token>,
}

impl DependencyParse {
    pub fn new(tokens: Vec<Token>) -> Result<Self> {
        validate_tree(&tokens)?;
        Ok(Self { tokens })
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn forms(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.form.as_str()).collect()
    }

    pub fn root(&self) -> usize {
        self.tokens.iter().position(|t| t.head.is_none()).unwrap()
    }

    /// Longest root-to-leaf path length in edges.
    pub fn depth(&self) -> usize {
        (0..self.tokens.len())
            .map(|mut i| {
                let mut d = 0;
                while let Some(h) = self.tokens[i].head {
                    i = h;
                    d += 1;
                }
                d
            })
            .max()
            .unwrap_or(0)
    }

    /// Renders the five-column subset (ID, FORM, UPOS, HEAD, DEPREL).
    pub fn to_conllu(&self, vocab: &RelationVocab) -> String {
        let mut out = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                i + 1,
                t.form,
                vocab.upos_tags.label(t.upos),
                t.head.map_or(0, |h| h + 1),
                vocab.relations.label(t.deprel),
            ));
        }
        out.push('\n');
        out
    }
}

fn validate_tree(tokens: &[Token]) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::MalformedParse("no tokens".into()));
    }
    let roots = tokens.iter().filter(|t| t.head.is_none()).count();
    if roots != 1 {
        return Err(Error::MalformedParse(format!("expected exactly one root, found {roots}")));
    }
    for (i, t) in tokens.iter().enumerate() {
        if let Some(h) = t.head {
            if h >= tokens.len() {
                return Err(Error::MalformedParse(format!(
                    "token {} points at head {} beyond {} tokens",
                    i + 1,
                    h + 1,
                    tokens.len()
                )));
            }
        }
    }
    // With a single root and in-range heads, every chain must reach the
    // root within n steps, otherwise it loops.
    for start in 0..tokens.len() {
        let mut cur = start;
        let mut steps = 0;
        while let Some(h) = tokens[cur].head {
            cur = h;
            steps += 1;
            if steps > tokens.len() {
                return Err(Error::MalformedParse(format!(
                    "head links from token {} form a cycle",
                    start + 1
                )));
            }
        }
    }
    Ok(())
}

/// Reads the first sentence of a CoNLL-U-subset block.
///
/// Columns are tab separated: `ID FORM UPOS HEAD DEPREL`. Ten-column CoNLL-U
/// rows are accepted too (UPOS, HEAD and DEPREL then sit in columns 4, 7, 8).
/// Comment lines, multiword ranges (`1-2`) and empty nodes (`1.1`) are
/// skipped. Reading stops at the first blank line after a token row.
pub fn load_conllu(text: &str, vocab: &RelationVocab) -> Result<DependencyParse> {
    let mut tokens = Vec::new();
    let mut raw_heads = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            if tokens.is_empty() {
                continue;
            }
            break;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let (id, form, upos, head, deprel) = match cols.len() {
            5 => (cols[0], cols[1], cols[2], cols[3], cols[4]),
            n if n >= 10 => (cols[0], cols[1], cols[3], cols[6], cols[7]),
            n => {
                return Err(Error::Syntax {
                    line: line_no,
                    message: format!("expected 5 tab-separated columns, found {n}"),
                })
            }
        };
        if id.contains('-') || id.contains('.') {
            continue;
        }
        let id: usize = id.parse().map_err(|_| Error::Syntax {
            line: line_no,
            message: format!("bad ID {id:?}"),
        })?;
        if id != tokens.len() + 1 {
            return Err(Error::Syntax {
                line: line_no,
                message: format!("ID {id} out of sequence, expected {}", tokens.len() + 1),
            });
        }
        let head: usize = head.parse().map_err(|_| Error::Syntax {
            line: line_no,
            message: format!("bad HEAD {head:?}"),
        })?;
        raw_heads.push(head);
        tokens.push(Token {
            form: form.to_string(),
            upos: vocab.upos_id(upos),
            head: head.checked_sub(1),
            deprel: vocab.relation_id(deprel),
        });
    }
    DependencyParse::new(tokens)
}
