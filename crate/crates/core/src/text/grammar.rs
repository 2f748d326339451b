//! The controlled caption grammar of the toy corpus. Every template carries a
//! fixed dependency skeleton, so parsing a generated caption is a lookup.

use crate::dataset::{Action, Connective, Direction, Side, ToyMotionSpec, COUNT_WORDS};
use crate::error::{Error, Result};
use crate::ling_graph::{DependencyParse, RelationVocab, Token};

use super::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    /// "walks" or "jumps".
    Stride,
    Direction,
    Side,
    Count,
    SecondThirdPerson,
    SecondGerund,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Piece {
    Word(&'static str),
    Slot(Slot),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateToken {
    pub piece: Piece,
    pub upos: &'static str,
    /// 0-based index of the governing token, `None` for the root.
    pub head: Option<usize>,
    pub deprel: &'static str,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primary {
    /// "walks forward", "jumps backward"
    Directed,
    /// "walks", "jumps"
    Bare,
    /// "waves the left hand"
    Wave,
    /// "turns right"
    Turn,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub primary: Primary,
    pub counted: bool,
    pub connective: Connective,
    pub tokens: Vec<TemplateToken>,
}

impl Template {
    fn build(primary: Primary, counted: bool, connective: Connective) -> Self {
        let t = |piece, upos, head, deprel| TemplateToken {
            piece,
            upos,
            head,
            deprel,
        };
        use Piece::{Slot as S, Word as W};
        let verb = 2;
        let mut tokens = vec![
            t(W("a"), "DET", Some(1), "det"),
            t(W("person"), "NOUN", Some(verb), "nsubj"),
        ];
        match primary {
            Primary::Directed => {
                tokens.push(t(S(Slot::Stride), "VERB", None, "root"));
                tokens.push(t(S(Slot::Direction), "ADV", Some(verb), "advmod"));
            }
            Primary::Bare => tokens.push(t(S(Slot::Stride), "VERB", None, "root")),
            Primary::Wave => {
                tokens.push(t(W("waves"), "VERB", None, "root"));
                tokens.push(t(W("the"), "DET", Some(5), "det"));
                tokens.push(t(S(Slot::Side), "ADJ", Some(5), "amod"));
                tokens.push(t(W("hand"), "NOUN", Some(verb), "obj"));
            }
            Primary::Turn => {
                tokens.push(t(W("turns"), "VERB", None, "root"));
                tokens.push(t(S(Slot::Side), "ADV", Some(verb), "advmod"));
            }
        }
        if counted {
            let n = tokens.len();
            tokens.push(t(S(Slot::Count), "NUM", Some(n + 1), "nummod"));
            tokens.push(t(W("times"), "NOUN", Some(verb), "obl"));
        }
        let n = tokens.len();
        match connective {
            Connective::None => {}
            Connective::Then => {
                tokens.push(t(W("then"), "ADV", Some(n + 1), "advmod"));
                tokens.push(t(S(Slot::SecondThirdPerson), "VERB", Some(verb), "conj"));
            }
            Connective::While => {
                tokens.push(t(W("while"), "SCONJ", Some(n + 1), "mark"));
                tokens.push(t(S(Slot::SecondGerund), "VERB", Some(verb), "advcl"));
            }
        }
        Self {
            primary,
            counted,
            connective,
            tokens,
        }
    }

    /// Candidate fillers for a slot.
    pub fn fillers(slot: Slot) -> Vec<&'static str> {
        match slot {
            Slot::Stride => vec!["walks", "jumps"],
            Slot::Direction => vec!["forward", "backward"],
            Slot::Side => vec!["left", "right"],
            Slot::Count => COUNT_WORDS.to_vec(),
            Slot::SecondThirdPerson => Action::ALL.iter().map(|a| a.third_person()).collect(),
            Slot::SecondGerund => Action::ALL.iter().map(|a| a.gerund()).collect(),
        }
    }

    fn matches(&self, words: &[String]) -> bool {
        words.len() == self.tokens.len()
            && self.tokens.iter().zip(words).all(|(tt, w)| match tt.piece {
                Piece::Word(x) => x == w,
                Piece::Slot(s) => Self::fillers(s).contains(&w.as_str()),
            })
    }
}

/// All caption templates: four kinds of main clause, with or without a
/// repetition phrase, followed by nothing, a "then" clause or a "while"
/// clause.
#[derive(Debug, Clone)]
pub struct ToyGrammar {
    templates: Vec<Template>,
}

impl Default for ToyGrammar {
    fn default() -> Self {
        Self::new()
    }
}

impl ToyGrammar {
    pub fn new() -> Self {
        let mut templates = Vec::new();
        for primary in [Primary::Directed, Primary::Bare, Primary::Wave, Primary::Turn] {
            for counted in [false, true] {
                for c in [Connective::None, Connective::Then, Connective::While] {
                    templates.push(Template::build(primary, counted, c));
                }
            }
        }
        Self { templates }
    }

    pub fn templates(&self) -> &[Template] {
        &self.templates
    }

    /// Every word any template can produce, sorted.
    pub fn lexicon(&self) -> Vec<String> {
        let mut words: Vec<String> = self
            .templates
            .iter()
            .flat_map(|t| t.tokens.iter())
            .flat_map(|tt| match tt.piece {
                Piece::Word(w) => vec![w],
                Piece::Slot(s) => Template::fillers(s),
            })
            .map(str::to_string)
            .collect();
        words.sort();
        words.dedup();
        words
    }

    fn template_for(&self, spec: &ToyMotionSpec) -> &Template {
        let primary = match (spec.action, spec.direction) {
            (Action::Wave, _) => Primary::Wave,
            (Action::Turn, _) => Primary::Turn,
            (_, Direction::None) => Primary::Bare,
            _ => Primary::Directed,
        };
        self.templates
            .iter()
            .find(|t| t.primary == primary && t.counted == (spec.count > 1) && t.connective == spec.connective)
            .expect("grammar covers every valid spec")
    }

    pub fn render(&self, spec: &ToyMotionSpec) -> Result<String> {
        spec.validate()?;
        let tpl = self.template_for(spec);
        let words: Vec<&str> = tpl
            .tokens
            .iter()
            .map(|tt| match tt.piece {
                Piece::Word(w) => w,
                Piece::Slot(Slot::Stride) => spec.action.third_person(),
                Piece::Slot(Slot::Direction) => spec.direction.word().unwrap(),
                Piece::Slot(Slot::Side) => spec.side.word().unwrap(),
                Piece::Slot(Slot::Count) => COUNT_WORDS[spec.count as usize - 2],
                Piece::Slot(Slot::SecondThirdPerson) => spec.second_action.unwrap().third_person(),
                Piece::Slot(Slot::SecondGerund) => spec.second_action.unwrap().gerund(),
            })
            .collect();
        Ok(words.join(" "))
    }

    fn find(&self, caption: &str) -> Result<(&Template, Vec<String>)> {
        let words = tokenize(caption).map_err(|_| Error::UnparseableCaption(caption.to_string()))?;
        let tpl = self
            .templates
            .iter()
            .find(|t| t.matches(&words))
            .ok_or_else(|| Error::UnparseableCaption(caption.to_string()))?;
        Ok((tpl, words))
    }

    /// The template's dependency skeleton filled with the caption's words.
    pub fn parse(&self, caption: &str, vocab: &RelationVocab) -> Result<DependencyParse> {
        let (tpl, words) = self.find(caption)?;
        let tokens = tpl
            .tokens
            .iter()
            .zip(words)
            .map(|(tt, form)| Token {
                form,
                upos: vocab.upos_id(tt.upos),
                head: tt.head,
                deprel: vocab.relation_id(tt.deprel),
            })
            .collect();
        DependencyParse::new(tokens)
    }

    /// Reads the attributes back out of a generated caption.
    pub fn spec_of(&self, caption: &str) -> Result<ToyMotionSpec> {
        let (tpl, words) = self.find(caption)?;
        let action = match tpl.primary {
            Primary::Wave => Action::Wave,
            Primary::Turn => Action::Turn,
            _ => Action::from_word(&words[2]).unwrap(),
        };
        let mut spec = ToyMotionSpec {
            action,
            direction: Direction::None,
            side: Side::None,
            count: 1,
            connective: tpl.connective,
            second_action: None,
        };
        for (tt, w) in tpl.tokens.iter().zip(&words) {
            match tt.piece {
                Piece::Slot(Slot::Direction) => {
                    spec.direction = if w == "forward" { Direction::Forward } else { Direction::Backward }
                }
                Piece::Slot(Slot::Side) => spec.side = if w == "left" { Side::Left } else { Side::Right },
                Piece::Slot(Slot::Count) => {
                    spec.count = COUNT_WORDS.iter().position(|c| c == w).unwrap() as u8 + 2
                }
                Piece::Slot(Slot::SecondThirdPerson | Slot::SecondGerund) => {
                    spec.second_action = Action::from_word(w)
                }
                _ => {}
            }
        }
        spec.validate()
            .map_err(|_| Error::UnparseableCaption(caption.to_string()))?;
        Ok(spec)
    }
}

/// Parses a caption generated by `grammar`.
pub fn toy_parse(caption: &str, grammar: &ToyGrammar, vocab: &RelationVocab) -> Result<DependencyParse> {
    grammar.parse(caption, vocab)
}
