//! Caption tokenization, word embeddings and the toy caption grammar.

mod embedding;
mod grammar;

pub use embedding::{EmbeddingMode, EmbeddingProvider};
pub use grammar::{toy_parse, Piece, Primary, Slot, Template, TemplateToken, ToyGrammar};

use autograd::{Real, Var};
use log::warn;

use crate::error::{Error, Result};
use crate::nn::Ctx;

/// Lowercases and splits on whitespace and punctuation.
pub fn tokenize(caption: &str) -> Result<Vec<String>> {
    let tokens: Vec<String> = caption
        .split(|c: char| c.is_whitespace() || (c.is_ascii_punctuation() && c != '\'' && c != '-'))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect();
    if tokens.is_empty() {
        return Err(Error::Input(format!("empty caption {caption:?}")));
    }
    Ok(tokens)
}

/// Embeds one caption as `[N, L]`, keeping at most `max_tokens` tokens.
pub fn tokenize_and_embed<'t, S: Real>(
    ctx: Ctx<'t, '_, S>,
    caption: &str,
    provider: &EmbeddingProvider,
    max_tokens: usize,
) -> Result<(Var<'t, S>, Vec<String>)> {
    let mut tokens = tokenize(caption)?;
    if tokens.len() > max_tokens {
        warn!("caption with {} tokens truncated to {max_tokens}", tokens.len());
        tokens.truncate(max_tokens);
    }
    let refs: Vec<&str> = tokens.iter().map(String::as_str).collect();
    let n = refs.len();
    let emb = provider.embed(ctx, &[refs], n).reshape(&[n, provider.dim()]);
    Ok((emb, tokens))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_lowercases_and_splits() {
        assert_eq!(
            tokenize("A person, walks  Forward.").unwrap(),
            vec!["a", "person", "walks", "forward"]
        );
        assert!(matches!(tokenize("  ,. "), Err(Error::Input(_))));
    }
}
