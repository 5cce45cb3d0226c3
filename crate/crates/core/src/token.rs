//! Tokenization and token sequences.

use serde::{Deserialize, Serialize};

/// An ordered sequence of lowercase tokens.
///
/// Every token is non-empty and contains no whitespace. [`tokenize`] is the
/// canonical constructor; deserialization re-validates the invariant.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct TokenSequence(Vec<String>);

impl TokenSequence {
    /// Builds a sequence from pre-split tokens, rejecting empty or
    /// whitespace-containing entries.
    pub fn from_tokens<I, S>(tokens: I) -> crate::Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        for t in &tokens {
            if t.is_empty() {
                return Err(crate::Error::InvalidArgument("empty token".into()));
            }
            if t.chars().any(char::is_whitespace) {
                return Err(crate::Error::InvalidArgument(format!(
                    "token {t:?} contains whitespace"
                )));
            }
        }
        Ok(Self(tokens))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, String> {
        self.0.iter()
    }

    /// Tokens joined by single spaces; the canonical phrase form.
    pub fn joined(&self) -> String {
        self.0.join(" ")
    }
}

impl TryFrom<Vec<String>> for TokenSequence {
    type Error = crate::Error;

    fn try_from(tokens: Vec<String>) -> crate::Result<Self> {
        Self::from_tokens(tokens)
    }
}

impl From<TokenSequence> for Vec<String> {
    fn from(seq: TokenSequence) -> Self {
        seq.0
    }
}

impl std::fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.joined())
    }
}

/// Lowercases `text` and splits it on every maximal run of non-alphanumeric
/// characters. Digits are ordinary token characters, so "b12" and "10" both
/// survive as single tokens. Empty input gives an empty sequence.
pub fn tokenize(text: &str) -> TokenSequence {
    TokenSequence(
        split_alphanumeric(text)
            .map(|(tok, _, _)| tok)
            .collect(),
    )
}

/// Like [`tokenize`] but keeps the `[start, end)` character offsets of each
/// token in the source text. Used by the entity extractor to map token-level
/// matches back to character spans.
pub(crate) fn tokenize_with_offsets(text: &str) -> Vec<(String, usize, usize)> {
    split_alphanumeric(text).collect()
}

fn split_alphanumeric(text: &str) -> impl Iterator<Item = (String, usize, usize)> + '_ {
    let mut chars = text.chars().enumerate().peekable();
    std::iter::from_fn(move || {
        // Skip separators.
        while let Some((_, c)) = chars.peek() {
            if c.is_alphanumeric() {
                break;
            }
            chars.next();
        }
        let (start, first) = chars.next()?;
        let mut token = String::new();
        token.extend(first.to_lowercase());
        let mut end = start + 1;
        while let Some(&(i, c)) = chars.peek() {
            if !c.is_alphanumeric() {
                break;
            }
            token.extend(c.to_lowercase());
            end = i + 1;
            chars.next();
        }
        Some((token, start, end))
    })
}
