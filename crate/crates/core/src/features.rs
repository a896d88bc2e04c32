//! Code-aware lexing and hashed n-gram featurization.
//!
//! Source text becomes a token stream (literals collapsed to `NUM`, `STR`,
//! `CHAR`; comments dropped; identifiers followed by their subword pieces),
//! then a sparse vector of hashed 1..n-gram counts with log damping and L2
//! normalization.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh64::xxh64;

use crate::error::{Error, Result};
use crate::learn::SparseVector;

pub const NUM: &str = "NUM";
pub const STR: &str = "STR";
pub const CHAR: &str = "CHAR";

pub const ENCODER_NAME: &str = "hashed-ngram";
pub const DEFAULT_DIM: usize = 1 << 18;
pub const DEFAULT_N_MAX: usize = 2;
pub const DEFAULT_HASH_SEED: u64 = 0x5EED_C0DE;

/// Joins the tokens of an n-gram before hashing. Not a valid token byte.
const GRAM_SEPARATOR: u8 = 0x1F;

const OPERATORS: [&str; 24] = [
    "<<=", ">>=", "...", "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "+=",
    "-=", "*=", "/=", "%=", "&=", "|=", "^=", "::", "##",
];

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TokenStream {
    pub tokens: Vec<String>,
}

impl TokenStream {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn as_strs(&self) -> Vec<&str> {
        self.tokens.iter().map(String::as_str).collect()
    }
}

fn is_ident_start(b: u8) -> bool {
    b.is_ascii_alphabetic() || b == b'_'
}

fn is_ident_continue(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

/// Splits an identifier on underscores, lower-to-upper case changes and
/// acronym boundaries (`HTTPServer` -> `http`, `server`). Pieces are
/// lowercased.
pub fn subwords(ident: &str) -> Vec<String> {
    let mut pieces = Vec::new();
    for part in ident.split('_').filter(|p| !p.is_empty()) {
        let chars: Vec<char> = part.chars().collect();
        let mut start = 0;
        for i in 1..chars.len() {
            let (prev, cur) = (chars[i - 1], chars[i]);
            let next_lower = chars.get(i + 1).is_some_and(|c| c.is_ascii_lowercase());
            let boundary = (prev.is_ascii_lowercase() && cur.is_ascii_uppercase())
                || (prev.is_ascii_uppercase() && cur.is_ascii_uppercase() && next_lower)
                || (prev.is_ascii_digit() != cur.is_ascii_digit());
            if boundary {
                pieces.push(chars[start..i].iter().collect::<String>().to_ascii_lowercase());
                start = i;
            }
        }
        pieces.push(chars[start..].iter().collect::<String>().to_ascii_lowercase());
    }
    pieces
}

/// Lexes C-family source text. Total: every input yields a stream, and
/// bytes outside the lexical grammar become single-character tokens.
pub fn tokenize(code: &str) -> TokenStream {
    let bytes = code.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if b.is_ascii_whitespace() {
            i += 1;
        } else if b == b'/' && bytes.get(i + 1) == Some(&b'/') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
        } else if b == b'/' && bytes.get(i + 1) == Some(&b'*') {
            i += 2;
            while i < bytes.len() && !(bytes[i] == b'*' && bytes.get(i + 1) == Some(&b'/')) {
                i += 1;
            }
            i = (i + 2).min(bytes.len());
        } else if b == b'"' || b == b'\'' {
            i = skip_quoted(bytes, i);
            tokens.push(if b == b'"' { STR } else { CHAR }.to_string());
        } else if b.is_ascii_digit() || (b == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            i = skip_number(bytes, i);
            tokens.push(NUM.to_string());
        } else if is_ident_start(b) {
            let start = i;
            while i < bytes.len() && is_ident_continue(bytes[i]) {
                i += 1;
            }
            let ident = &code[start..i];
            tokens.push(ident.to_string());
            let pieces = subwords(ident);
            if pieces.len() > 1 {
                tokens.extend(pieces);
            }
        } else if let Some(op) = OPERATORS.iter().find(|op| bytes[i..].starts_with(op.as_bytes())) {
            tokens.push(op.to_string());
            i += op.len();
        } else if b.is_ascii() {
            tokens.push((b as char).to_string());
            i += 1;
        } else {
            let ch = code[i..].chars().next().expect("index is on a char boundary");
            tokens.push(ch.to_string());
            i += ch.len_utf8();
        }
    }
    TokenStream { tokens }
}

/// Index just past a string or char literal starting at `start`. An
/// unterminated literal ends at the line break.
fn skip_quoted(bytes: &[u8], start: usize) -> usize {
    let quote = bytes[start];
    let mut i = start + 1;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => i += 2,
            b'\n' => return i,
            c if c == quote => return i + 1,
            _ => i += 1,
        }
    }
    bytes.len()
}

fn skip_number(bytes: &[u8], start: usize) -> usize {
    let mut i = start;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_alphanumeric() || c == b'.' || c == b'_' {
            i += 1;
        } else if (c == b'+' || c == b'-') && matches!(bytes[i - 1], b'e' | b'E' | b'p' | b'P') {
            i += 1;
        } else {
            break;
        }
    }
    i
}

/// A sparse feature vector with unit L2 norm (or zero when empty).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector(SparseVector);

impl FeatureVector {
    pub fn zero(dim: usize) -> Self {
        FeatureVector(SparseVector::new(dim, Vec::new(), Vec::new()).expect("empty vector is valid"))
    }

    pub fn as_sparse(&self) -> &SparseVector {
        &self.0
    }

    pub fn into_sparse(self) -> SparseVector {
        self.0
    }
}

impl std::ops::Deref for FeatureVector {
    type Target = SparseVector;
    fn deref(&self) -> &SparseVector {
        &self.0
    }
}

/// Stable bucket for an n-gram.
pub fn gram_index(gram: &[&str], dim: usize, seed: u64) -> usize {
    let mut buf = Vec::with_capacity(gram.iter().map(|t| t.len() + 1).sum());
    for (i, tok) in gram.iter().enumerate() {
        if i > 0 {
            buf.push(GRAM_SEPARATOR);
        }
        buf.extend_from_slice(tok.as_bytes());
    }
    (xxh64(&buf, seed) & (dim as u64 - 1)) as usize
}

pub fn featurize(tokens: &TokenStream, dim: usize, n_max: usize, seed: u64) -> Result<FeatureVector> {
    if !dim.is_power_of_two() || dim > u32::MAX as usize {
        return Err(Error::Config(format!("feature dim must be a power of two, got {dim}")));
    }
    if n_max == 0 {
        return Err(Error::Config("n_max must be at least 1".into()));
    }
    let toks = tokens.as_strs();
    let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
    for n in 1..=n_max.min(toks.len()) {
        for gram in toks.windows(n) {
            *counts.entry(gram_index(gram, dim, seed)).or_default() += 1.0;
        }
    }
    let mut values: Vec<f64> = counts.values().map(|&c| 1.0 + c.ln()).collect();
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        values.iter_mut().for_each(|v| *v /= norm);
    }
    let indices = counts.keys().map(|&k| k as u32).collect();
    Ok(FeatureVector(SparseVector::new(dim, indices, values)?))
}

/// Encoder settings persisted alongside every model.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub encoder: String,
    pub dim: usize,
    pub n_max: usize,
    pub hash_seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            encoder: ENCODER_NAME.to_string(),
            dim: DEFAULT_DIM,
            n_max: DEFAULT_N_MAX,
            hash_seed: DEFAULT_HASH_SEED,
        }
    }
}

impl EncoderConfig {
    pub fn with_dim(dim: usize) -> Self {
        EncoderConfig {
            dim,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder != ENCODER_NAME {
            return Err(Error::Config(format!("unsupported encoder {:?}", self.encoder)));
        }
        if !self.dim.is_power_of_two() || self.dim > u32::MAX as usize {
            return Err(Error::Config(format!("feature dim must be a power of two, got {}", self.dim)));
        }
        if self.n_max == 0 {
            return Err(Error::Config("n_max must be at least 1".into()));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<HashedNgramEncoder> {
        self.validate()?;
        Ok(HashedNgramEncoder { config: self.clone() })
    }
}

/// Maps source text to model input. A learned encoder can implement this
/// in place of the hashed n-gram one.
pub trait Encoder: Send + Sync {
    fn dim(&self) -> usize;
    fn encode(&self, code: &str) -> FeatureVector;
    fn config(&self) -> EncoderConfig;
}

#[derive(Clone, Debug)]
pub struct HashedNgramEncoder {
    config: EncoderConfig,
}

impl Encoder for HashedNgramEncoder {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn encode(&self, code: &str) -> FeatureVector {
        featurize(&tokenize(code), self.config.dim, self.config.n_max, self.config.hash_seed)
            .expect("config validated at construction")
    }

    fn config(&self) -> EncoderConfig {
        self.config.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(code: &str) -> Vec<String> {
        tokenize(code).tokens
    }

    #[test]
    fn simple_declaration() {
        assert_eq!(toks("int x = 42;"), ["int", "x", "=", "NUM", ";"]);
        assert!(toks("").is_empty());
        assert!(toks("  \n\t ").is_empty());
    }

    #[test]
    fn subword_pieces_follow_identifier() {
        assert_eq!(
            toks("memcpy(dst_buf, src, n)"),
            ["memcpy", "(", "dst_buf", "dst", "buf", ",", "src", ",", "n", ")"]
        );
        assert_eq!(subwords("getHTTPResponse2x"), ["get", "http", "response", "2", "x"]);
        assert_eq!(subwords("__init__"), ["init"]);
        assert_eq!(subwords("plain"), ["plain"]);
    }

    #[test]
    fn literals_and_comments() {
        assert_eq!(
            toks(r#"p = "a \"quoted\" str"; c = '\''; // trailing"#),
            ["p", "=", "STR", ";", "c", "=", "CHAR", ";"]
        );
        assert_eq!(toks("/* block\n comment */ x"), ["x"]);
        assert_eq!(toks("a = 0x1fUL + 1.5e-3 + .5;"), ["a", "=", "NUM", "+", "NUM", "+", "NUM", ";"]);
        assert_eq!(toks("\"unterminated\nnext"), ["STR", "next"]);
        assert_eq!(toks("/* open"), Vec::<String>::new());
    }

    #[test]
    fn operators_longest_match() {
        assert_eq!(toks("a<<=b->c"), ["a", "<<=", "b", "->", "c"]);
        assert_eq!(toks("x+++y"), ["x", "++", "+", "y"]);
    }

    #[test]
    fn non_ascii_becomes_single_tokens() {
        assert_eq!(toks("x = λ;"), ["x", "=", "λ", ";"]);
    }

    #[test]
    fn empty_stream_is_zero_vector() {
        let v = featurize(&TokenStream::default(), 16, 2, 0).unwrap();
        assert!(v.indices().is_empty());
        assert_eq!(v.dim(), 16);
    }

    #[test]
    fn single_token_has_unit_weight() {
        let ts = TokenStream { tokens: vec!["a".into()] };
        let v = featurize(&ts, 1 << 10, 1, DEFAULT_HASH_SEED).unwrap();
        assert_eq!(v.values(), &[1.0]);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(featurize(&TokenStream::default(), 12, 2, 0).is_err());
        assert!(featurize(&TokenStream::default(), 16, 0, 0).is_err());
        let mut cfg = EncoderConfig::default();
        cfg.encoder = "bert".into();
        assert!(cfg.build().is_err());
    }

    #[test]
    fn bigrams_are_order_sensitive() {
        let ab = TokenStream { tokens: vec!["a".into(), "b".into()] };
        let ba = TokenStream { tokens: vec!["b".into(), "a".into()] };
        let dim = 1 << 16;
        let (x, y) = (
            featurize(&ab, dim, 2, DEFAULT_HASH_SEED).unwrap(),
            featurize(&ba, dim, 2, DEFAULT_HASH_SEED).unwrap(),
        );
        assert_ne!(gram_index(&["a", "b"], dim, DEFAULT_HASH_SEED), gram_index(&["b", "a"], dim, DEFAULT_HASH_SEED));
        assert_ne!(x, y);
        // Unigram-only vectors cannot tell them apart.
        assert_eq!(
            featurize(&ab, dim, 1, DEFAULT_HASH_SEED).unwrap(),
            featurize(&ba, dim, 1, DEFAULT_HASH_SEED).unwrap()
        );
    }

    proptest! {
        #[test]
        fn tokenize_is_total(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            let code = String::from_utf8_lossy(&bytes);
            let ts = tokenize(&code);
            prop_assert!(ts.tokens.iter().all(|t| !t.is_empty()));
            prop_assert_eq!(ts.clone(), tokenize(&code));
        }

        #[test]
        fn norm_is_zero_or_one(code in "[ -~\n]{0,200}", n_max in 1usize..4) {
            let v = featurize(&tokenize(&code), 1 << 12, n_max, 7).unwrap();
            let norm: f64 = v.values().iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!(norm.abs() < 1e-9 || (norm - 1.0).abs() < 1e-9);
            prop_assert!(v.indices().windows(2).all(|w| w[0] < w[1]));
            prop_assert!(v.indices().iter().all(|&i| (i as usize) < (1 << 12)));
        }
    }
}
