//! Vocabulary construction, word-vector file ingestion, and token-to-index
//! encoding with optional sentence boundary tags.
//!
//! The embedding file format is plain UTF-8 text, one record per line:
//! `token f1 f2 ... fd` with a single space between fields and a constant
//! dimension across lines. Tokens may not contain spaces and are lowercased
//! on load; when the same token appears twice the later line wins.

use std::collections::HashMap;
use std::io::BufRead;

use crate::error::{Error, Result};
use crate::numeric::{RandomSource, Real, Tensor};

pub const UNK_TOKEN: &str = "<unk>";
pub const SOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";

/// Scale of the uniform noise added to the boundary-tag rows on load.
const TAG_NOISE: f64 = 0.01;

/// Vocabulary plus word-vector matrix and its frozen load-time copy.
///
/// `w_w` is the matrix handed to training as the live word parameters;
/// `w_w_initial` is never mutated afterwards and anchors the drift
/// regularizer. Three reserved rows follow the file vocabulary: an unknown
/// token (mean of all loaded vectors), then start and end tags (mean plus
/// small seeded noise).
#[derive(Debug, Clone)]
pub struct EmbeddingTable<F> {
    index: HashMap<String, usize>,
    tokens: Vec<String>,
    pub w_w: Tensor<F>,
    pub w_w_initial: Tensor<F>,
    pub dim: usize,
    pub unk_index: usize,
    pub sos_index: usize,
    pub eos_index: usize,
}

impl<F: Real> EmbeddingTable<F> {
    /// Load embeddings from a text stream. `noise_seed` drives the boundary
    /// tag initialization. Returns the table and any warnings (duplicate
    /// tokens).
    pub fn load(reader: impl BufRead, noise_seed: u64) -> Result<(Self, Vec<String>)> {
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut tokens: Vec<String> = Vec::new();
        let mut rows: Vec<Vec<F>> = Vec::new();
        let mut warnings = Vec::new();
        let mut dim = 0usize;

        for (lineno, line) in reader.lines().enumerate() {
            let lineno = lineno + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(' ').filter(|f| !f.is_empty());
            let token = fields
                .next()
                .ok_or_else(|| Error::format(lineno, "missing token"))?
                .to_lowercase();
            let mut vec = Vec::new();
            for field in fields {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::format(lineno, format!("non-numeric field `{field}`")))?;
                vec.push(F::from_f64(v));
            }
            if vec.is_empty() {
                return Err(Error::format(lineno, "no vector components"));
            }
            if dim == 0 {
                dim = vec.len();
            } else if vec.len() != dim {
                return Err(Error::format(
                    lineno,
                    format!("dimension {} but expected {}", vec.len(), dim),
                ));
            }
            match index.get(&token) {
                Some(&at) => {
                    warnings.push(format!(
                        "duplicate token `{token}` at line {lineno}; last occurrence wins"
                    ));
                    rows[at] = vec;
                }
                None => {
                    index.insert(token.clone(), rows.len());
                    tokens.push(token);
                    rows.push(vec);
                }
            }
        }

        if rows.is_empty() {
            return Err(Error::Data("no embeddings loaded".to_string()));
        }

        // Mean of all loaded vectors, in f64 for a precision-independent result.
        let n = rows.len();
        let mut mean = vec![0.0f64; dim];
        for row in &rows {
            for (m, &x) in mean.iter_mut().zip(row) {
                *m += x.to_f64();
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }

        let mut rng = RandomSource::new(noise_seed);
        let tag_row = |rng: &mut RandomSource| -> Vec<F> {
            mean.iter()
                .map(|&m| F::from_f64(m + rng.uniform(-TAG_NOISE, TAG_NOISE)))
                .collect()
        };

        let unk_index = rows.len();
        rows.push(mean.iter().map(|&m| F::from_f64(m)).collect());
        tokens.push(UNK_TOKEN.to_string());
        let sos_index = rows.len();
        rows.push(tag_row(&mut rng));
        tokens.push(SOS_TOKEN.to_string());
        let eos_index = rows.len();
        rows.push(tag_row(&mut rng));
        tokens.push(EOS_TOKEN.to_string());

        let flat: Vec<F> = rows.into_iter().flatten().collect();
        let w_w = Tensor::from_vec(tokens.len(), dim, flat)?;
        let w_w_initial = w_w.clone();
        Ok((
            EmbeddingTable {
                index,
                tokens,
                w_w,
                w_w_initial,
                dim,
                unk_index,
                sos_index,
                eos_index,
            },
            warnings,
        ))
    }

    /// Total row count including the reserved rows.
    pub fn rows(&self) -> usize {
        self.tokens.len()
    }

    /// Vocabulary size excluding the reserved rows.
    pub fn vocab_len(&self) -> usize {
        self.tokens.len() - 3
    }

    pub fn lookup(&self, token: &str) -> usize {
        let lower = token.to_lowercase();
        *self.index.get(&lower).unwrap_or(&self.unk_index)
    }

    pub fn token(&self, idx: usize) -> &str {
        &self.tokens[idx]
    }
}

/// A sentence as vocabulary indices, with the surface forms retained for
/// analysis output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub indices: Vec<usize>,
    pub surface: Vec<String>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Copy with a start and/or end tag row attached. Tags are added after
    /// any augmentation so the end tag stays final.
    pub fn with_tags<F: Real>(
        &self,
        table: &EmbeddingTable<F>,
        add_sos: bool,
        add_eos: bool,
    ) -> TokenSequence {
        let mut indices = Vec::with_capacity(self.len() + 2);
        let mut surface = Vec::with_capacity(self.len() + 2);
        if add_sos {
            indices.push(table.sos_index);
            surface.push(SOS_TOKEN.to_string());
        }
        indices.extend_from_slice(&self.indices);
        surface.extend_from_slice(&self.surface);
        if add_eos {
            indices.push(table.eos_index);
            surface.push(EOS_TOKEN.to_string());
        }
        TokenSequence { indices, surface }
    }
}

/// Map surface tokens to vocabulary indices. Lookups are lowercased; misses
/// map to the unknown row. Never grows the vocabulary.
pub fn encode<F: Real>(
    tokens: &[String],
    add_sos: bool,
    add_eos: bool,
    table: &EmbeddingTable<F>,
) -> Result<TokenSequence> {
    if tokens.is_empty() && !add_sos && !add_eos {
        return Err(Error::Data("empty sentence".to_string()));
    }
    let mut indices = Vec::with_capacity(tokens.len() + 2);
    let mut surface = Vec::with_capacity(tokens.len() + 2);
    if add_sos {
        indices.push(table.sos_index);
        surface.push(SOS_TOKEN.to_string());
    }
    for t in tokens {
        indices.push(table.lookup(t));
        surface.push(t.to_lowercase());
    }
    if add_eos {
        indices.push(table.eos_index);
        surface.push(EOS_TOKEN.to_string());
    }
    Ok(TokenSequence { indices, surface })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(text: &str) -> (EmbeddingTable<f64>, Vec<String>) {
        EmbeddingTable::load(text.as_bytes(), 1).unwrap()
    }

    #[test]
    fn two_line_load() {
        let (t, warnings) = table("a 1 0\nb 0 1\n");
        assert!(warnings.is_empty());
        assert_eq!(t.vocab_len(), 2);
        assert_eq!(t.rows(), 5);
        assert_eq!(t.dim, 2);
        assert_eq!(t.w_w.row(t.unk_index), &[0.5, 0.5]);
        // tag rows sit near the mean
        for idx in [t.sos_index, t.eos_index] {
            for (x, m) in t.w_w.row(idx).iter().zip([0.5, 0.5]) {
                assert!((x - m).abs() <= TAG_NOISE);
            }
        }
    }

    #[test]
    fn empty_stream_is_error() {
        let err = EmbeddingTable::<f64>::load("".as_bytes(), 1).unwrap_err();
        assert!(err.to_string().contains("no embeddings loaded"));
    }

    #[test]
    fn duplicate_token_last_wins_with_warning() {
        let (t, warnings) = table("a 1 0\nb 0 1\na 7 7\n");
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("duplicate token `a`"));
        assert_eq!(t.vocab_len(), 2);
        assert_eq!(t.w_w.row(t.lookup("a")), &[7.0, 7.0]);
        // mean reflects the winning vector
        assert_eq!(t.w_w.row(t.unk_index), &[3.5, 4.0]);
    }

    #[test]
    fn inconsistent_dimension_reports_line() {
        let err = EmbeddingTable::<f64>::load("a 1 0\nb 1 2 3\n".as_bytes(), 1).unwrap_err();
        match err {
            Error::Format { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn non_numeric_field_is_format_error() {
        let err = EmbeddingTable::<f64>::load("a 1 x\n".as_bytes(), 1).unwrap_err();
        assert!(matches!(err, Error::Format { line: 1, .. }));
    }

    #[test]
    fn encode_lowercases_and_looks_up() {
        let (t, _) = table("a 1 0\nb 0 1\n");
        let seq = encode(&["A".to_string(), "b".to_string()], false, false, &t).unwrap();
        assert_eq!(seq.indices, vec![t.lookup("a"), t.lookup("b")]);
        assert_eq!(seq.surface, vec!["a", "b"]);
    }

    #[test]
    fn encode_oov_maps_to_unk() {
        let (t, _) = table("a 1 0\nb 0 1\n");
        let seq = encode(&["zzz".to_string()], false, false, &t).unwrap();
        assert_eq!(seq.indices, vec![t.unk_index]);
    }

    #[test]
    fn encode_tag_placement() {
        let (t, _) = table("a 1 0\nb 0 1\n");
        let seq = encode(&["a".to_string()], true, true, &t).unwrap();
        assert_eq!(seq.indices, vec![t.sos_index, t.lookup("a"), t.eos_index]);
    }

    #[test]
    fn encode_empty_without_tags_is_error() {
        let (t, _) = table("a 1 0\n");
        let err = encode(&[], false, false, &t).unwrap_err();
        assert!(err.to_string().contains("empty sentence"));
    }

    #[test]
    fn encode_is_deterministic_and_never_grows_vocab() {
        let (t, _) = table("a 1 0\nb 0 1\n");
        let before = t.vocab_len();
        let toks = vec!["a".to_string(), "qqq".to_string()];
        let s1 = encode(&toks, false, true, &t).unwrap();
        let s2 = encode(&toks, false, true, &t).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(t.vocab_len(), before);
    }
}
