//! Gate norm analysis: extract per-token gate L1 norms from a trained
//! gated recurrent averaging encoder and aggregate them by part-of-speech
//! tag, dependency label, or their conjunction over a tagged corpus.
//!
//! The tagged corpus is blank-line-separated records with one token per
//! line and five tab-separated columns: ID, FORM, POS, HEAD, DEPREL.

use std::collections::BTreeMap;
use std::io::BufRead;

use crate::encoders::{Encoder, EncoderKind, EncoderParams};
use crate::error::{Error, Result};
use crate::numeric::{l1_norm, Real, Tensor};
use crate::vocab::{encode, EmbeddingTable};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedToken {
    pub form: String,
    pub pos: String,
    /// 1-based index of the head token; 0 marks the root.
    pub head: usize,
    pub deprel: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedSentence {
    pub tokens: Vec<TaggedToken>,
}

impl TaggedSentence {
    pub fn forms(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.form.clone()).collect()
    }
}

/// Parse a tagged corpus. Sentences longer than `token_cap` are skipped;
/// the skip count is returned alongside the surviving sentences.
pub fn load_tagged_corpus(
    reader: impl BufRead,
    token_cap: usize,
) -> Result<(Vec<TaggedSentence>, usize)> {
    let mut sentences = Vec::new();
    let mut current: Vec<TaggedToken> = Vec::new();
    let mut skipped = 0usize;
    let mut flush = |current: &mut Vec<TaggedToken>, skipped: &mut usize| {
        if current.is_empty() {
            return;
        }
        if current.len() > token_cap {
            *skipped += 1;
            current.clear();
            return;
        }
        sentences.push(TaggedSentence {
            tokens: std::mem::take(current),
        });
    };

    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            flush(&mut current, &mut skipped);
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(Error::format(
                lineno,
                format!("expected 5 tab-separated columns, found {}", cols.len()),
            ));
        }
        let id: usize = cols[0]
            .parse()
            .map_err(|_| Error::format(lineno, format!("bad token id `{}`", cols[0])))?;
        if id != current.len() + 1 {
            return Err(Error::format(
                lineno,
                format!("token id {id} out of order (expected {})", current.len() + 1),
            ));
        }
        let head: usize = cols[3]
            .parse()
            .map_err(|_| Error::format(lineno, format!("bad head index `{}`", cols[3])))?;
        current.push(TaggedToken {
            form: cols[1].to_string(),
            pos: cols[2].to_string(),
            head,
            deprel: cols[4].to_string(),
        });
    }
    flush(&mut current, &mut skipped);

    // validate head indices now that sentence lengths are known
    for s in &sentences {
        for (i, t) in s.tokens.iter().enumerate() {
            if t.head > s.tokens.len() {
                return Err(Error::Data(format!(
                    "head index {} of token {} exceeds sentence length {}",
                    t.head,
                    i + 1,
                    s.tokens.len()
                )));
            }
        }
    }
    Ok((sentences, skipped))
}

/// L1 norm of the gate activation at every position of an encoded
/// sentence. Only the plain gated averaging variant exposes a single gate
/// to analyze.
pub fn gate_l1_per_token<F: Real>(
    seq: &crate::vocab::TokenSequence,
    encoder: &Encoder<F>,
    w_w: &Tensor<F>,
) -> Result<Vec<f64>> {
    if encoder.config.kind != EncoderKind::Gran1 {
        return Err(Error::Config(format!(
            "gate analysis expects a gran1 encoder, got {}",
            encoder.config.kind.name()
        )));
    }
    let EncoderParams::Gran(gran) = &encoder.fwd else {
        return Err(Error::Config("encoder carries no gate parameters".to_string()));
    };
    let gates = crate::encoders::gran1_gate_activations(seq, w_w, gran)?;
    Ok(gates.iter().map(|g| l1_norm(g).to_f64()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    Pos,
    Dep,
    PosXDep,
}

impl std::str::FromStr for GroupBy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "pos" => GroupBy::Pos,
            "dep" => GroupBy::Dep,
            "posxdep" => GroupBy::PosXDep,
            other => {
                return Err(Error::Config(format!(
                    "unknown grouping `{other}` (expected pos, dep, or posxdep)"
                )))
            }
        })
    }
}

impl GroupBy {
    fn key(self, token: &TaggedToken) -> String {
        match self {
            GroupBy::Pos => token.pos.clone(),
            GroupBy::Dep => token.deprel.clone(),
            GroupBy::PosXDep => format!("{}\u{00d7}{}", token.pos, token.deprel),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormRow {
    pub key: String,
    pub mean: f64,
    pub count: usize,
}

/// Mean gate L1 norm per key, sorted by descending mean with ties broken
/// by key name.
#[derive(Debug, Clone, PartialEq)]
pub struct NormTable {
    pub rows: Vec<NormRow>,
}

impl NormTable {
    /// Total norm mass: sum over keys of count times mean.
    pub fn total_mass(&self) -> f64 {
        self.rows.iter().map(|r| r.mean * r.count as f64).sum()
    }

    pub fn to_tsv(&self) -> String {
        self.rows
            .iter()
            .map(|r| format!("{}\t{}\t{}\n", r.key, r.mean, r.count))
            .collect()
    }

    /// First `top` and last `bottom` rows of the sorted table; either may
    /// be zero to skip that end.
    pub fn head_tail(&self, top: usize, bottom: usize) -> Vec<&NormRow> {
        let mut out: Vec<&NormRow> = self.rows.iter().take(top).collect();
        let start = self.rows.len().saturating_sub(bottom).max(top);
        out.extend(self.rows[start..].iter());
        out
    }
}

/// Embed every tagged sentence with the analyzed encoder and accumulate
/// per-key means of the gate L1 norms. Boundary-tag positions carry no
/// annotation and are excluded from the aggregation.
pub fn aggregate_norms<F: Real>(
    sentences: &[TaggedSentence],
    encoder: &Encoder<F>,
    table: &EmbeddingTable<F>,
    w_w: &Tensor<F>,
    group_by: GroupBy,
    add_sos: bool,
    add_eos: bool,
) -> Result<NormTable> {
    if sentences.is_empty() {
        return Err(Error::Data("no sentences to analyze".to_string()));
    }
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for sentence in sentences {
        let seq = encode(&sentence.forms(), add_sos, add_eos, table)?;
        let norms = gate_l1_per_token(&seq, encoder, w_w)?;
        let offset = usize::from(add_sos);
        for (token, &norm) in sentence.tokens.iter().zip(norms[offset..].iter()) {
            let entry = acc.entry(group_by.key(token)).or_insert((0.0, 0));
            entry.0 += norm;
            entry.1 += 1;
        }
    }
    let mut rows: Vec<NormRow> = acc
        .into_iter()
        .map(|(key, (total, count))| NormRow {
            key,
            mean: total / count as f64,
            count,
        })
        .collect();
    rows.sort_by(|a, b| {
        b.mean
            .partial_cmp(&a.mean)
            .expect("finite means")
            .then_with(|| a.key.cmp(&b.key))
    });
    Ok(NormTable { rows })
}
