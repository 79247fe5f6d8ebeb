//! Scoring sentence pairs with a trained encoder and summarizing
//! performance: Pearson and Spearman correlations per dataset, group
//! averages, and configuration selection by held-out group (test) or by
//! the full evaluation average (oracle).
//!
//! Evaluation never mutates parameters and never consults the random
//! source; reports are bitwise identical across runs.

use crate::encoders::Encoder;
use crate::error::{Error, Result};
use crate::numeric::{self, Real, Tensor};
use crate::vocab::TokenSequence;

/// One similarity dataset: named pairs with gold scores on the 0-5 scale.
#[derive(Debug, Clone)]
pub struct EvalDataset {
    pub name: String,
    pub pairs: Vec<(TokenSequence, TokenSequence, f64)>,
}

/// Cosine predictions for every pair of a dataset. With `scale_to_range`,
/// predictions are affinely mapped from `[-1, 1]` to `[0, 5]` for use in
/// error analysis; correlations are unaffected either way.
pub fn score_pairs<F: Real>(
    dataset: &EvalDataset,
    encoder: &Encoder<F>,
    w_w: &Tensor<F>,
    scale_to_range: bool,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(dataset.pairs.len());
    for (i, (s1, s2, _)) in dataset.pairs.iter().enumerate() {
        let e1 = encoder.encode(s1, w_w)?;
        let e2 = encoder.encode(s2, w_w)?;
        let c = numeric::cosine(&e1, &e2)
            .map_err(|_| {
                Error::Degenerate(format!(
                    "zero embedding in dataset `{}` pair {} (`{}` / `{}`)",
                    dataset.name,
                    i + 1,
                    s1.surface.join(" "),
                    s2.surface.join(" ")
                ))
            })?
            .to_f64();
        out.push(if scale_to_range { 2.5 * (c + 1.0) } else { c });
    }
    Ok(out)
}

fn moments(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    (mean, var)
}

/// Sample Pearson correlation.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!(
            "score lengths {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::Data("need at least 2 scores".to_string()));
    }
    let (mx, vx) = moments(x);
    let (my, vy) = moments(y);
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::Data("zero variance input".to_string()));
    }
    let cov: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum();
    Ok(cov / (vx * vy).sqrt())
}

/// Fractional ranks with ties receiving the average of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).expect("finite scores"));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        // positions i..=j share the same value; 1-based average rank
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson on average-tied fractional ranks.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!(
            "score lengths {} vs {}",
            x.len(),
            y.len()
        )));
    }
    pearson_r(&average_ranks(x), &average_ranks(y))
}

/// Correlations of one dataset within a group.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetScore {
    pub group: String,
    pub dataset: String,
    pub pearson: f64,
    pub spearman: f64,
}

/// All per-dataset correlations for one model/hyperparameter
/// configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Configuration label, e.g. the checkpoint path or a sweep tag.
    pub label: String,
    pub scores: Vec<DatasetScore>,
}

impl EvalReport {
    pub fn new(label: impl Into<String>) -> Self {
        EvalReport {
            label: label.into(),
            scores: Vec::new(),
        }
    }

    pub fn mean_pearson_group(&self, group: &str) -> Result<f64> {
        let vals: Vec<f64> = self
            .scores
            .iter()
            .filter(|s| s.group == group)
            .map(|s| s.pearson)
            .collect();
        if vals.is_empty() {
            return Err(Error::Data(format!("no datasets in group `{group}`")));
        }
        Ok(vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Mean Pearson over all datasets, optionally excluding one group
    /// (the held-out selection group).
    pub fn mean_pearson(&self, exclude_group: Option<&str>) -> Result<f64> {
        let vals: Vec<f64> = self
            .scores
            .iter()
            .filter(|s| Some(s.group.as_str()) != exclude_group)
            .map(|s| s.pearson)
            .collect();
        if vals.is_empty() {
            return Err(Error::Data("no datasets to average".to_string()));
        }
        Ok(vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Tab-separated rows: label, group, dataset, pearson, spearman.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for s in &self.scores {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                self.label, s.group, s.dataset, s.pearson, s.spearman
            ));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut label = None;
        let mut scores = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 5 {
                return Err(Error::format(
                    lineno + 1,
                    format!("expected 5 tab-separated columns, found {}", cols.len()),
                ));
            }
            match &label {
                None => label = Some(cols[0].to_string()),
                Some(l) if l != cols[0] => {
                    return Err(Error::format(
                        lineno + 1,
                        "mixed configuration labels in one report",
                    ))
                }
                _ => {}
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| Error::format(lineno + 1, format!("bad number `{s}`")))
            };
            scores.push(DatasetScore {
                group: cols[1].to_string(),
                dataset: cols[2].to_string(),
                pearson: parse(cols[3])?,
                spearman: parse(cols[4])?,
            });
        }
        Ok(EvalReport {
            label: label.ok_or_else(|| Error::Data("empty report".to_string()))?,
            scores,
        })
    }

    /// Aligned plain-text table with per-group averages.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let name_w = self
            .scores
            .iter()
            .map(|s| s.dataset.len() + s.group.len() + 1)
            .max()
            .unwrap_or(10)
            .max("dataset".len());
        out.push_str(&format!(
            "{:<name_w$}  {:>9}  {:>9}\n",
            "dataset", "pearson", "spearman"
        ));
        let mut group_start = 0;
        while group_start < self.scores.len() {
            let group = &self.scores[group_start].group;
            let end = self.scores[group_start..]
                .iter()
                .position(|s| &s.group != group)
                .map(|p| group_start + p)
                .unwrap_or(self.scores.len());
            for s in &self.scores[group_start..end] {
                out.push_str(&format!(
                    "{:<name_w$}  {:>9.4}  {:>9.4}\n",
                    format!("{}/{}", s.group, s.dataset),
                    s.pearson,
                    s.spearman
                ));
            }
            let mean = self.mean_pearson_group(group).unwrap_or(f64::NAN);
            out.push_str(&format!(
                "{:<name_w$}  {:>9.4}\n",
                format!("{group} (mean)"),
                mean
            ));
            group_start = end;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMode {
    /// Select by the mean Pearson of the designated held-out group.
    Test,
    /// Select by the mean Pearson over the evaluation datasets (every
    /// group except the held-out one).
    Oracle,
}

impl std::str::FromStr for SelectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "test" => SelectionMode::Test,
            "oracle" => SelectionMode::Oracle,
            other => {
                return Err(Error::Config(format!(
                    "unknown selection mode `{other}` (expected test or oracle)"
                )))
            }
        })
    }
}

/// Winning configuration under a selection mode.
#[derive(Debug, Clone)]
pub struct Selection {
    pub mode: SelectionMode,
    pub winner: String,
    pub criterion: f64,
    pub winner_scores: Vec<DatasetScore>,
}

/// Choose among configurations that were each evaluated on the same
/// datasets.
pub fn aggregate(
    reports: &[EvalReport],
    mode: SelectionMode,
    held_out_group: Option<&str>,
) -> Result<Selection> {
    if reports.is_empty() {
        return Err(Error::Data("no reports to aggregate".to_string()));
    }
    let key = |r: &EvalReport| -> Vec<(String, String)> {
        let mut k: Vec<_> = r
            .scores
            .iter()
            .map(|s| (s.group.clone(), s.dataset.clone()))
            .collect();
        k.sort();
        k
    };
    let expected = key(&reports[0]);
    for r in &reports[1..] {
        if key(r) != expected {
            return Err(Error::Data(format!(
                "configuration `{}` was not evaluated on the same datasets",
                r.label
            )));
        }
    }

    let mut winner: Option<(usize, f64)> = None;
    for (i, r) in reports.iter().enumerate() {
        let criterion = match mode {
            SelectionMode::Test => {
                let group = held_out_group.ok_or_else(|| {
                    Error::Config("test selection needs a held-out group".to_string())
                })?;
                r.mean_pearson_group(group)?
            }
            SelectionMode::Oracle => r.mean_pearson(held_out_group)?,
        };
        match winner {
            Some((_, best)) if criterion <= best => {}
            _ => winner = Some((i, criterion)),
        }
    }
    let (idx, criterion) = winner.expect("non-empty reports");
    Ok(Selection {
        mode,
        winner: reports[idx].label.clone(),
        criterion,
        winner_scores: reports[idx].scores.clone(),
    })
}
