//! Readers for the corpus file formats: paraphrase pair TSVs, scored-pair
//! TSVs, similarity evaluation TSVs, and the dataset-group manifest.
//! All files are UTF-8 with pre-tokenized sentences (single spaces).

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Pre-tokenized sentence pair with a gold score, before vocabulary
/// encoding.
pub type RawScoredPair = (Vec<String>, Vec<String>, f64);

/// Split a pre-tokenized sentence on single spaces, dropping empties.
pub fn tokenize(s: &str) -> Vec<String> {
    s.split(' ')
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn split_columns(line: &str, want: usize, lineno: usize) -> Result<Vec<&str>> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != want {
        return Err(Error::format(
            lineno,
            format!("expected {want} tab-separated columns, found {}", cols.len()),
        ));
    }
    Ok(cols)
}

/// Paraphrase pair corpus: `sentence1 TAB sentence2` per line.
pub fn load_pair_corpus(reader: impl BufRead) -> Result<Vec<(Vec<String>, Vec<String>)>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols = split_columns(&line, 2, lineno)?;
        let s1 = tokenize(cols[0]);
        let s2 = tokenize(cols[1]);
        if s1.is_empty() || s2.is_empty() {
            return Err(Error::format(lineno, "empty sentence"));
        }
        out.push((s1, s2));
    }
    Ok(out)
}

/// How gold scores in a scored-pair file map onto `[1, K]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMapping {
    /// Scores are already in `[1, K]`.
    Direct,
    /// Similarity scores on the 0-5 scale, affinely rescaled into
    /// `[1, K]` (the objective needs scores of at least 1).
    StsZeroFive,
}

impl std::str::FromStr for ScoreMapping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "direct" => ScoreMapping::Direct,
            "sts05" => ScoreMapping::StsZeroFive,
            other => {
                return Err(Error::Config(format!(
                    "unknown score mapping `{other}` (expected direct or sts05)"
                )))
            }
        })
    }
}

impl ScoreMapping {
    pub fn apply(self, raw: f64, k: usize, lineno: usize) -> Result<f64> {
        match self {
            ScoreMapping::Direct => {
                if !(1.0..=k as f64).contains(&raw) {
                    return Err(Error::format(
                        lineno,
                        format!("score {raw} outside [1, {k}]"),
                    ));
                }
                Ok(raw)
            }
            ScoreMapping::StsZeroFive => {
                if !(0.0..=5.0).contains(&raw) {
                    return Err(Error::format(
                        lineno,
                        format!("score {raw} outside [0, 5]"),
                    ));
                }
                Ok(1.0 + (k as f64 - 1.0) * raw / 5.0)
            }
        }
    }
}

/// Scored pairs: `sentence1 TAB sentence2 TAB gold` per line, with the
/// gold score mapped into `[1, K]`.
pub fn load_scored_corpus(
    reader: impl BufRead,
    mapping: ScoreMapping,
    k: usize,
) -> Result<Vec<RawScoredPair>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols = split_columns(&line, 3, lineno)?;
        let raw: f64 = cols[2]
            .parse()
            .map_err(|_| Error::format(lineno, format!("bad score `{}`", cols[2])))?;
        let gold = mapping.apply(raw, k, lineno)?;
        out.push((tokenize(cols[0]), tokenize(cols[1]), gold));
    }
    if out.is_empty() {
        return Err(Error::Data("no scored pairs loaded".to_string()));
    }
    Ok(out)
}

/// Similarity evaluation file: `sentence1 TAB sentence2 TAB gold` with
/// gold on the 0-5 scale.
pub fn load_eval_pairs(reader: impl BufRead) -> Result<Vec<RawScoredPair>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols = split_columns(&line, 3, lineno)?;
        let gold: f64 = cols[2]
            .parse()
            .map_err(|_| Error::format(lineno, format!("bad score `{}`", cols[2])))?;
        if !(0.0..=5.0).contains(&gold) {
            return Err(Error::format(lineno, format!("score {gold} outside [0, 5]")));
        }
        out.push((tokenize(cols[0]), tokenize(cols[1]), gold));
    }
    if out.is_empty() {
        return Err(Error::Data("empty evaluation dataset".to_string()));
    }
    Ok(out)
}

/// Manifest mapping dataset groups to files:
/// `group_name: file1, file2, ...` per line, `#` comments. Paths are
/// resolved relative to the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Vec<(String, Vec<PathBuf>)>> {
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let reader = BufReader::new(File::open(path)?);
    let mut out: Vec<(String, Vec<PathBuf>)> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (group, files) = line
            .split_once(':')
            .ok_or_else(|| Error::format(lineno, "expected `group: file1, file2, ...`"))?;
        let group = group.trim();
        if group.is_empty() {
            return Err(Error::format(lineno, "empty group name"));
        }
        if out.iter().any(|(g, _)| g == group) {
            return Err(Error::format(lineno, format!("duplicate group `{group}`")));
        }
        let paths: Vec<PathBuf> = files
            .split(',')
            .map(str::trim)
            .filter(|f| !f.is_empty())
            .map(|f| base.join(f))
            .collect();
        if paths.is_empty() {
            return Err(Error::format(lineno, format!("group `{group}` lists no files")));
        }
        out.push((group.to_string(), paths));
    }
    if out.is_empty() {
        return Err(Error::Data("empty manifest".to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_corpus_basic() {
        let pairs = load_pair_corpus("a b\tc d e\nf\tg\n".as_bytes()).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].0, vec!["a", "b"]);
        assert_eq!(pairs[0].1, vec!["c", "d", "e"]);
    }

    #[test]
    fn pair_corpus_missing_column() {
        let err = load_pair_corpus("a b\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Format { line: 1, .. }));
    }

    #[test]
    fn scored_corpus_direct_range_check() {
        let err =
            load_scored_corpus("a\tb\t0.5\n".as_bytes(), ScoreMapping::Direct, 5).unwrap_err();
        assert!(matches!(err, Error::Format { line: 1, .. }));
        let ok = load_scored_corpus("a\tb\t3.2\n".as_bytes(), ScoreMapping::Direct, 5).unwrap();
        assert_eq!(ok[0].2, 3.2);
    }

    #[test]
    fn scored_corpus_sts_mapping() {
        let rows = load_scored_corpus(
            "a\tb\t0\nc\td\t5\ne\tf\t2.5\n".as_bytes(),
            ScoreMapping::StsZeroFive,
            5,
        )
        .unwrap();
        assert_eq!(rows[0].2, 1.0);
        assert_eq!(rows[1].2, 5.0);
        assert!((rows[2].2 - 3.0).abs() < 1e-12);
    }

    #[test]
    fn eval_pairs_gold_range() {
        assert!(load_eval_pairs("a\tb\t5.1\n".as_bytes()).is_err());
        assert!(load_eval_pairs("a\tb\t4.2\n".as_bytes()).is_ok());
    }

    #[test]
    fn manifest_parsing() {
        let dir = std::env::temp_dir().join("parasent-manifest-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("manifest.txt");
        std::fs::write(&path, "# comment\nsts2016: a.tsv, b.tsv\nsick: c.tsv\n").unwrap();
        let groups = load_manifest(&path).unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].0, "sts2016");
        assert_eq!(groups[0].1.len(), 2);
        assert!(groups[0].1[0].ends_with("a.tsv"));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn manifest_duplicate_group_is_error() {
        let dir = std::env::temp_dir().join("parasent-manifest-dup");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("manifest.txt");
        std::fs::write(&path, "g: a.tsv\ng: b.tsv\n").unwrap();
        assert!(load_manifest(&path).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }
}
