//! Checkpoint serialization.
//!
//! Text format, header line `parasent-ckpt v1`, then each named tensor as
//! a `name rows cols` line followed by `rows` lines of space-separated
//! values. Values are written in shortest round-trip decimal form, so a
//! save/load cycle is bit-exact. A reserved `meta` tensor records the
//! encoder configuration so downstream commands can reconstruct the
//! model without re-specifying flags.

use std::io::{BufRead, Write};

use crate::autodiff::ParameterSet;
use crate::encoders::{CombineMode, EncoderKind};
use crate::error::{Error, Result};
use crate::numeric::{Real, Tensor};

pub const HEADER: &str = "parasent-ckpt v1";
const META: &str = "meta";
const META_LEN: usize = 10;

/// Encoder configuration carried inside a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CkptMeta {
    pub dim: usize,
    pub hidden: usize,
    pub kind: EncoderKind,
    pub bidirectional: bool,
    pub combine: CombineMode,
    pub add_sos: bool,
    pub add_eos: bool,
    /// Head sizes are zero for transfer checkpoints without a similarity
    /// head.
    pub head_hidden: usize,
    pub head_k: usize,
}

impl CkptMeta {
    pub fn encoder_config(&self) -> crate::encoders::EncoderConfig {
        crate::encoders::EncoderConfig {
            kind: self.kind,
            dim: self.dim,
            hidden: self.hidden,
            bidirectional: self.bidirectional,
            combine: self.combine,
        }
    }

    fn to_row(self) -> Vec<f64> {
        vec![
            1.0,
            self.dim as f64,
            self.hidden as f64,
            self.kind.code() as f64,
            if self.bidirectional { 1.0 } else { 0.0 },
            self.combine.code() as f64,
            if self.add_sos { 1.0 } else { 0.0 },
            if self.add_eos { 1.0 } else { 0.0 },
            self.head_hidden as f64,
            self.head_k as f64,
        ]
    }

    fn from_row(row: &[f64]) -> Result<Self> {
        if row.len() != META_LEN {
            return Err(Error::Data(format!(
                "meta record has {} fields, expected {META_LEN}",
                row.len()
            )));
        }
        if row[0] != 1.0 {
            return Err(Error::Data(format!(
                "unsupported checkpoint version {}",
                row[0]
            )));
        }
        Ok(CkptMeta {
            dim: row[1] as usize,
            hidden: row[2] as usize,
            kind: EncoderKind::from_code(row[3] as usize)?,
            bidirectional: row[4] != 0.0,
            combine: CombineMode::from_code(row[5] as usize)?,
            add_sos: row[6] != 0.0,
            add_eos: row[7] != 0.0,
            head_hidden: row[8] as usize,
            head_k: row[9] as usize,
        })
    }
}

/// Write a checkpoint. Parameter names must not contain spaces.
pub fn save_checkpoint<F: Real>(
    mut writer: impl Write,
    params: &ParameterSet<F>,
    meta: &CkptMeta,
) -> Result<()> {
    writeln!(writer, "{HEADER}")?;
    let meta_row: Vec<String> = meta.to_row().iter().map(f64::to_string).collect();
    writeln!(writer, "{META} 1 {META_LEN}")?;
    writeln!(writer, "{}", meta_row.join(" "))?;
    for (name, t) in params.iter() {
        if name.contains(' ') || name == META {
            return Err(Error::Config(format!("invalid parameter name `{name}`")));
        }
        writeln!(writer, "{name} {} {}", t.rows(), t.cols())?;
        for r in 0..t.rows() {
            let row: Vec<String> = t.row(r).iter().map(|v| v.to_string()).collect();
            writeln!(writer, "{}", row.join(" "))?;
        }
    }
    Ok(())
}

/// Read a checkpoint back.
pub fn load_checkpoint<F: Real>(reader: impl BufRead) -> Result<(ParameterSet<F>, CkptMeta)> {
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Data("empty checkpoint".to_string()))?;
    let header = header?;
    if header.trim() != HEADER {
        return Err(Error::format(
            1,
            format!("bad checkpoint header `{}`", header.trim()),
        ));
    }

    let mut params = ParameterSet::new();
    let mut meta: Option<CkptMeta> = None;
    while let Some((idx, line)) = lines.next() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let name = fields
            .next()
            .ok_or_else(|| Error::format(lineno, "missing tensor name"))?
            .to_string();
        let rows: usize = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(lineno, "missing row count"))?;
        let cols: usize = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(lineno, "missing column count"))?;
        if fields.next().is_some() {
            return Err(Error::format(lineno, "trailing fields on tensor header"));
        }

        let mut data: Vec<f64> = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (idx, line) = lines
                .next()
                .ok_or_else(|| Error::Data(format!("truncated tensor `{name}`")))?;
            let line = line?;
            let lineno = idx + 1;
            for field in line.split_whitespace() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::format(lineno, format!("bad value `{field}`")))?;
                data.push(v);
            }
        }
        if data.len() != rows * cols {
            return Err(Error::Data(format!(
                "tensor `{name}` has {} values, expected {}",
                data.len(),
                rows * cols
            )));
        }
        if name == META {
            meta = Some(CkptMeta::from_row(&data)?);
        } else {
            let t: Tensor<F> =
                Tensor::from_vec(rows, cols, data.iter().map(|&v| F::from_f64(v)).collect())?;
            params.insert(name, t);
        }
    }
    let meta = meta.ok_or_else(|| Error::Data("checkpoint has no meta record".to_string()))?;
    Ok((params, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::RandomSource;

    fn sample_meta() -> CkptMeta {
        CkptMeta {
            dim: 4,
            hidden: 4,
            kind: EncoderKind::Gran1,
            bidirectional: false,
            combine: CombineMode::Sum,
            add_sos: false,
            add_eos: true,
            head_hidden: 0,
            head_k: 0,
        }
    }

    #[test]
    fn roundtrip_is_bit_exact_f32() {
        let mut rng = RandomSource::new(3);
        let mut params = ParameterSet::<f32>::new();
        let data: Vec<f32> = (0..12).map(|_| rng.uniform(-2.0, 2.0) as f32).collect();
        params.insert("a", Tensor::from_vec(3, 4, data).unwrap());
        params.insert("b.c", Tensor::vector(vec![1.5f32, -0.25, 1e-7]));

        let mut buf = Vec::new();
        save_checkpoint(&mut buf, &params, &sample_meta()).unwrap();
        let (back, meta) = load_checkpoint::<f32>(buf.as_slice()).unwrap();
        assert!(back.bits_eq(&params));
        assert_eq!(meta, sample_meta());
    }

    #[test]
    fn roundtrip_is_bit_exact_f64() {
        let mut params = ParameterSet::<f64>::new();
        params.insert(
            "w",
            Tensor::vector(vec![std::f64::consts::PI, -1e-300, 7.25]),
        );
        let mut buf = Vec::new();
        save_checkpoint(&mut buf, &params, &sample_meta()).unwrap();
        let (back, _) = load_checkpoint::<f64>(buf.as_slice()).unwrap();
        assert!(back.bits_eq(&params));
    }

    #[test]
    fn bad_header_is_error() {
        let err = load_checkpoint::<f64>("not-a-checkpoint\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Format { line: 1, .. }));
    }

    #[test]
    fn missing_meta_is_error() {
        let text = format!("{HEADER}\nw 1 1\n0.5\n");
        assert!(load_checkpoint::<f64>(text.as_bytes()).is_err());
    }

    #[test]
    fn truncated_tensor_is_error() {
        let text = format!("{HEADER}\nw 2 2\n0.5 0.5\n");
        assert!(load_checkpoint::<f64>(text.as_bytes()).is_err());
    }
}
