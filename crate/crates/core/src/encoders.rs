//! Sentence embedding functions: word averaging, a peephole LSTM with
//! final-state or averaged readout, five gated recurrent averaging
//! variants, and bidirectional wrappers.
//!
//! Each encoder exists twice: as a plain forward pass over tensors (used
//! for evaluation, embedding export, and gate analysis) and as a tape
//! builder (used for training and gradient certification). The two routes
//! share the same kernels and are cross-checked in tests.

use crate::autodiff::{Graph, ParamNodes, ParameterSet, ValueId};
use crate::error::{Error, Result};
use crate::numeric::{self, Activation, RandomSource, Real, Tensor};
use crate::vocab::{EmbeddingTable, TokenSequence};

pub const W_W: &str = "w_w";
pub const FWD_PREFIX: &str = "enc.";
pub const BWD_PREFIX: &str = "enc_bwd.";
pub const COMB_W: &str = "comb.w";
pub const COMB_B: &str = "comb.b";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    Avg,
    LstmFinal,
    LstmAvg,
    Gran1,
    Gran2,
    Gran3,
    Gran4,
    Gran5,
}

impl EncoderKind {
    pub fn is_recurrent(self) -> bool {
        self != EncoderKind::Avg
    }

    pub fn is_gran(self) -> bool {
        matches!(
            self,
            EncoderKind::Gran1
                | EncoderKind::Gran2
                | EncoderKind::Gran3
                | EncoderKind::Gran4
                | EncoderKind::Gran5
        )
    }

    pub fn code(self) -> usize {
        match self {
            EncoderKind::Avg => 0,
            EncoderKind::LstmFinal => 1,
            EncoderKind::LstmAvg => 2,
            EncoderKind::Gran1 => 3,
            EncoderKind::Gran2 => 4,
            EncoderKind::Gran3 => 5,
            EncoderKind::Gran4 => 6,
            EncoderKind::Gran5 => 7,
        }
    }

    pub fn from_code(code: usize) -> Result<Self> {
        Ok(match code {
            0 => EncoderKind::Avg,
            1 => EncoderKind::LstmFinal,
            2 => EncoderKind::LstmAvg,
            3 => EncoderKind::Gran1,
            4 => EncoderKind::Gran2,
            5 => EncoderKind::Gran3,
            6 => EncoderKind::Gran4,
            7 => EncoderKind::Gran5,
            other => return Err(Error::Config(format!("unknown encoder code {other}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::Avg => "avg",
            EncoderKind::LstmFinal => "lstm",
            EncoderKind::LstmAvg => "lstmavg",
            EncoderKind::Gran1 => "gran1",
            EncoderKind::Gran2 => "gran2",
            EncoderKind::Gran3 => "gran3",
            EncoderKind::Gran4 => "gran4",
            EncoderKind::Gran5 => "gran5",
        }
    }
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "avg" => EncoderKind::Avg,
            "lstm" => EncoderKind::LstmFinal,
            "lstmavg" => EncoderKind::LstmAvg,
            "gran1" | "gran" => EncoderKind::Gran1,
            "gran2" => EncoderKind::Gran2,
            "gran3" => EncoderKind::Gran3,
            "gran4" => EncoderKind::Gran4,
            "gran5" => EncoderKind::Gran5,
            other => {
                return Err(Error::Config(format!(
                    "unknown encoder `{other}` (expected avg, lstm, lstmavg, gran1..gran5)"
                )))
            }
        })
    }
}

/// How a bidirectional encoder merges the two direction embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CombineMode {
    /// Elementwise sum.
    Sum,
    /// Single feedforward layer with a tanh activation over the
    /// concatenation.
    TanhLayer,
}

impl CombineMode {
    pub fn code(self) -> usize {
        match self {
            CombineMode::Sum => 0,
            CombineMode::TanhLayer => 1,
        }
    }

    pub fn from_code(code: usize) -> Result<Self> {
        Ok(match code {
            0 => CombineMode::Sum,
            1 => CombineMode::TanhLayer,
            other => return Err(Error::Config(format!("unknown combine code {other}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            CombineMode::Sum => "sum",
            CombineMode::TanhLayer => "tanh",
        }
    }
}

impl std::str::FromStr for CombineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "sum" => CombineMode::Sum,
            "tanh" => CombineMode::TanhLayer,
            other => {
                return Err(Error::Config(format!(
                    "unknown combine mode `{other}` (expected sum or tanh)"
                )))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    /// Word vector dimension d.
    pub dim: usize,
    /// LSTM hidden size. Ignored by the averaging encoder.
    pub hidden: usize,
    pub bidirectional: bool,
    pub combine: CombineMode,
}

impl EncoderConfig {
    pub fn new(kind: EncoderKind, dim: usize) -> Self {
        EncoderConfig {
            kind,
            dim,
            hidden: dim,
            bidirectional: false,
            combine: CombineMode::Sum,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("embedding dimension must be > 0".to_string()));
        }
        if self.kind.is_recurrent() && self.hidden == 0 {
            return Err(Error::Config("hidden size must be > 0".to_string()));
        }
        if self.bidirectional && !self.kind.is_recurrent() {
            return Err(Error::Config(
                "bidirectional requires a recurrent encoder".to_string(),
            ));
        }
        if self.kind == EncoderKind::Gran5 && self.hidden != self.dim {
            return Err(Error::Config(
                "gran5 sums a word-dimension gate with a hidden-dimension gate; hidden size must equal the embedding dimension".to_string(),
            ));
        }
        Ok(())
    }

    /// Dimension of the sentence embedding this configuration produces.
    pub fn embedding_dim(&self) -> usize {
        match self.kind {
            EncoderKind::Avg
            | EncoderKind::Gran1
            | EncoderKind::Gran3
            | EncoderKind::Gran4
            | EncoderKind::Gran5 => self.dim,
            EncoderKind::LstmFinal | EncoderKind::LstmAvg | EncoderKind::Gran2 => self.hidden,
        }
    }
}

/// Peephole LSTM weights. The input and forget gates read the previous
/// cell state through diagonal (vector) peepholes; the output gate reads
/// the current one.
#[derive(Debug, Clone)]
pub struct LstmParams<F> {
    pub w_xi: Tensor<F>,
    pub w_hi: Tensor<F>,
    pub b_i: Tensor<F>,
    pub p_ci: Tensor<F>,
    pub w_xf: Tensor<F>,
    pub w_hf: Tensor<F>,
    pub b_f: Tensor<F>,
    pub p_cf: Tensor<F>,
    pub w_xc: Tensor<F>,
    pub w_hc: Tensor<F>,
    pub b_c: Tensor<F>,
    pub w_xo: Tensor<F>,
    pub w_ho: Tensor<F>,
    pub b_o: Tensor<F>,
    pub p_co: Tensor<F>,
}

impl<F: Real> LstmParams<F> {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        LstmParams {
            w_xi: Tensor::zeros(hidden, dim),
            w_hi: Tensor::zeros(hidden, hidden),
            b_i: Tensor::zeros(hidden, 1),
            p_ci: Tensor::zeros(hidden, 1),
            w_xf: Tensor::zeros(hidden, dim),
            w_hf: Tensor::zeros(hidden, hidden),
            b_f: Tensor::zeros(hidden, 1),
            p_cf: Tensor::zeros(hidden, 1),
            w_xc: Tensor::zeros(hidden, dim),
            w_hc: Tensor::zeros(hidden, hidden),
            b_c: Tensor::zeros(hidden, 1),
            w_xo: Tensor::zeros(hidden, dim),
            w_ho: Tensor::zeros(hidden, hidden),
            b_o: Tensor::zeros(hidden, 1),
            p_co: Tensor::zeros(hidden, 1),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_xi.rows()
    }

    /// Clone the LSTM tensors out of a flat parameter set under a
    /// direction prefix ([`FWD_PREFIX`] or [`BWD_PREFIX`]).
    pub fn from_set(set: &ParameterSet<F>, prefix: &str) -> Result<Self> {
        let g = |field: &str| set.get(&format!("{prefix}lstm.{field}")).cloned();
        Ok(LstmParams {
            w_xi: g("w_xi")?,
            w_hi: g("w_hi")?,
            b_i: g("b_i")?,
            p_ci: g("p_ci")?,
            w_xf: g("w_xf")?,
            w_hf: g("w_hf")?,
            b_f: g("b_f")?,
            p_cf: g("p_cf")?,
            w_xc: g("w_xc")?,
            w_hc: g("w_hc")?,
            b_c: g("b_c")?,
            w_xo: g("w_xo")?,
            w_ho: g("w_ho")?,
            b_o: g("b_o")?,
            p_co: g("p_co")?,
        })
    }
}

/// One gating function: `sigmoid(w_x x_t + w_h h_t [+ w_a a_prev] + b)`.
#[derive(Debug, Clone)]
pub struct GateParams<F> {
    pub w_x: Tensor<F>,
    pub w_h: Tensor<F>,
    pub b: Tensor<F>,
    /// Present only for the variant whose gates also read the running
    /// average.
    pub w_a: Option<Tensor<F>>,
}

impl<F: Real> GateParams<F> {
    pub fn zeros(out: usize, dim: usize, hidden: usize, with_a: bool) -> Self {
        GateParams {
            w_x: Tensor::zeros(out, dim),
            w_h: Tensor::zeros(out, hidden),
            b: Tensor::zeros(out, 1),
            w_a: with_a.then(|| Tensor::zeros(out, out)),
        }
    }

    fn from_set(set: &ParameterSet<F>, prefix: &str, gate: &str, with_a: bool) -> Result<Self> {
        let g = |field: &str| set.get(&format!("{prefix}{gate}.{field}")).cloned();
        Ok(GateParams {
            w_x: g("w_x")?,
            w_h: g("w_h")?,
            b: g("b")?,
            w_a: if with_a { Some(g("w_a")?) } else { None },
        })
    }

    /// Gate activation for one position.
    pub fn activate(
        &self,
        x_t: &Tensor<F>,
        h_t: &Tensor<F>,
        a_prev: Option<&Tensor<F>>,
    ) -> Result<Tensor<F>> {
        let mut pre = numeric::affine(&self.w_x, x_t, &self.b)?;
        pre = numeric::add(&pre, &numeric::matvec(&self.w_h, h_t)?)?;
        if let Some(w_a) = &self.w_a {
            let a = a_prev.ok_or_else(|| {
                Error::Config("gate reads the running average but none was given".to_string())
            })?;
            pre = numeric::add(&pre, &numeric::matvec(w_a, a)?)?;
        }
        Ok(numeric::elementwise(Activation::Sigmoid, &pre))
    }
}

/// Gated recurrent averaging weights: an embedded LSTM plus one or two
/// gating functions depending on the variant.
#[derive(Debug, Clone)]
pub struct GranParams<F> {
    pub kind: EncoderKind,
    pub lstm: LstmParams<F>,
    pub gate1: GateParams<F>,
    pub gate2: Option<GateParams<F>>,
}

/// Feedforward combiner for the tanh bidirectional merge.
#[derive(Debug, Clone)]
pub struct CombinerParams<F> {
    pub w: Tensor<F>,
    pub b: Tensor<F>,
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)] // built once per model, never stored in bulk
pub enum EncoderParams<F> {
    Avg,
    Lstm(LstmParams<F>),
    Gran(GranParams<F>),
}

/// A complete encoder: configuration plus typed weights, cloned out of a
/// flat parameter set. Encoding with frozen weights is pure.
#[derive(Debug, Clone)]
pub struct Encoder<F> {
    pub config: EncoderConfig,
    pub fwd: EncoderParams<F>,
    pub bwd: Option<EncoderParams<F>>,
    pub combiner: Option<CombinerParams<F>>,
}

fn direction_params<F: Real>(
    set: &ParameterSet<F>,
    kind: EncoderKind,
    prefix: &str,
) -> Result<EncoderParams<F>> {
    Ok(match kind {
        EncoderKind::Avg => EncoderParams::Avg,
        EncoderKind::LstmFinal | EncoderKind::LstmAvg => {
            EncoderParams::Lstm(LstmParams::from_set(set, prefix)?)
        }
        _ => {
            let lstm = LstmParams::from_set(set, prefix)?;
            let with_a = kind == EncoderKind::Gran4;
            let gate1 = GateParams::from_set(set, prefix, "gate1", with_a)?;
            let gate2 = match kind {
                EncoderKind::Gran1 | EncoderKind::Gran2 => None,
                _ => Some(GateParams::from_set(set, prefix, "gate2", with_a)?),
            };
            EncoderParams::Gran(GranParams {
                kind,
                lstm,
                gate1,
                gate2,
            })
        }
    })
}

impl<F: Real> Encoder<F> {
    /// Assemble typed weights from a flat parameter set. Missing or
    /// misshapen tensors surface as config errors, which is how a
    /// checkpoint/encoder mismatch is detected.
    pub fn from_set(config: EncoderConfig, set: &ParameterSet<F>) -> Result<Self> {
        config.validate()?;
        for (name, rows, cols) in encoder_param_shapes(&config) {
            let t = set.get(&name)?;
            if t.rows() != rows || t.cols() != cols {
                return Err(Error::Config(format!(
                    "parameter `{name}` has shape {}x{}, expected {rows}x{cols}",
                    t.rows(),
                    t.cols()
                )));
            }
        }
        let fwd = direction_params(set, config.kind, FWD_PREFIX)?;
        let bwd = if config.bidirectional {
            Some(direction_params(set, config.kind, BWD_PREFIX)?)
        } else {
            None
        };
        let combiner = if config.bidirectional && config.combine == CombineMode::TanhLayer {
            Some(CombinerParams {
                w: set.get(COMB_W)?.clone(),
                b: set.get(COMB_B)?.clone(),
            })
        } else {
            None
        };
        Ok(Encoder {
            config,
            fwd,
            bwd,
            combiner,
        })
    }

    /// Embed one sentence with frozen weights (no dropout).
    pub fn encode(&self, seq: &TokenSequence, w_w: &Tensor<F>) -> Result<Tensor<F>> {
        match &self.bwd {
            None => encode_direction_kind(self.config.kind, &self.fwd, &seq.indices, w_w),
            Some(bwd) => encode_bidirectional(
                seq,
                w_w,
                &self.config,
                &self.fwd,
                bwd,
                self.combiner.as_ref(),
            ),
        }
    }
}

fn gather<F: Real>(indices: &[usize], w_w: &Tensor<F>) -> Result<Vec<Tensor<F>>> {
    indices
        .iter()
        .map(|&i| {
            if i >= w_w.rows() {
                return Err(Error::Dimension(format!(
                    "token index {i} out of {} rows",
                    w_w.rows()
                )));
            }
            Ok(Tensor::vector(w_w.row(i).to_vec()))
        })
        .collect()
}

fn mean_of<F: Real>(vs: &[Tensor<F>]) -> Result<Tensor<F>> {
    let (first, rest) = vs
        .split_first()
        .ok_or_else(|| Error::Data("empty sequence".to_string()))?;
    let mut acc = first.clone();
    for v in rest {
        acc = numeric::add(&acc, v)?;
    }
    Ok(numeric::scale(&acc, F::ONE / F::from_f64(vs.len() as f64)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LstmReadout {
    /// Use the final hidden vector.
    Final,
    /// Average all hidden vectors.
    Average,
}

/// One step of the peephole LSTM.
pub fn lstm_step<F: Real>(
    x_t: &Tensor<F>,
    h_prev: &Tensor<F>,
    c_prev: &Tensor<F>,
    p: &LstmParams<F>,
) -> Result<(Tensor<F>, Tensor<F>)> {
    let i_pre = {
        let mut v = numeric::affine(&p.w_xi, x_t, &p.b_i)?;
        v = numeric::add(&v, &numeric::matvec(&p.w_hi, h_prev)?)?;
        numeric::add(&v, &numeric::hadamard(&p.p_ci, c_prev)?)?
    };
    let i = numeric::elementwise(Activation::Sigmoid, &i_pre);

    let f_pre = {
        let mut v = numeric::affine(&p.w_xf, x_t, &p.b_f)?;
        v = numeric::add(&v, &numeric::matvec(&p.w_hf, h_prev)?)?;
        numeric::add(&v, &numeric::hadamard(&p.p_cf, c_prev)?)?
    };
    let f = numeric::elementwise(Activation::Sigmoid, &f_pre);

    let c_tilde_pre = {
        let v = numeric::affine(&p.w_xc, x_t, &p.b_c)?;
        numeric::add(&v, &numeric::matvec(&p.w_hc, h_prev)?)?
    };
    let c_tilde = numeric::elementwise(Activation::Tanh, &c_tilde_pre);

    let c_t = numeric::add(
        &numeric::hadamard(&f, c_prev)?,
        &numeric::hadamard(&i, &c_tilde)?,
    )?;

    let o_pre = {
        let mut v = numeric::affine(&p.w_xo, x_t, &p.b_o)?;
        v = numeric::add(&v, &numeric::matvec(&p.w_ho, h_prev)?)?;
        numeric::add(&v, &numeric::hadamard(&p.p_co, &c_t)?)?
    };
    let o = numeric::elementwise(Activation::Sigmoid, &o_pre);

    let h_t = numeric::hadamard(&o, &numeric::elementwise(Activation::Tanh, &c_t))?;
    Ok((h_t, c_t))
}

/// All hidden states of the LSTM run over a word-vector sequence,
/// starting from zero state.
pub fn lstm_hidden_states<F: Real>(
    xs: &[Tensor<F>],
    p: &LstmParams<F>,
) -> Result<Vec<Tensor<F>>> {
    if xs.is_empty() {
        return Err(Error::Data("empty sequence".to_string()));
    }
    let hidden = p.hidden();
    let mut h = Tensor::zeros(hidden, 1);
    let mut c = Tensor::zeros(hidden, 1);
    let mut out = Vec::with_capacity(xs.len());
    for x in xs {
        let (h_t, c_t) = lstm_step(x, &h, &c, p)?;
        out.push(h_t.clone());
        h = h_t;
        c = c_t;
    }
    Ok(out)
}

/// Average of the word vectors of a sentence.
pub fn encode_avg<F: Real>(seq: &TokenSequence, w_w: &Tensor<F>) -> Result<Tensor<F>> {
    let xs = gather(&seq.indices, w_w)?;
    mean_of(&xs)
}

/// LSTM sentence embedding with the chosen readout.
pub fn encode_lstm<F: Real>(
    seq: &TokenSequence,
    w_w: &Tensor<F>,
    p: &LstmParams<F>,
    readout: LstmReadout,
) -> Result<Tensor<F>> {
    let xs = gather(&seq.indices, w_w)?;
    let hs = lstm_hidden_states(&xs, p)?;
    match readout {
        LstmReadout::Final => Ok(hs.last().unwrap().clone()),
        LstmReadout::Average => mean_of(&hs),
    }
}

/// One gated-averaging step: combines the word vector, the LSTM hidden
/// state, and (for the running-average variants) the previous average
/// into the next gated vector.
pub fn gran_step<F: Real>(
    x_t: &Tensor<F>,
    h_t: &Tensor<F>,
    a_prev: Option<&Tensor<F>>,
    p: &GranParams<F>,
) -> Result<Tensor<F>> {
    match p.kind {
        EncoderKind::Gran1 => {
            let g = p.gate1.activate(x_t, h_t, None)?;
            numeric::hadamard(x_t, &g)
        }
        EncoderKind::Gran2 => {
            let g = p.gate1.activate(x_t, h_t, None)?;
            numeric::hadamard(h_t, &g)
        }
        EncoderKind::Gran3 | EncoderKind::Gran4 => {
            let a = a_prev.ok_or_else(|| {
                Error::Config("running-average variant needs the previous average".to_string())
            })?;
            let read_a = (p.kind == EncoderKind::Gran4).then_some(a);
            let g1 = p.gate1.activate(x_t, h_t, read_a)?;
            let gate2 = p
                .gate2
                .as_ref()
                .ok_or_else(|| Error::Config("missing second gate".to_string()))?;
            let g2 = gate2.activate(x_t, h_t, read_a)?;
            numeric::add(
                &numeric::hadamard(x_t, &g1)?,
                &numeric::hadamard(a, &g2)?,
            )
        }
        EncoderKind::Gran5 => {
            let g1 = p.gate1.activate(x_t, h_t, None)?;
            let gate2 = p
                .gate2
                .as_ref()
                .ok_or_else(|| Error::Config("missing second gate".to_string()))?;
            let g2 = gate2.activate(x_t, h_t, None)?;
            numeric::add(
                &numeric::hadamard(x_t, &g1)?,
                &numeric::hadamard(h_t, &g2)?,
            )
        }
        other => Err(Error::Config(format!(
            "gran_step on non-gran encoder {}",
            other.name()
        ))),
    }
}

fn encode_gran_vectors<F: Real>(xs: &[Tensor<F>], p: &GranParams<F>) -> Result<Tensor<F>> {
    let hs = lstm_hidden_states(xs, p.lstm_ref())?;
    let dim = xs[0].rows();
    match p.kind {
        EncoderKind::Gran1 | EncoderKind::Gran2 | EncoderKind::Gran5 => {
            let mut gated = Vec::with_capacity(xs.len());
            for (x, h) in xs.iter().zip(&hs) {
                gated.push(gran_step(x, h, None, p)?);
            }
            mean_of(&gated)
        }
        EncoderKind::Gran3 | EncoderKind::Gran4 => {
            let mut a = Tensor::zeros(dim, 1);
            for (x, h) in xs.iter().zip(&hs) {
                a = gran_step(x, h, Some(&a), p)?;
            }
            Ok(numeric::scale(&a, F::ONE / F::from_f64(xs.len() as f64)))
        }
        _ => unreachable!(),
    }
}

impl<F: Real> GranParams<F> {
    fn lstm_ref(&self) -> &LstmParams<F> {
        &self.lstm
    }
}

/// GRAN sentence embedding: mean of the gated vectors, or the final
/// running average divided by the sequence length for the running-average
/// variants.
pub fn encode_gran<F: Real>(
    seq: &TokenSequence,
    w_w: &Tensor<F>,
    p: &GranParams<F>,
) -> Result<Tensor<F>> {
    let xs = gather(&seq.indices, w_w)?;
    if xs.is_empty() {
        return Err(Error::Data("empty sequence".to_string()));
    }
    encode_gran_vectors(&xs, p)
}

/// Per-position gate activations of the plain gated averaging encoder,
/// used by gate norm analysis.
pub fn gran1_gate_activations<F: Real>(
    seq: &TokenSequence,
    w_w: &Tensor<F>,
    p: &GranParams<F>,
) -> Result<Vec<Tensor<F>>> {
    if p.kind != EncoderKind::Gran1 {
        return Err(Error::Config(format!(
            "gate analysis expects a gran1 encoder, got {}",
            p.kind.name()
        )));
    }
    let xs = gather(&seq.indices, w_w)?;
    let hs = lstm_hidden_states(&xs, &p.lstm)?;
    xs.iter()
        .zip(&hs)
        .map(|(x, h)| p.gate1.activate(x, h, None))
        .collect()
}

/// Run a recurrent encoder in both directions and merge.
pub fn encode_bidirectional<F: Real>(
    seq: &TokenSequence,
    w_w: &Tensor<F>,
    config: &EncoderConfig,
    fwd: &EncoderParams<F>,
    bwd: &EncoderParams<F>,
    combiner: Option<&CombinerParams<F>>,
) -> Result<Tensor<F>> {
    if !config.kind.is_recurrent() {
        return Err(Error::Config(
            "bidirectional requires a recurrent encoder".to_string(),
        ));
    }
    let fwd_emb = encode_direction_kind(config.kind, fwd, &seq.indices, w_w)?;
    let reversed: Vec<usize> = seq.indices.iter().rev().copied().collect();
    let bwd_emb = encode_direction_kind(config.kind, bwd, &reversed, w_w)?;
    match config.combine {
        CombineMode::Sum => numeric::add(&fwd_emb, &bwd_emb),
        CombineMode::TanhLayer => {
            let comb = combiner.ok_or_else(|| {
                Error::Config("tanh combine mode requires combiner parameters".to_string())
            })?;
            let mut cat = fwd_emb.as_slice().to_vec();
            cat.extend_from_slice(bwd_emb.as_slice());
            let pre = numeric::affine(&comb.w, &Tensor::vector(cat), &comb.b)?;
            Ok(numeric::elementwise(Activation::Tanh, &pre))
        }
    }
}

fn encode_direction_kind<F: Real>(
    kind: EncoderKind,
    params: &EncoderParams<F>,
    indices: &[usize],
    w_w: &Tensor<F>,
) -> Result<Tensor<F>> {
    if indices.is_empty() {
        return Err(Error::Data("empty sequence".to_string()));
    }
    let xs = gather(indices, w_w)?;
    match (kind, params) {
        (EncoderKind::Avg, EncoderParams::Avg) => mean_of(&xs),
        (EncoderKind::LstmFinal, EncoderParams::Lstm(p)) => {
            let hs = lstm_hidden_states(&xs, p)?;
            Ok(hs.last().unwrap().clone())
        }
        (EncoderKind::LstmAvg, EncoderParams::Lstm(p)) => {
            let hs = lstm_hidden_states(&xs, p)?;
            mean_of(&hs)
        }
        (k, EncoderParams::Gran(p)) if k.is_gran() => encode_gran_vectors(&xs, p),
        _ => Err(Error::Config(
            "encoder parameters do not match the configured kind".to_string(),
        )),
    }
}

fn lstm_shapes(prefix: &str, dim: usize, hidden: usize, out: &mut Vec<(String, usize, usize)>) {
    for field in ["w_xi", "w_xf", "w_xc", "w_xo"] {
        out.push((format!("{prefix}lstm.{field}"), hidden, dim));
    }
    for field in ["w_hi", "w_hf", "w_hc", "w_ho"] {
        out.push((format!("{prefix}lstm.{field}"), hidden, hidden));
    }
    for field in ["b_i", "b_f", "b_c", "b_o", "p_ci", "p_cf", "p_co"] {
        out.push((format!("{prefix}lstm.{field}"), hidden, 1));
    }
}

fn gate_shapes(
    prefix: &str,
    gate: &str,
    out_dim: usize,
    dim: usize,
    hidden: usize,
    with_a: bool,
    out: &mut Vec<(String, usize, usize)>,
) {
    out.push((format!("{prefix}{gate}.w_x"), out_dim, dim));
    out.push((format!("{prefix}{gate}.w_h"), out_dim, hidden));
    out.push((format!("{prefix}{gate}.b"), out_dim, 1));
    if with_a {
        out.push((format!("{prefix}{gate}.w_a"), out_dim, out_dim));
    }
}

fn direction_shapes(
    kind: EncoderKind,
    prefix: &str,
    dim: usize,
    hidden: usize,
    out: &mut Vec<(String, usize, usize)>,
) {
    match kind {
        EncoderKind::Avg => {}
        EncoderKind::LstmFinal | EncoderKind::LstmAvg => lstm_shapes(prefix, dim, hidden, out),
        EncoderKind::Gran1 => {
            lstm_shapes(prefix, dim, hidden, out);
            gate_shapes(prefix, "gate1", dim, dim, hidden, false, out);
        }
        EncoderKind::Gran2 => {
            lstm_shapes(prefix, dim, hidden, out);
            gate_shapes(prefix, "gate1", hidden, dim, hidden, false, out);
        }
        EncoderKind::Gran3 => {
            lstm_shapes(prefix, dim, hidden, out);
            gate_shapes(prefix, "gate1", dim, dim, hidden, false, out);
            gate_shapes(prefix, "gate2", dim, dim, hidden, false, out);
        }
        EncoderKind::Gran4 => {
            lstm_shapes(prefix, dim, hidden, out);
            gate_shapes(prefix, "gate1", dim, dim, hidden, true, out);
            gate_shapes(prefix, "gate2", dim, dim, hidden, true, out);
        }
        EncoderKind::Gran5 => {
            lstm_shapes(prefix, dim, hidden, out);
            gate_shapes(prefix, "gate1", dim, dim, hidden, false, out);
            gate_shapes(prefix, "gate2", hidden, dim, hidden, false, out);
        }
    }
}

/// Name and shape of every compositional tensor this configuration owns
/// (the word matrix is separate). This is the layout contract shared by
/// initialization, checkpointing, and the tape builders.
pub fn encoder_param_shapes(config: &EncoderConfig) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    direction_shapes(config.kind, FWD_PREFIX, config.dim, config.hidden, &mut out);
    if config.bidirectional {
        direction_shapes(config.kind, BWD_PREFIX, config.dim, config.hidden, &mut out);
        if config.combine == CombineMode::TanhLayer {
            let e = config.embedding_dim();
            out.push((COMB_W.to_string(), e, 2 * e));
            out.push((COMB_B.to_string(), e, 1));
        }
    }
    out
}

/// Fresh parameter set: the word matrix copied from the table plus
/// Glorot-uniform weight matrices and zero bias/peephole vectors.
pub fn init_params<F: Real>(
    config: &EncoderConfig,
    table: &EmbeddingTable<F>,
    seed: u64,
) -> Result<ParameterSet<F>> {
    init_params_with(config, table, &mut RandomSource::new(seed))
}

/// As [`init_params`], drawing from a caller-owned stream.
pub fn init_params_with<F: Real>(
    config: &EncoderConfig,
    table: &EmbeddingTable<F>,
    rng: &mut RandomSource,
) -> Result<ParameterSet<F>> {
    config.validate()?;
    if table.dim != config.dim {
        return Err(Error::Config(format!(
            "table dimension {} does not match encoder dimension {}",
            table.dim, config.dim
        )));
    }
    let mut set = ParameterSet::new();
    set.insert(W_W, table.w_w.clone());
    for (name, rows, cols) in encoder_param_shapes(config) {
        set.insert(name, init_tensor(rows, cols, rng));
    }
    Ok(set)
}

/// Glorot-uniform matrix, or zeros for vectors (biases and peepholes).
pub fn init_tensor<F: Real>(rows: usize, cols: usize, rng: &mut RandomSource) -> Tensor<F> {
    if cols == 1 {
        return Tensor::zeros(rows, 1);
    }
    let s = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| F::from_f64(rng.uniform(-s, s)))
        .collect();
    Tensor::from_vec(rows, cols, data).expect("shape matches construction")
}

// ---------------------------------------------------------------------------
// Tape builders: the same encoders expressed as graph operations, used by
// training and gradient certification.
// ---------------------------------------------------------------------------

/// Word-vector nodes for a sentence: embedding rows with optional
/// per-position dropout masks multiplied in (masks are constants on the
/// tape, pre-scaled by the caller).
fn token_nodes<F: Real>(
    g: &mut Graph<F>,
    w_w: ValueId,
    indices: &[usize],
    masks: Option<&[Tensor<F>]>,
) -> Result<Vec<ValueId>> {
    if indices.is_empty() {
        return Err(Error::Data("empty sequence".to_string()));
    }
    if let Some(ms) = masks {
        if ms.len() != indices.len() {
            return Err(Error::Dimension(format!(
                "{} dropout masks for {} tokens",
                ms.len(),
                indices.len()
            )));
        }
    }
    let mut out = Vec::with_capacity(indices.len());
    for (t, &idx) in indices.iter().enumerate() {
        let mut x = g.row(w_w, idx)?;
        if let Some(ms) = masks {
            let m = g.constant(ms[t].clone());
            x = g.mul(x, m)?;
        }
        out.push(x);
    }
    Ok(out)
}

struct GateNodes {
    w_x: ValueId,
    w_h: ValueId,
    b: ValueId,
    w_a: Option<ValueId>,
}

impl GateNodes {
    fn bind<F: Real>(nodes: &ParamNodes, prefix: &str, gate: &str, with_a: bool) -> Result<Self> {
        let _ = std::marker::PhantomData::<F>;
        Ok(GateNodes {
            w_x: nodes.get(&format!("{prefix}{gate}.w_x"))?,
            w_h: nodes.get(&format!("{prefix}{gate}.w_h"))?,
            b: nodes.get(&format!("{prefix}{gate}.b"))?,
            w_a: if with_a {
                Some(nodes.get(&format!("{prefix}{gate}.w_a"))?)
            } else {
                None
            },
        })
    }

    fn activate<F: Real>(
        &self,
        g: &mut Graph<F>,
        x: ValueId,
        h: ValueId,
        a_prev: Option<ValueId>,
    ) -> Result<ValueId> {
        let mut pre = g.affine(self.w_x, x, self.b)?;
        let hh = g.matvec(self.w_h, h)?;
        pre = g.add(pre, hh)?;
        if let Some(w_a) = self.w_a {
            let a = a_prev.ok_or_else(|| {
                Error::Config("gate reads the running average but none was given".to_string())
            })?;
            let aa = g.matvec(w_a, a)?;
            pre = g.add(pre, aa)?;
        }
        Ok(g.sigmoid(pre))
    }
}

struct LstmNodes {
    w_xi: ValueId,
    w_hi: ValueId,
    b_i: ValueId,
    p_ci: ValueId,
    w_xf: ValueId,
    w_hf: ValueId,
    b_f: ValueId,
    p_cf: ValueId,
    w_xc: ValueId,
    w_hc: ValueId,
    b_c: ValueId,
    w_xo: ValueId,
    w_ho: ValueId,
    b_o: ValueId,
    p_co: ValueId,
}

impl LstmNodes {
    fn bind(nodes: &ParamNodes, prefix: &str) -> Result<Self> {
        let n = |field: &str| nodes.get(&format!("{prefix}lstm.{field}"));
        Ok(LstmNodes {
            w_xi: n("w_xi")?,
            w_hi: n("w_hi")?,
            b_i: n("b_i")?,
            p_ci: n("p_ci")?,
            w_xf: n("w_xf")?,
            w_hf: n("w_hf")?,
            b_f: n("b_f")?,
            p_cf: n("p_cf")?,
            w_xc: n("w_xc")?,
            w_hc: n("w_hc")?,
            b_c: n("b_c")?,
            w_xo: n("w_xo")?,
            w_ho: n("w_ho")?,
            b_o: n("b_o")?,
            p_co: n("p_co")?,
        })
    }

    fn step<F: Real>(
        &self,
        g: &mut Graph<F>,
        x: ValueId,
        h_prev: ValueId,
        c_prev: ValueId,
    ) -> Result<(ValueId, ValueId)> {
        let mut i_pre = g.affine(self.w_xi, x, self.b_i)?;
        let hi = g.matvec(self.w_hi, h_prev)?;
        i_pre = g.add(i_pre, hi)?;
        let pi = g.mul(self.p_ci, c_prev)?;
        i_pre = g.add(i_pre, pi)?;
        let i = g.sigmoid(i_pre);

        let mut f_pre = g.affine(self.w_xf, x, self.b_f)?;
        let hf = g.matvec(self.w_hf, h_prev)?;
        f_pre = g.add(f_pre, hf)?;
        let pf = g.mul(self.p_cf, c_prev)?;
        f_pre = g.add(f_pre, pf)?;
        let f = g.sigmoid(f_pre);

        let mut c_pre = g.affine(self.w_xc, x, self.b_c)?;
        let hc = g.matvec(self.w_hc, h_prev)?;
        c_pre = g.add(c_pre, hc)?;
        let c_tilde = g.tanh(c_pre);

        let fc = g.mul(f, c_prev)?;
        let ic = g.mul(i, c_tilde)?;
        let c = g.add(fc, ic)?;

        let mut o_pre = g.affine(self.w_xo, x, self.b_o)?;
        let ho = g.matvec(self.w_ho, h_prev)?;
        o_pre = g.add(o_pre, ho)?;
        let po = g.mul(self.p_co, c)?;
        o_pre = g.add(o_pre, po)?;
        let o = g.sigmoid(o_pre);

        let tc = g.tanh(c);
        let h = g.mul(o, tc)?;
        Ok((h, c))
    }

    fn hidden_states<F: Real>(
        &self,
        g: &mut Graph<F>,
        xs: &[ValueId],
        hidden: usize,
    ) -> Result<Vec<ValueId>> {
        let mut h = g.constant(Tensor::zeros(hidden, 1));
        let mut c = g.constant(Tensor::zeros(hidden, 1));
        let mut out = Vec::with_capacity(xs.len());
        for &x in xs {
            let (h_t, c_t) = self.step(g, x, h, c)?;
            out.push(h_t);
            h = h_t;
            c = c_t;
        }
        Ok(out)
    }
}

fn direction_node<F: Real>(
    g: &mut Graph<F>,
    nodes: &ParamNodes,
    config: &EncoderConfig,
    prefix: &str,
    xs: &[ValueId],
) -> Result<ValueId> {
    match config.kind {
        EncoderKind::Avg => g.mean_many(xs),
        EncoderKind::LstmFinal => {
            let lstm = LstmNodes::bind(nodes, prefix)?;
            let hs = lstm.hidden_states(g, xs, config.hidden)?;
            Ok(*hs.last().unwrap())
        }
        EncoderKind::LstmAvg => {
            let lstm = LstmNodes::bind(nodes, prefix)?;
            let hs = lstm.hidden_states(g, xs, config.hidden)?;
            g.mean_many(&hs)
        }
        EncoderKind::Gran1 | EncoderKind::Gran2 => {
            let lstm = LstmNodes::bind(nodes, prefix)?;
            let hs = lstm.hidden_states(g, xs, config.hidden)?;
            let gate = GateNodes::bind::<F>(nodes, prefix, "gate1", false)?;
            let mut gated = Vec::with_capacity(xs.len());
            for (&x, &h) in xs.iter().zip(&hs) {
                let act = gate.activate(g, x, h, None)?;
                let target = if config.kind == EncoderKind::Gran1 { x } else { h };
                gated.push(g.mul(target, act)?);
            }
            g.mean_many(&gated)
        }
        EncoderKind::Gran3 | EncoderKind::Gran4 => {
            let with_a = config.kind == EncoderKind::Gran4;
            let lstm = LstmNodes::bind(nodes, prefix)?;
            let hs = lstm.hidden_states(g, xs, config.hidden)?;
            let gate1 = GateNodes::bind::<F>(nodes, prefix, "gate1", with_a)?;
            let gate2 = GateNodes::bind::<F>(nodes, prefix, "gate2", with_a)?;
            let mut a = g.constant(Tensor::zeros(config.dim, 1));
            for (&x, &h) in xs.iter().zip(&hs) {
                let read_a = with_a.then_some(a);
                let g1 = gate1.activate(g, x, h, read_a)?;
                let g2 = gate2.activate(g, x, h, read_a)?;
                let xg = g.mul(x, g1)?;
                let ag = g.mul(a, g2)?;
                a = g.add(xg, ag)?;
            }
            Ok(g.scale(a, F::ONE / F::from_f64(xs.len() as f64)))
        }
        EncoderKind::Gran5 => {
            let lstm = LstmNodes::bind(nodes, prefix)?;
            let hs = lstm.hidden_states(g, xs, config.hidden)?;
            let gate1 = GateNodes::bind::<F>(nodes, prefix, "gate1", false)?;
            let gate2 = GateNodes::bind::<F>(nodes, prefix, "gate2", false)?;
            let mut gated = Vec::with_capacity(xs.len());
            for (&x, &h) in xs.iter().zip(&hs) {
                let g1 = gate1.activate(g, x, h, None)?;
                let g2 = gate2.activate(g, x, h, None)?;
                let xg = g.mul(x, g1)?;
                let hg = g.mul(h, g2)?;
                gated.push(g.add(xg, hg)?);
            }
            g.mean_many(&gated)
        }
    }
}

/// Build the sentence embedding node for one token sequence. `masks`, when
/// present, are pre-scaled embedding-dropout masks applied to each
/// position's word vector.
pub fn sentence_node<F: Real>(
    g: &mut Graph<F>,
    nodes: &ParamNodes,
    config: &EncoderConfig,
    indices: &[usize],
    masks: Option<&[Tensor<F>]>,
) -> Result<ValueId> {
    let w_w = nodes.get(W_W)?;
    let xs = token_nodes(g, w_w, indices, masks)?;
    let fwd = direction_node(g, nodes, config, FWD_PREFIX, &xs)?;
    if !config.bidirectional {
        return Ok(fwd);
    }
    let reversed: Vec<ValueId> = xs.iter().rev().copied().collect();
    let bwd = direction_node(g, nodes, config, BWD_PREFIX, &reversed)?;
    match config.combine {
        CombineMode::Sum => g.add(fwd, bwd),
        CombineMode::TanhLayer => {
            let cat = g.concat(fwd, bwd)?;
            let w = nodes.get(COMB_W)?;
            let b = nodes.get(COMB_B)?;
            let pre = g.affine(w, cat, b)?;
            Ok(g.tanh(pre))
        }
    }
}
