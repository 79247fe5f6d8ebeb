//! Supervised similarity training: a small feedforward head over two
//! sentence embeddings, a sparse two-entry target distribution whose
//! expectation equals the gold score, and a KL-divergence objective.
//! Supports fresh initialization and warm-starting from a pretrained
//! checkpoint with regularization anchored back to those values.

use crate::autodiff::{Graph, ParamNodes, ParameterSet, ValueId};
use crate::encoders::{init_tensor, sentence_node, Encoder, EncoderConfig, W_W};
use crate::error::{Error, Result};
use crate::eval::pearson_r;
use crate::numeric::{self, seeded_permutation, Activation, RandomSource, Real, Tensor};
use crate::train::adam::{adam_step, OptimizerState};
use crate::train::augment::{scramble, word_dropout};
use crate::train::transfer::TrainConfig;
use crate::vocab::{EmbeddingTable, TokenSequence};

pub const HEAD_PREFIX: &str = "head.";

/// Guard inside the log of the KL term.
pub const KL_FLOOR: f64 = 1e-12;

/// A sentence pair with a gold similarity score in `[1, K]`.
#[derive(Debug, Clone)]
pub struct ScoredPair {
    pub s1: TokenSequence,
    pub s2: TokenSequence,
    pub gold: f64,
}

/// Similarity head weights: two projections of the pair features, then a
/// softmax over K score classes read out against `r = [1..K]`.
#[derive(Debug, Clone)]
pub struct HeadParams<F> {
    pub w_cross: Tensor<F>,
    pub w_plus: Tensor<F>,
    pub b_h: Tensor<F>,
    pub w_p: Tensor<F>,
    pub b_p: Tensor<F>,
}

impl<F: Real> HeadParams<F> {
    pub fn from_set(set: &ParameterSet<F>) -> Result<Self> {
        Ok(HeadParams {
            w_cross: set.get("head.w_cross")?.clone(),
            w_plus: set.get("head.w_plus")?.clone(),
            b_h: set.get("head.b_h")?.clone(),
            w_p: set.get("head.w_p")?.clone(),
            b_p: set.get("head.b_p")?.clone(),
        })
    }

    pub fn k(&self) -> usize {
        self.w_p.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w_cross.rows()
    }
}

/// Shapes of the head tensors for an embedding dimension, hidden size,
/// and score ceiling.
pub fn head_param_shapes(embed_dim: usize, hidden: usize, k: usize) -> Vec<(String, usize, usize)> {
    vec![
        ("head.w_cross".to_string(), hidden, embed_dim),
        ("head.w_plus".to_string(), hidden, embed_dim),
        ("head.b_h".to_string(), hidden, 1),
        ("head.w_p".to_string(), k, hidden),
        ("head.b_p".to_string(), k, 1),
    ]
}

/// Insert freshly initialized head tensors into a parameter set.
pub fn init_head_params<F: Real>(
    set: &mut ParameterSet<F>,
    embed_dim: usize,
    hidden: usize,
    k: usize,
    rng: &mut RandomSource,
) -> Result<()> {
    if k < 2 {
        return Err(Error::Config(format!("score ceiling K = {k} must be >= 2")));
    }
    if hidden == 0 {
        return Err(Error::Config("head hidden size must be > 0".to_string()));
    }
    for (name, rows, cols) in head_param_shapes(embed_dim, hidden, k) {
        set.insert(name, init_tensor(rows, cols, rng));
    }
    Ok(())
}

fn index_vector<F: Real>(k: usize) -> Tensor<F> {
    Tensor::vector((1..=k).map(|i| F::from_f64(i as f64)).collect())
}

/// Plain forward pass of the similarity head: returns the predicted
/// distribution over score classes and its expectation.
pub fn similarity_head<F: Real>(
    h_l: &Tensor<F>,
    h_r: &Tensor<F>,
    p: &HeadParams<F>,
) -> Result<(Tensor<F>, F)> {
    let h_cross = numeric::hadamard(h_l, h_r)?;
    let h_plus = numeric::sub(h_l, h_r)?.map(|x| x.abs());
    let mut pre = numeric::affine(&p.w_cross, &h_cross, &p.b_h)?;
    pre = numeric::add(&pre, &numeric::matvec(&p.w_plus, &h_plus)?)?;
    let h_s = numeric::elementwise(Activation::Sigmoid, &pre);
    let logits = numeric::affine(&p.w_p, &h_s, &p.b_p)?;
    let p_hat = numeric::softmax(&logits);
    let y_hat = numeric::dot(&index_vector::<F>(p.k()), &p_hat)?;
    Ok((p_hat, y_hat))
}

/// Tape version of the head. Returns the distribution node and the
/// expected-score node.
pub fn head_node<F: Real>(
    g: &mut Graph<F>,
    nodes: &ParamNodes,
    h_l: ValueId,
    h_r: ValueId,
) -> Result<(ValueId, ValueId)> {
    let w_cross = nodes.get("head.w_cross")?;
    let w_plus = nodes.get("head.w_plus")?;
    let b_h = nodes.get("head.b_h")?;
    let w_p = nodes.get("head.w_p")?;
    let b_p = nodes.get("head.b_p")?;

    let h_cross = g.mul(h_l, h_r)?;
    let d = g.sub(h_l, h_r)?;
    let h_plus = g.abs(d);
    let mut pre = g.affine(w_cross, h_cross, b_h)?;
    let plus_part = g.matvec(w_plus, h_plus)?;
    pre = g.add(pre, plus_part)?;
    let h_s = g.sigmoid(pre);
    let logits = g.affine(w_p, h_s, b_p)?;
    let p_hat = g.softmax(logits);
    let k = g.value(p_hat).rows();
    let r = g.constant(index_vector::<F>(k));
    let y_hat = g.dot(r, p_hat)?;
    Ok((p_hat, y_hat))
}

/// The sparse target distribution `p` over `1..=K` with `r . p = y`:
/// mass `floor(y) - y + 1` at `floor(y)` and the remainder at the next
/// class.
pub fn target_distribution(y: f64, k: usize) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(Error::Config(format!("score ceiling K = {k} must be >= 2")));
    }
    if !(1.0..=k as f64).contains(&y) {
        return Err(Error::Data(format!("score {y} outside [1, {k}]")));
    }
    let mut p = vec![0.0; k];
    let floor = y.floor() as usize;
    if floor == k {
        p[k - 1] = 1.0;
    } else {
        p[floor - 1] = floor as f64 - y + 1.0;
        p[floor] = y - floor as f64;
    }
    Ok(p)
}

/// KL(p || p_hat) for one pair as a node. Terms with `p_i = 0` contribute
/// nothing; the predicted side is floored inside the log.
pub fn kl_term_node<F: Real>(g: &mut Graph<F>, p_hat: ValueId, target: &[f64]) -> Result<ValueId> {
    if g.value(p_hat).len() != target.len() {
        return Err(Error::Dimension(format!(
            "target has {} classes, prediction {}",
            target.len(),
            g.value(p_hat).len()
        )));
    }
    let entropy: f64 = target
        .iter()
        .filter(|&&pi| pi > 0.0)
        .map(|&pi| pi * pi.ln())
        .sum();
    let log_pred = g.log_floored(p_hat, F::from_f64(KL_FLOOR));
    let p_const = g.constant(Tensor::vector(
        target.iter().map(|&v| F::from_f64(v)).collect(),
    ));
    let cross = g.dot(p_const, log_pred)?;
    let ent = g.scalar(F::from_f64(entropy));
    g.sub(ent, cross)
}

/// Mean KL divergence over scored pairs, with frozen parameters and no
/// perturbations. Regularization is the training loop's concern.
pub fn kl_loss<F: Real>(
    pairs: &[ScoredPair],
    k: usize,
    config: &EncoderConfig,
    params: &ParameterSet<F>,
) -> Result<F> {
    if pairs.is_empty() {
        return Err(Error::Data("no scored pairs".to_string()));
    }
    let mut g = Graph::new();
    let nodes = g.bind(params);
    let mut terms = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let h_l = sentence_node(&mut g, &nodes, config, &pair.s1.indices, None)?;
        let h_r = sentence_node(&mut g, &nodes, config, &pair.s2.indices, None)?;
        let (p_hat, _) = head_node(&mut g, &nodes, h_l, h_r)?;
        let target = target_distribution(pair.gold, k)?;
        terms.push(kl_term_node(&mut g, p_hat, &target)?);
    }
    let mean = g.mean_many(&terms)?;
    Ok(g.scalar_value(mean))
}

/// How supervised training is initialized.
pub enum InitMode<'a, F> {
    /// Word vectors from the embedding table, fresh encoder and head.
    Fresh,
    /// Encoder and word parameters from a pretrained checkpoint; the
    /// drift and L2 penalties anchor back to these values instead of the
    /// loaded vectors and zero.
    Universal(&'a ParameterSet<F>),
}

/// Anchors the regularizers pull toward.
pub(crate) struct Anchors<F> {
    pub(crate) w_w: Tensor<F>,
    /// Compositional anchor values; `None` anchors to zero.
    pub(crate) compositional: Option<ParameterSet<F>>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn supervised_objective_node<F: Real>(
    g: &mut Graph<F>,
    nodes: &ParamNodes,
    config: &EncoderConfig,
    batch: &[ScoredPair],
    masks: Option<&[Vec<Tensor<F>>]>,
    k: usize,
    lambda_c: f64,
    lambda_w: f64,
    anchors: &Anchors<F>,
) -> Result<ValueId> {
    let mut terms = Vec::with_capacity(batch.len());
    for (i, pair) in batch.iter().enumerate() {
        let m1 = masks.map(|ms| ms[2 * i].as_slice());
        let m2 = masks.map(|ms| ms[2 * i + 1].as_slice());
        let h_l = sentence_node(g, nodes, config, &pair.s1.indices, m1)?;
        let h_r = sentence_node(g, nodes, config, &pair.s2.indices, m2)?;
        let (p_hat, _) = head_node(g, nodes, h_l, h_r)?;
        let target = target_distribution(pair.gold, k)?;
        terms.push(kl_term_node(g, p_hat, &target)?);
    }
    let mut loss = g.mean_many(&terms)?;

    if lambda_c != 0.0 {
        let mut penalty_terms = Vec::new();
        if let Some(l2) = crate::train::transfer::l2_penalty_node(
            g,
            nodes,
            anchors.compositional.as_ref(),
        )? {
            penalty_terms.push(l2);
        }
        // the head always regularizes toward zero
        for (name, &id) in nodes.iter() {
            if name.starts_with(HEAD_PREFIX) {
                penalty_terms.push(g.sum_sq(id));
            }
        }
        if !penalty_terms.is_empty() {
            let total = g.sum_many(&penalty_terms)?;
            let scaled = g.scale(total, F::from_f64(lambda_c));
            loss = g.add(loss, scaled)?;
        }
    }
    if lambda_w != 0.0 {
        let drift = crate::train::transfer::drift_penalty_node(g, nodes, &anchors.w_w)?;
        let scaled = g.scale(drift, F::from_f64(lambda_w));
        loss = g.add(loss, scaled)?;
    }
    Ok(loss)
}

/// Result of a supervised run.
#[derive(Debug, Clone)]
pub struct SupervisedOutcome<F> {
    /// Parameters of the best dev epoch (final parameters when no dev
    /// set is given).
    pub params: ParameterSet<F>,
    pub train_losses: Vec<f64>,
    /// Dev Pearson per epoch; NaN when the dev predictions were constant.
    pub dev_pearson: Vec<f64>,
    pub best_epoch: Option<usize>,
}

/// Predicted scores for a set of pairs under frozen parameters.
pub fn predict_scores<F: Real>(
    pairs: &[ScoredPair],
    table: &EmbeddingTable<F>,
    config: &EncoderConfig,
    params: &ParameterSet<F>,
    add_sos: bool,
    add_eos: bool,
) -> Result<Vec<f64>> {
    let encoder = Encoder::from_set(*config, params)?;
    let head = HeadParams::from_set(params)?;
    let w_w = params.get(W_W)?;
    let mut out = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let s1 = pair.s1.with_tags(table, add_sos, add_eos);
        let s2 = pair.s2.with_tags(table, add_sos, add_eos);
        let h_l = encoder.encode(&s1, w_w)?;
        let h_r = encoder.encode(&s2, w_w)?;
        let (_, y_hat) = similarity_head(&h_l, &h_r, &head)?;
        out.push(y_hat.to_f64());
    }
    Ok(out)
}

/// Train the similarity head (and encoder) on scored pairs with Adam on
/// the KL objective. Model selection keeps the epoch with the best dev
/// Pearson.
#[allow(clippy::too_many_arguments)]
pub fn train_supervised<F: Real>(
    train: &[ScoredPair],
    dev: &[ScoredPair],
    table: &EmbeddingTable<F>,
    config: &EncoderConfig,
    head_hidden: usize,
    k: usize,
    tcfg: &TrainConfig,
    init: InitMode<'_, F>,
) -> Result<SupervisedOutcome<F>> {
    if train.is_empty() {
        return Err(Error::Data("empty training set".to_string()));
    }
    config.validate()?;
    tcfg.validate()?;
    for pair in train.iter().chain(dev) {
        if !(1.0..=k as f64).contains(&pair.gold) {
            return Err(Error::Data(format!(
                "gold score {} outside [1, {k}]",
                pair.gold
            )));
        }
    }

    let mut rng = RandomSource::new(tcfg.seed);
    let mut params;
    let anchors;
    match init {
        InitMode::Fresh => {
            params = crate::encoders::init_params_with(config, table, &mut rng)?;
            anchors = Anchors {
                w_w: table.w_w_initial.clone(),
                compositional: None,
            };
        }
        InitMode::Universal(checkpoint) => {
            // all encoder and word tensors come from the checkpoint and
            // the penalties anchor back to them
            params = ParameterSet::new();
            params.insert(W_W, checkpoint.get(W_W)?.clone());
            for (name, rows, cols) in crate::encoders::encoder_param_shapes(config) {
                let t = checkpoint.get(&name)?;
                if t.rows() != rows || t.cols() != cols {
                    return Err(Error::Config(format!(
                        "checkpoint tensor `{name}` has shape {}x{}, expected {rows}x{cols}",
                        t.rows(),
                        t.cols()
                    )));
                }
                params.insert(name, t.clone());
            }
            anchors = Anchors {
                w_w: checkpoint.get(W_W)?.clone(),
                compositional: Some(params.clone()),
            };
        }
    }
    init_head_params(&mut params, config.embedding_dim(), head_hidden, k, &mut rng)?;

    let mut state = OptimizerState::new(&params);
    let mut train_losses = Vec::with_capacity(tcfg.epochs);
    let mut dev_pearson = Vec::with_capacity(tcfg.epochs);
    let mut best: Option<(usize, f64, ParameterSet<F>)> = None;

    for epoch in 0..tcfg.epochs {
        let order = seeded_permutation(train.len(), &mut rng);
        let mut loss_weighted = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(tcfg.batch_size) {
            let mut batch: Vec<ScoredPair> =
                chunk.iter().map(|&i| train[i].clone()).collect();
            // same perturbation pipeline as the transfer setting
            {
                let mut as_pairs: Vec<(TokenSequence, TokenSequence)> = batch
                    .iter()
                    .map(|p| (p.s1.clone(), p.s2.clone()))
                    .collect();
                scramble(&mut as_pairs, tcfg.scramble_rate, &mut rng);
                if tcfg.word_dropout_rate > 0.0 {
                    for (s1, s2) in as_pairs.iter_mut() {
                        *s1 = word_dropout(s1, tcfg.word_dropout_rate, &mut rng);
                        *s2 = word_dropout(s2, tcfg.word_dropout_rate, &mut rng);
                    }
                }
                for (pair, (s1, s2)) in batch.iter_mut().zip(as_pairs) {
                    pair.s1 = s1.with_tags(table, tcfg.add_sos, tcfg.add_eos);
                    pair.s2 = s2.with_tags(table, tcfg.add_sos, tcfg.add_eos);
                }
            }
            let masks = if tcfg.dropout_rate > 0.0 {
                let mut all = Vec::with_capacity(batch.len() * 2);
                for pair in &batch {
                    for seq in [&pair.s1, &pair.s2] {
                        let ms = (0..seq.len())
                            .map(|_| {
                                crate::train::augment::dropout_mask(
                                    table.dim,
                                    tcfg.dropout_rate,
                                    &mut rng,
                                )
                            })
                            .collect::<Result<Vec<_>>>()?;
                        all.push(ms);
                    }
                }
                Some(all)
            } else {
                None
            };

            let mut g = Graph::new();
            let nodes = g.bind(&params);
            let loss = supervised_objective_node(
                &mut g,
                &nodes,
                config,
                &batch,
                masks.as_deref(),
                k,
                tcfg.lambda_c,
                tcfg.lambda_w,
                &anchors,
            )?;
            let value = g.scalar_value(loss);
            if !value.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite batch loss {value} at optimizer step {}",
                    state.step() + 1
                )));
            }
            let grads = g.backward(loss)?;
            let grad_set = nodes.gradients(&grads);
            adam_step(&mut params, &grad_set, &mut state, &tcfg.adam)?;
            loss_weighted += value.to_f64() * batch.len() as f64;
            seen += batch.len();
        }
        train_losses.push(loss_weighted / seen as f64);

        if !dev.is_empty() {
            let preds = predict_scores(dev, table, config, &params, tcfg.add_sos, tcfg.add_eos)?;
            let golds: Vec<f64> = dev.iter().map(|p| p.gold).collect();
            let r = pearson_r(&preds, &golds).unwrap_or(f64::NAN);
            dev_pearson.push(r);
            let better = match &best {
                Some((_, best_r, _)) => r > *best_r,
                None => !r.is_nan(),
            };
            if better {
                best = Some((epoch, r, params.clone()));
            }
        }
    }

    let (params, best_epoch) = match best {
        Some((epoch, _, best_params)) => (best_params, Some(epoch)),
        None => (params, None),
    };
    Ok(SupervisedOutcome {
        params,
        train_losses,
        dev_pearson,
        best_epoch,
    })
}
