//! Margin-based contrastive training over noisy paraphrase pairs:
//! mini-batching, in-batch negative selection, the regularization suite,
//! and Adam updates.

use crate::autodiff::{Graph, ParamNodes, ParameterSet, ValueId};
use crate::encoders::{sentence_node, Encoder, EncoderConfig, W_W};
use crate::error::{Error, Result};
use crate::numeric::{self, seeded_permutation, RandomSource, Real, Tensor};
use crate::train::adam::{adam_step, AdamConfig, OptimizerState};
use crate::train::augment::{dropout_mask, scramble, word_dropout};
use crate::vocab::{EmbeddingTable, TokenSequence};

/// A mini-batch of sentence pairs. Negatives, once selected, are flat
/// sentence indices (`2 * pair + side`) pointing at other pairs' sentences
/// within the same batch.
#[derive(Debug, Clone)]
pub struct PairBatch {
    pub pairs: Vec<(TokenSequence, TokenSequence)>,
    pub negatives: Option<Vec<(usize, usize)>>,
}

impl PairBatch {
    pub fn new(pairs: Vec<(TokenSequence, TokenSequence)>) -> Self {
        PairBatch {
            pairs,
            negatives: None,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Sentence by flat index: even indices are first sentences, odd are
    /// second sentences.
    pub fn sentence(&self, flat: usize) -> &TokenSequence {
        let (pair, side) = (flat / 2, flat % 2);
        if side == 0 {
            &self.pairs[pair].0
        } else {
            &self.pairs[pair].1
        }
    }
}

/// Argmax negative selection over a flat list of batch embeddings. For
/// pair `i`, the candidate pool is every sentence of every other pair
/// (both columns); ties break toward the lowest flat index.
pub fn pick_negatives<F: Real>(embeddings: &[Tensor<F>]) -> Result<Vec<(usize, usize)>> {
    let n = embeddings.len() / 2;
    if n < 2 {
        return Err(Error::Data("no negative candidates".to_string()));
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let pick = |anchor: usize| -> Result<usize> {
            let mut best = usize::MAX;
            let mut best_cos = f64::NEG_INFINITY;
            for (j, cand) in embeddings.iter().enumerate() {
                if j / 2 == i {
                    continue;
                }
                let c = numeric::cosine(&embeddings[anchor], cand)?.to_f64();
                if c > best_cos {
                    best_cos = c;
                    best = j;
                }
            }
            Ok(best)
        };
        out.push((pick(2 * i)?, pick(2 * i + 1)?));
    }
    Ok(out)
}

/// Select in-batch negatives under frozen parameters (no perturbations).
/// The training loop instead selects from its own perturbed embeddings.
pub fn select_negatives<F: Real>(
    batch: &PairBatch,
    encoder: &Encoder<F>,
    w_w: &Tensor<F>,
) -> Result<Vec<(usize, usize)>> {
    let mut embeddings = Vec::with_capacity(batch.len() * 2);
    for flat in 0..batch.len() * 2 {
        embeddings.push(encoder.encode(batch.sentence(flat), w_w)?);
    }
    pick_negatives(&embeddings)
}

/// Names of the compositional parameters (everything but the word matrix
/// and the similarity head): the set the L2 penalty covers.
fn compositional_names(nodes: &ParamNodes) -> Vec<String> {
    nodes
        .iter()
        .map(|(name, _)| name.clone())
        .filter(|name| name != W_W && !name.starts_with("head."))
        .collect()
}

/// Sum of squared entries over the compositional parameters.
pub(crate) fn l2_penalty_node<F: Real>(
    g: &mut Graph<F>,
    nodes: &ParamNodes,
    anchors: Option<&ParameterSet<F>>,
) -> Result<Option<ValueId>> {
    let mut terms = Vec::new();
    for name in compositional_names(nodes) {
        let id = nodes.get(&name)?;
        let target = match anchors {
            Some(a) => {
                let anchor = g.constant(a.get(&name)?.clone());
                g.sub(id, anchor)?
            }
            None => id,
        };
        terms.push(g.sum_sq(target));
    }
    if terms.is_empty() {
        return Ok(None);
    }
    Ok(Some(g.sum_many(&terms)?))
}

/// `||anchor - w_w||^2` as a node.
pub(crate) fn drift_penalty_node<F: Real>(
    g: &mut Graph<F>,
    nodes: &ParamNodes,
    anchor: &Tensor<F>,
) -> Result<ValueId> {
    let w_w = nodes.get(W_W)?;
    let init = g.constant(anchor.clone());
    let diff = g.sub(init, w_w)?;
    Ok(g.sum_sq(diff))
}

/// Embedding nodes for every batch sentence in flat order, with optional
/// per-sentence embedding-dropout masks.
pub(crate) fn batch_embedding_nodes<F: Real>(
    g: &mut Graph<F>,
    nodes: &ParamNodes,
    config: &EncoderConfig,
    batch: &PairBatch,
    masks: Option<&[Vec<Tensor<F>>]>,
) -> Result<Vec<ValueId>> {
    let mut out = Vec::with_capacity(batch.len() * 2);
    for flat in 0..batch.len() * 2 {
        let seq = batch.sentence(flat);
        let m = masks.map(|ms| ms[flat].as_slice());
        out.push(sentence_node(g, nodes, config, &seq.indices, m)?);
    }
    Ok(out)
}

/// The margin objective over already-built embeddings:
/// mean over pairs of both hinges, plus the L2 and drift penalties.
#[allow(clippy::too_many_arguments)]
pub(crate) fn margin_objective_node<F: Real>(
    g: &mut Graph<F>,
    nodes: &ParamNodes,
    embeddings: &[ValueId],
    negatives: &[(usize, usize)],
    delta: f64,
    lambda_c: f64,
    lambda_w: f64,
    w_w_initial: &Tensor<F>,
) -> Result<ValueId> {
    let n = embeddings.len() / 2;
    if negatives.len() != n {
        return Err(Error::Dimension(format!(
            "{} negative pairs for {n} batch pairs",
            negatives.len()
        )));
    }
    let delta_node = g.scalar(F::from_f64(delta));
    let mut hinges = Vec::with_capacity(2 * n);
    for (i, &(t1, t2)) in negatives.iter().enumerate() {
        let e1 = embeddings[2 * i];
        let e2 = embeddings[2 * i + 1];
        let cos12 = g.cosine(e1, e2)?;
        for (anchor, neg) in [(e1, t1), (e2, t2)] {
            let cos_neg = g.cosine(anchor, embeddings[neg])?;
            let gap = g.add(delta_node, cos_neg)?;
            let pre = g.sub(gap, cos12)?;
            hinges.push(g.relu(pre));
        }
    }
    let total = g.sum_many(&hinges)?;
    let mut loss = g.scale(total, F::ONE / F::from_f64(n as f64));
    if lambda_c != 0.0 {
        if let Some(l2) = l2_penalty_node(g, nodes, None)? {
            let scaled = g.scale(l2, F::from_f64(lambda_c));
            loss = g.add(loss, scaled)?;
        }
    }
    if lambda_w != 0.0 {
        let drift = drift_penalty_node(g, nodes, w_w_initial)?;
        let scaled = g.scale(drift, F::from_f64(lambda_w));
        loss = g.add(loss, scaled)?;
    }
    Ok(loss)
}

/// Margin loss of a batch whose negatives are already selected, evaluated
/// with frozen parameters and no perturbations.
pub fn margin_loss<F: Real>(
    batch: &PairBatch,
    delta: f64,
    lambda_c: f64,
    lambda_w: f64,
    config: &EncoderConfig,
    params: &ParameterSet<F>,
    w_w_initial: &Tensor<F>,
) -> Result<F> {
    let negatives = batch
        .negatives
        .as_ref()
        .ok_or_else(|| Error::Data("negatives not selected".to_string()))?;
    let mut g = Graph::new();
    let nodes = g.bind(params);
    let embeddings = batch_embedding_nodes(&mut g, &nodes, config, batch, None)?;
    let loss = margin_objective_node(
        &mut g,
        &nodes,
        &embeddings,
        negatives,
        delta,
        lambda_c,
        lambda_w,
        w_w_initial,
    )?;
    Ok(g.scalar_value(loss))
}

/// Hyperparameters of the contrastive training procedure.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub delta: f64,
    pub lambda_c: f64,
    pub lambda_w: f64,
    pub dropout_rate: f64,
    pub word_dropout_rate: f64,
    pub scramble_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub add_sos: bool,
    pub add_eos: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            delta: 0.4,
            lambda_c: 0.0,
            lambda_w: 0.0,
            dropout_rate: 0.0,
            word_dropout_rate: 0.0,
            scramble_rate: 0.0,
            epochs: 3,
            batch_size: 100,
            adam: AdamConfig::default(),
            seed: 1,
            add_sos: false,
            add_eos: false,
        }
    }
}

impl TrainConfig {
    /// Hard errors for impossible values; warnings for values outside the
    /// usual tuning grids (accepted, grids are defaults not constraints).
    pub fn validate(&self) -> Result<Vec<String>> {
        for (name, rate) in [
            ("word_dropout_rate", self.word_dropout_rate),
            ("scramble_rate", self.scramble_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Config(format!("{name} {rate} outside [0, 1]")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".to_string()));
        }
        let mut warnings = Vec::new();
        if ![0.4, 0.6, 0.8].contains(&self.delta) {
            warnings.push(format!(
                "margin delta {} is outside the usual grid {{0.4, 0.6, 0.8}}",
                self.delta
            ));
        }
        Ok(warnings)
    }
}

/// Result of a transfer training run.
#[derive(Debug, Clone)]
pub struct TransferOutcome<F> {
    pub params: ParameterSet<F>,
    /// Mean per-pair batch loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Embedding-dropout masks for every sentence of the batch in flat order,
/// one pre-scaled mask per token position.
fn batch_masks<F: Real>(
    batch: &PairBatch,
    dim: usize,
    rate: f64,
    rng: &mut RandomSource,
) -> Result<Option<Vec<Vec<Tensor<F>>>>> {
    if rate == 0.0 {
        return Ok(None);
    }
    let mut all = Vec::with_capacity(batch.len() * 2);
    for flat in 0..batch.len() * 2 {
        let seq = batch.sentence(flat);
        let masks = (0..seq.len())
            .map(|_| dropout_mask(dim, rate, rng))
            .collect::<Result<Vec<_>>>()?;
        all.push(masks);
    }
    Ok(Some(all))
}

/// One optimization step over a prepared batch. Returns the batch loss.
fn train_batch<F: Real>(
    batch: &mut PairBatch,
    table: &EmbeddingTable<F>,
    config: &EncoderConfig,
    tcfg: &TrainConfig,
    params: &mut ParameterSet<F>,
    state: &mut OptimizerState<F>,
    rng: &mut RandomSource,
) -> Result<f64> {
    scramble(&mut batch.pairs, tcfg.scramble_rate, rng);
    if tcfg.word_dropout_rate > 0.0 {
        for (s1, s2) in batch.pairs.iter_mut() {
            *s1 = word_dropout(s1, tcfg.word_dropout_rate, rng);
            *s2 = word_dropout(s2, tcfg.word_dropout_rate, rng);
        }
    }
    if tcfg.add_sos || tcfg.add_eos {
        for (s1, s2) in batch.pairs.iter_mut() {
            *s1 = s1.with_tags(table, tcfg.add_sos, tcfg.add_eos);
            *s2 = s2.with_tags(table, tcfg.add_sos, tcfg.add_eos);
        }
    }
    let masks = batch_masks::<F>(batch, table.dim, tcfg.dropout_rate, rng)?;

    let mut g = Graph::new();
    let nodes = g.bind(params);
    let embeddings = batch_embedding_nodes(&mut g, &nodes, config, batch, masks.as_deref())?;
    let values: Vec<Tensor<F>> = embeddings.iter().map(|&id| g.value(id).clone()).collect();
    let negatives = pick_negatives(&values)?;
    batch.negatives = Some(negatives.clone());

    let loss = margin_objective_node(
        &mut g,
        &nodes,
        &embeddings,
        &negatives,
        tcfg.delta,
        tcfg.lambda_c,
        tcfg.lambda_w,
        &table.w_w_initial,
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
    adam_step(params, &grad_set, state, &tcfg.adam)?;
    Ok(value.to_f64())
}

/// Train with the margin objective. `pairs` are encoded token sequences
/// without boundary tags; tags are attached per batch according to the
/// configuration. Returns the trained parameters and per-epoch mean
/// losses.
pub fn train_transfer<F: Real>(
    pairs: &[(TokenSequence, TokenSequence)],
    table: &EmbeddingTable<F>,
    config: &EncoderConfig,
    tcfg: &TrainConfig,
    mut params: ParameterSet<F>,
) -> Result<TransferOutcome<F>> {
    if pairs.len() < 2 {
        return Err(Error::Data(
            "corpus must contain at least 2 pairs".to_string(),
        ));
    }
    config.validate()?;
    tcfg.validate()?;
    let mut rng = RandomSource::new(tcfg.seed);
    let mut state = OptimizerState::new(&params);
    let mut epoch_losses = Vec::with_capacity(tcfg.epochs);

    for _ in 0..tcfg.epochs {
        let order = seeded_permutation(pairs.len(), &mut rng);
        let mut loss_weighted = 0.0;
        let mut pairs_seen = 0usize;
        for chunk in order.chunks(tcfg.batch_size) {
            // final partial batch is kept only if it can still supply
            // negatives
            if chunk.len() < 2 {
                continue;
            }
            let mut batch = PairBatch::new(
                chunk
                    .iter()
                    .map(|&i| (pairs[i].0.clone(), pairs[i].1.clone()))
                    .collect(),
            );
            let loss = train_batch(
                &mut batch, table, config, tcfg, &mut params, &mut state, &mut rng,
            )?;
            loss_weighted += loss * chunk.len() as f64;
            pairs_seen += chunk.len();
        }
        epoch_losses.push(loss_weighted / pairs_seen as f64);
    }
    Ok(TransferOutcome {
        params,
        epoch_losses,
    })
}
