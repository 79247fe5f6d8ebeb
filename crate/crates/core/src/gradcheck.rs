//! Central finite-difference oracle for certifying reverse-mode gradients.
//!
//! The oracle never touches the backward pass: it re-evaluates the loss
//! forward at perturbed parameter vectors, always in 64-bit floats.
//! Coordinates whose perturbation straddles a hinge or absolute-value kink
//! are excluded from pass/fail, detected by comparing the sign pattern of
//! all kink-node inputs between the two perturbed evaluations.
//!
//! Central differences at step h carry a noise floor of roughly
//! `eps * |f| / h + h^2 * |f'''|`, about 1e-11 here. Coordinates whose
//! gradient sits within 1e-6 of that floor therefore cannot be certified
//! to a relative tolerance; they are instead held to a tight absolute
//! agreement and tallied separately in the report.

use crate::autodiff::{self, Graph, ParamNodes, ParameterSet, ValueId};
use crate::error::Result;
use crate::numeric::{seeded_permutation, RandomSource};

#[derive(Debug, Clone)]
pub struct FdOptions {
    /// Central-difference step.
    pub step: f64,
    /// Check at most this many coordinates; 0 checks all. When the model
    /// has more coordinates than the cap, a seeded random subsample of
    /// this size is drawn.
    pub max_coords: usize,
    /// Kink proximity threshold.
    pub kink_tol: f64,
    /// Gradients below this magnitude are compared absolutely instead of
    /// relatively.
    pub grad_floor: f64,
    /// Absolute tolerance for below-floor coordinates.
    pub small_abs_tol: f64,
    /// Seed for the coordinate subsample.
    pub subsample_seed: u64,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions {
            step: 1e-5,
            max_coords: 200,
            kink_tol: 1e-6,
            grad_floor: 1e-6,
            small_abs_tol: 1e-9,
            subsample_seed: 0,
        }
    }
}

/// Worst coordinate of one named tensor.
#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub kinks: usize,
    /// Coordinates below the gradient floor, held to absolute agreement.
    pub small: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// Outcome of a finite-difference sweep.
#[derive(Debug, Clone, Default)]
pub struct GradReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_err: f64,
    pub coords_checked: usize,
    pub kinks_skipped: usize,
    pub small_checked: usize,
    pub max_small_abs_err: f64,
    /// Absolute tolerance the below-floor coordinates were held to.
    pub small_abs_tol: f64,
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol && self.max_small_abs_err < self.small_abs_tol
    }

    /// Fold another report in, keeping per-tensor worst cases.
    pub fn merge(&mut self, other: GradReport) {
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.coords_checked += other.coords_checked;
        self.kinks_skipped += other.kinks_skipped;
        self.small_checked += other.small_checked;
        self.max_small_abs_err = self.max_small_abs_err.max(other.max_small_abs_err);
        self.small_abs_tol = if self.small_abs_tol == 0.0 {
            other.small_abs_tol
        } else {
            self.small_abs_tol.min(other.small_abs_tol)
        };
        for tc in other.tensors {
            match self.tensors.iter_mut().find(|t| t.name == tc.name) {
                Some(mine) => {
                    mine.checked += tc.checked;
                    mine.kinks += tc.kinks;
                    mine.small += tc.small;
                    if tc.max_rel_err > mine.max_rel_err {
                        mine.max_rel_err = tc.max_rel_err;
                        mine.worst_index = tc.worst_index;
                        mine.worst_analytic = tc.worst_analytic;
                        mine.worst_numeric = tc.worst_numeric;
                    }
                }
                None => self.tensors.push(tc),
            }
        }
        self.tensors.sort_by(|a, b| a.name.cmp(&b.name));
    }

    /// Aligned-column table, one row per tensor plus a total line.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let name_w = self
            .tensors
            .iter()
            .map(|t| t.name.len())
            .max()
            .unwrap_or(6)
            .max("tensor".len());
        out.push_str(&format!(
            "{:<name_w$}  {:>7}  {:>5}  {:>5}  {:>12}  {:>6}  {:>14}  {:>14}\n",
            "tensor", "checked", "kinks", "small", "max_rel_err", "worst", "analytic", "numeric"
        ));
        for t in &self.tensors {
            out.push_str(&format!(
                "{:<name_w$}  {:>7}  {:>5}  {:>5}  {:>12.3e}  {:>6}  {:>14.6e}  {:>14.6e}\n",
                t.name,
                t.checked,
                t.kinks,
                t.small,
                t.max_rel_err,
                t.worst_index,
                t.worst_analytic,
                t.worst_numeric
            ));
        }
        out.push_str(&format!(
            "{:<name_w$}  {:>7}  {:>5}  {:>5}  {:>12.3e}  (small abs err {:.3e})\n",
            "total",
            self.coords_checked,
            self.kinks_skipped,
            self.small_checked,
            self.max_rel_err,
            self.max_small_abs_err
        ));
        out
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

fn kink_hit(plus: &[f64], minus: &[f64], tol: f64) -> bool {
    plus.iter()
        .zip(minus)
        .any(|(&p, &m)| (p > 0.0) != (m > 0.0) || p.abs() < tol || m.abs() < tol)
}

/// Compare analytic reverse-mode gradients against central differences
/// `(f(x + h e_i) - f(x - h e_i)) / 2h` per coordinate.
pub fn fd_check(
    params: &ParameterSet<f64>,
    build: impl Fn(&mut Graph<f64>, &ParamNodes) -> Result<ValueId>,
    opts: &FdOptions,
) -> Result<GradReport> {
    let (_, analytic) = autodiff::grad(params, &build)?;
    let flat = params.flatten();
    let analytic_flat = analytic.flatten();
    let total = flat.len();

    let coords: Vec<usize> = if opts.max_coords > 0 && total > opts.max_coords {
        let mut rng = RandomSource::new(opts.subsample_seed);
        let mut perm = seeded_permutation(total, &mut rng);
        perm.truncate(opts.max_coords);
        perm.sort_unstable();
        perm
    } else {
        (0..total).collect()
    };

    let mut report = GradReport {
        small_abs_tol: opts.small_abs_tol,
        ..GradReport::default()
    };
    let mut work = flat.clone();
    for &i in &coords {
        work[i] = flat[i] + opts.step;
        let theta_plus = params.unflatten(&work)?;
        let (f_plus, kinks_plus) = autodiff::eval_loss(&theta_plus, &build)?;
        work[i] = flat[i] - opts.step;
        let theta_minus = params.unflatten(&work)?;
        let (f_minus, kinks_minus) = autodiff::eval_loss(&theta_minus, &build)?;
        work[i] = flat[i];

        let (name, idx) = params
            .locate(i)
            .expect("coordinate within parameter layout");
        let entry = match report.tensors.iter_mut().position(|t| t.name == name) {
            Some(at) => &mut report.tensors[at],
            None => {
                report.tensors.push(TensorCheck {
                    name: name.to_string(),
                    checked: 0,
                    kinks: 0,
                    small: 0,
                    max_rel_err: 0.0,
                    worst_index: 0,
                    worst_analytic: 0.0,
                    worst_numeric: 0.0,
                });
                report.tensors.last_mut().unwrap()
            }
        };

        if kink_hit(&kinks_plus, &kinks_minus, opts.kink_tol) {
            entry.kinks += 1;
            report.kinks_skipped += 1;
            continue;
        }

        let numeric = (f_plus - f_minus) / (2.0 * opts.step);
        let a = analytic_flat[i];
        if a.abs().max(numeric.abs()) < opts.grad_floor {
            entry.small += 1;
            report.small_checked += 1;
            report.max_small_abs_err = report.max_small_abs_err.max((a - numeric).abs());
            continue;
        }
        let err = rel_err(a, numeric);
        entry.checked += 1;
        report.coords_checked += 1;
        if err >= entry.max_rel_err {
            entry.max_rel_err = err;
            entry.worst_index = idx;
            entry.worst_analytic = a;
            entry.worst_numeric = numeric;
        }
        report.max_rel_err = report.max_rel_err.max(err);
    }
    report.tensors.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Tensor;

    #[test]
    fn quadratic_is_exact_under_central_differences() {
        let mut params = ParameterSet::new();
        params.insert("x", Tensor::scalar(3.0f64));
        let report = fd_check(
            &params,
            |g, p| {
                let x = p.get("x")?;
                g.mul(x, x)
            },
            &FdOptions::default(),
        )
        .unwrap();
        let t = &report.tensors[0];
        assert!((t.worst_numeric - 6.0).abs() < 1e-9);
        assert!(report.max_rel_err < 1e-8);
        assert!(report.passes(1e-4));
    }

    #[test]
    fn tanh_matches_hand_derivative() {
        let mut params = ParameterSet::new();
        params.insert("x", Tensor::scalar(1.0f64));
        let report = fd_check(
            &params,
            |g, p| {
                let x = p.get("x")?;
                Ok(g.tanh(x))
            },
            &FdOptions::default(),
        )
        .unwrap();
        let expect = 1.0 - (1.0f64).tanh().powi(2);
        assert!((report.tensors[0].worst_numeric - expect).abs() < 1e-9);
        assert!(report.max_rel_err < 1e-8);
    }

    #[test]
    fn sigmoid_numeric_value() {
        let mut params = ParameterSet::new();
        params.insert("x", Tensor::scalar(1.0f64));
        let report = fd_check(
            &params,
            |g, p| {
                let x = p.get("x")?;
                Ok(g.sigmoid(x))
            },
            &FdOptions::default(),
        )
        .unwrap();
        let s = (1.0f64).exp() / (1.0 + (1.0f64).exp());
        assert!((report.tensors[0].worst_numeric - s * (1.0 - s)).abs() < 1e-9);
    }

    #[test]
    fn hinge_at_kink_is_flagged_and_excluded() {
        // max(0, 0.4 - x) at x = 0.4 sits exactly on the kink
        let mut params = ParameterSet::new();
        params.insert("x", Tensor::scalar(0.4f64));
        let report = fd_check(
            &params,
            |g, p| {
                let x = p.get("x")?;
                let c = g.scalar(0.4);
                let d = g.sub(c, x)?;
                Ok(g.relu(d))
            },
            &FdOptions::default(),
        )
        .unwrap();
        assert_eq!(report.kinks_skipped, 1);
        assert_eq!(report.coords_checked, 0);
        assert!(report.passes(1e-4));
    }

    #[test]
    fn hinge_away_from_kink_checks_normally() {
        let mut params = ParameterSet::new();
        params.insert("x", Tensor::scalar(0.0f64));
        let report = fd_check(
            &params,
            |g, p| {
                let x = p.get("x")?;
                let c = g.scalar(0.4);
                let d = g.sub(c, x)?;
                Ok(g.relu(d))
            },
            &FdOptions::default(),
        )
        .unwrap();
        assert_eq!(report.kinks_skipped, 0);
        assert!((report.tensors[0].worst_numeric - (-1.0)).abs() < 1e-9);
        assert!(report.passes(1e-4));
    }

    #[test]
    fn subsample_respects_cap() {
        let mut params = ParameterSet::new();
        params.insert("v", Tensor::vector(vec![0.1f64; 500]));
        let opts = FdOptions {
            max_coords: 50,
            ..FdOptions::default()
        };
        let report = fd_check(
            &params,
            |g, p| {
                let v = p.get("v")?;
                Ok(g.sum_sq(v))
            },
            &opts,
        )
        .unwrap();
        assert_eq!(report.coords_checked, 50);
        assert!(report.passes(1e-4));
    }

    #[test]
    fn report_table_renders() {
        let mut params = ParameterSet::new();
        params.insert("x", Tensor::scalar(2.0f64));
        let report = fd_check(
            &params,
            |g, p| {
                let x = p.get("x")?;
                g.mul(x, x)
            },
            &FdOptions::default(),
        )
        .unwrap();
        let table = report.render_table();
        assert!(table.contains("tensor"));
        assert!(table.contains("total"));
        assert!(table.lines().count() >= 3);
    }
}

// ---------------------------------------------------------------------------
// Certification harness: random small instances of every encoder and both
// objectives, checked end to end against the oracle.
// ---------------------------------------------------------------------------

use crate::encoders::{
    init_params_with, CombineMode, EncoderConfig, EncoderKind,
};
use crate::error::Error;
use crate::train::supervised::{init_head_params, supervised_objective_node, Anchors, ScoredPair};
use crate::train::transfer::{margin_objective_node, pick_negatives, PairBatch};
use crate::vocab::{EmbeddingTable, TokenSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Margin,
    Kl,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "margin" => LossKind::Margin,
            "kl" => LossKind::Kl,
            other => {
                return Err(Error::Config(format!(
                    "unknown loss `{other}` (expected margin or kl)"
                )))
            }
        })
    }
}

/// Size limits for the random instances.
#[derive(Debug, Clone, Copy)]
pub struct HarnessDims {
    pub dim: usize,
    pub max_len: usize,
    pub max_pairs: usize,
    pub vocab: usize,
}

impl Default for HarnessDims {
    fn default() -> Self {
        HarnessDims {
            dim: 6,
            max_len: 6,
            max_pairs: 4,
            vocab: 9,
        }
    }
}

fn random_table(dims: &HarnessDims, rng: &mut RandomSource) -> Result<EmbeddingTable<f64>> {
    let mut text = String::new();
    for w in 0..dims.vocab {
        text.push_str(&format!("tok{w}"));
        for _ in 0..dims.dim {
            text.push_str(&format!(" {}", rng.uniform(-0.8, 0.8)));
        }
        text.push('\n');
    }
    let (table, _) = EmbeddingTable::load(text.as_bytes(), rng.next_u64())?;
    Ok(table)
}

fn random_sequence(
    table: &EmbeddingTable<f64>,
    max_len: usize,
    tags: bool,
    rng: &mut RandomSource,
) -> TokenSequence {
    let len = 1 + rng.below(max_len as u64) as usize;
    let indices: Vec<usize> = (0..len)
        .map(|_| rng.below(table.rows() as u64) as usize)
        .collect();
    let seq = TokenSequence {
        surface: indices.iter().map(|&i| table.token(i).to_string()).collect(),
        indices,
    };
    if tags {
        seq.with_tags(table, true, true)
    } else {
        seq
    }
}

/// Run `instances` random finite-difference certifications of one
/// encoder/objective combination and fold the reports together.
pub fn certify(
    kind: EncoderKind,
    bidirectional: bool,
    loss: LossKind,
    dims: &HarnessDims,
    instances: usize,
    seed: u64,
    opts: &FdOptions,
) -> Result<GradReport> {
    let mut rng = RandomSource::new(seed);
    let mut merged = GradReport::default();
    for instance in 0..instances {
        let mut config = EncoderConfig::new(kind, dims.dim);
        config.bidirectional = bidirectional;
        // alternate the combiner and exercise a hidden size different
        // from the word dimension where the architecture allows it
        config.combine = if instance % 2 == 0 {
            CombineMode::Sum
        } else {
            CombineMode::TanhLayer
        };
        if kind != EncoderKind::Gran5 && kind.is_recurrent() && instance % 2 == 1 {
            config.hidden = dims.dim + 1;
        }
        let tags = instance % 2 == 1;
        let table = random_table(dims, &mut rng)?;
        let mut params = init_params_with(&config, &table, &mut rng)?;
        let delta = [0.4, 0.6, 0.8][instance % 3];
        let lambda_c = 1e-3;
        let lambda_w = 1e-2;

        let report = match loss {
            LossKind::Margin => {
                let n_pairs = 2 + rng.below(dims.max_pairs.max(3) as u64 - 1) as usize;
                let pairs: Vec<(TokenSequence, TokenSequence)> = (0..n_pairs)
                    .map(|_| {
                        (
                            random_sequence(&table, dims.max_len, tags, &mut rng),
                            random_sequence(&table, dims.max_len, tags, &mut rng),
                        )
                    })
                    .collect();
                params.randomize(&mut rng, 0.5);
                let batch = PairBatch::new(pairs);
                // negatives are frozen at the base point: the selection is
                // a discrete argmax and carries no gradient
                let negatives = {
                    let mut g = Graph::new();
                    let nodes = g.bind(&params);
                    let embs = crate::train::transfer::batch_embedding_nodes(
                        &mut g, &nodes, &config, &batch, None,
                    )?;
                    let values: Vec<_> = embs.iter().map(|&id| g.value(id).clone()).collect();
                    pick_negatives(&values)?
                };
                let w_w_initial = table.w_w_initial.clone();
                fd_check(
                    &params,
                    move |g, nodes| {
                        let embs = crate::train::transfer::batch_embedding_nodes(
                            g, nodes, &config, &batch, None,
                        )?;
                        margin_objective_node(
                            g,
                            nodes,
                            &embs,
                            &negatives,
                            delta,
                            lambda_c,
                            lambda_w,
                            &w_w_initial,
                        )
                    },
                    &FdOptions {
                        subsample_seed: opts.subsample_seed ^ (instance as u64),
                        ..*opts
                    },
                )?
            }
            LossKind::Kl => {
                let k = 5;
                init_head_params(&mut params, config.embedding_dim(), 4, k, &mut rng)?;
                let n_pairs = 1 + rng.below(dims.max_pairs as u64) as usize;
                let batch: Vec<ScoredPair> = (0..n_pairs)
                    .map(|_| ScoredPair {
                        s1: random_sequence(&table, dims.max_len, tags, &mut rng),
                        s2: random_sequence(&table, dims.max_len, tags, &mut rng),
                        gold: rng.uniform(1.0, k as f64),
                    })
                    .collect();
                params.randomize(&mut rng, 0.5);
                let anchors = Anchors {
                    w_w: table.w_w_initial.clone(),
                    compositional: None,
                };
                fd_check(
                    &params,
                    move |g, nodes| {
                        supervised_objective_node(
                            g, nodes, &config, &batch, None, k, lambda_c, lambda_w, &anchors,
                        )
                    },
                    &FdOptions {
                        subsample_seed: opts.subsample_seed ^ (instance as u64),
                        ..*opts
                    },
                )?
            }
        };
        merged.merge(report);
    }
    Ok(merged)
}
