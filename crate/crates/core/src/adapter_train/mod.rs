//! Contrastive training of a linear query adapter over frozen embeddings.
//!
//! The loss pulls the adapted query toward its evidence chunks and away
//! from sampled negatives. Each positive is scored against a denominator
//! made of itself plus all negatives:
//!
//! ```text
//! L = -(1/P) * sum_i log( exp(s_i/t) / (exp(s_i/t) + sum_j exp(s_j/t)) )
//! ```
//!
//! where `s` is the cosine similarity between the adapted query
//! `normalize(W q)` and a chunk embedding, and `t` the temperature. Only
//! `W` is trained; chunk embeddings stay fixed.

mod adapter;
pub mod synthetic;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::doc_model::{ChunkId, Modality, ParsedDocument};

pub use adapter::{LinearAdapter, ADAPTER_MAGIC};
pub use synthetic::{PlantedCorpus, PlantedQuery, PlantedSpec};

pub const DEFAULT_TEMPERATURE: f64 = 0.07;
/// Negatives drawn per query: this many text chunks and this many images.
pub const NEGATIVES_PER_MODALITY: usize = 2;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("vector dims mismatch: expected {expected}, got {got}")]
    Dims { expected: usize, got: usize },
    #[error("invalid loss input: {0}")]
    Domain(String),
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },
    #[error("document has no chunk left to use as a negative")]
    NoNegatives,
    #[error("adapter file is corrupt: {0}")]
    AdapterFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub doc_id: String,
    pub positive_ids: Vec<ChunkId>,
    pub negative_ids: Vec<ChunkId>,
    pub strategy: String,
}

/// One query with its positive and negative chunk embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingBatch {
    /// Raw query embedding, before the adapter.
    pub query_vec: Vec<f64>,
    pub positive_vecs: Vec<Vec<f64>>,
    pub negative_vecs: Vec<Vec<f64>>,
    pub provenance: Option<Provenance>,
}

impl TrainingBatch {
    pub fn new(query_vec: Vec<f64>, positive_vecs: Vec<Vec<f64>>, negative_vecs: Vec<Vec<f64>>) -> Result<Self, TrainError> {
        let b = Self {
            query_vec,
            positive_vecs,
            negative_vecs,
            provenance: None,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        validate_inputs(&self.query_vec, &self.positive_vecs, &self.negative_vecs)
    }

    pub fn dims(&self) -> usize {
        self.query_vec.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub temperature: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            learning_rate: 0.05,
            epochs: 20,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        check_temperature(self.temperature)?;
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(TrainError::Config("learning rate must be finite and non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_rep: f64,
    pub l_qa_external: Option<f64>,
    pub l_total: f64,
}

/// Adds an externally reported answer loss to the representation loss.
/// The external term is a plain scalar; nothing is differentiated through it.
pub fn compose_total_loss(l_rep: f64, l_qa_external: Option<f64>) -> Result<LossReport, TrainError> {
    let check = |name: &str, v: f64| {
        if v.is_finite() && v >= 0.0 {
            Ok(())
        } else {
            Err(TrainError::Domain(format!("{name} must be finite and non-negative, got {v}")))
        }
    };
    check("l_rep", l_rep)?;
    if let Some(qa) = l_qa_external {
        check("l_qa", qa)?;
    }
    Ok(LossReport {
        l_rep,
        l_qa_external,
        l_total: l_rep + l_qa_external.unwrap_or(0.0),
    })
}

fn check_temperature(t: f64) -> Result<(), TrainError> {
    if t.is_finite() && t > 0.0 {
        Ok(())
    } else {
        Err(TrainError::Config(format!("temperature must be positive, got {t}")))
    }
}

fn validate_inputs(query: &[f64], positives: &[Vec<f64>], negatives: &[Vec<f64>]) -> Result<(), TrainError> {
    if positives.is_empty() {
        return Err(TrainError::Domain("at least one positive is required".into()));
    }
    if negatives.is_empty() {
        return Err(TrainError::Domain("at least one negative is required".into()));
    }
    let d = query.len();
    for v in positives.iter().chain(negatives) {
        if v.len() != d {
            return Err(TrainError::Dims {
                expected: d,
                got: v.len(),
            });
        }
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn unit(a: &[f64]) -> Vec<f64> {
    let n = norm(a);
    a.iter().map(|x| x / n).collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}

/// `log(exp(first) + sum exp(rest)) - first`, with `rest` summed in
/// ascending order. Uses `ln_1p` when `first` is the largest logit so tiny
/// losses do not round to zero.
fn softmax_nll(first: f64, rest_sorted: &[f64]) -> f64 {
    let max = rest_sorted.iter().copied().fold(first, f64::max);
    if max == first {
        let tail: f64 = rest_sorted.iter().map(|r| (r - first).exp()).sum();
        return tail.ln_1p();
    }
    let mut acc = (first - max).exp();
    for &r in rest_sorted {
        acc += (r - max).exp();
    }
    max - first + acc.ln()
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// Per-positive terms `-log p_i` and the per-positive probabilities of
/// every negative, given cosine similarities.
fn per_positive_terms(pos_sims: &[f64], neg_sims: &[f64], tau: f64) -> Vec<(f64, f64, Vec<f64>)> {
    let neg_logits: Vec<f64> = neg_sims.iter().map(|s| s / tau).collect();
    let neg_sorted = sorted(neg_logits.clone());
    pos_sims
        .iter()
        .map(|&s| {
            let z = s / tau;
            let term = softmax_nll(z, &neg_sorted);
            let p_pos = (-term).exp();
            let p_negs = neg_logits.iter().map(|&zj| (zj - z - term).exp()).collect();
            (term, p_pos, p_negs)
        })
        .collect()
}

/// Contrastive loss of a query against positives and negatives, with
/// cosine similarity and temperature `tau`.
pub fn contrastive_loss(query: &[f64], positives: &[Vec<f64>], negatives: &[Vec<f64>], tau: f64) -> Result<f64, TrainError> {
    check_temperature(tau)?;
    validate_inputs(query, positives, negatives)?;
    let pos: Vec<f64> = positives.iter().map(|p| cosine(query, p)).collect();
    let neg: Vec<f64> = negatives.iter().map(|n| cosine(query, n)).collect();
    loss_from_sims(&pos, &neg, tau)
}

/// The loss as a function of precomputed similarities.
pub fn loss_from_sims(pos_sims: &[f64], neg_sims: &[f64], tau: f64) -> Result<f64, TrainError> {
    check_temperature(tau)?;
    if pos_sims.is_empty() || neg_sims.is_empty() {
        return Err(TrainError::Domain("need at least one positive and one negative".into()));
    }
    let terms = sorted(per_positive_terms(pos_sims, neg_sims, tau).into_iter().map(|t| t.0).collect());
    Ok(terms.iter().sum::<f64>() / pos_sims.len() as f64)
}

/// Loss and its exact gradient with respect to the adapter weights, for
/// the adapted query `normalize(W q)`.
pub fn contrastive_loss_grad(
    query: &[f64],
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
    tau: f64,
    adapter: &LinearAdapter,
) -> Result<(f64, Vec<f64>), TrainError> {
    check_temperature(tau)?;
    if adapter.d_in() != query.len() {
        return Err(TrainError::Dims {
            expected: adapter.d_in(),
            got: query.len(),
        });
    }
    let u = adapter.project(query);
    validate_inputs(&u, positives, negatives)?;
    let u_norm = norm(&u);
    if u_norm == 0.0 || !u_norm.is_finite() {
        return Err(TrainError::Domain("adapter maps the query to a degenerate vector".into()));
    }
    let a: Vec<f64> = u.iter().map(|x| x / u_norm).collect();
    let pos_units: Vec<Vec<f64>> = positives.iter().map(|p| unit(p)).collect();
    let neg_units: Vec<Vec<f64>> = negatives.iter().map(|n| unit(n)).collect();
    let pos_sims: Vec<f64> = pos_units.iter().map(|e| dot(&a, e)).collect();
    let neg_sims: Vec<f64> = neg_units.iter().map(|e| dot(&a, e)).collect();

    let p_count = positives.len() as f64;
    let terms = per_positive_terms(&pos_sims, &neg_sims, tau);
    let loss = sorted(terms.iter().map(|t| t.0).collect()).iter().sum::<f64>() / p_count;

    // dL/da = sum over chunks of dL/ds * e
    let d = a.len();
    let mut g_a = vec![0.0; d];
    let mut neg_weight = vec![0.0; negatives.len()];
    for (i, (_, p_pos, p_negs)) in terms.iter().enumerate() {
        let w = (p_pos - 1.0) / (tau * p_count);
        g_a.iter_mut().zip(&pos_units[i]).for_each(|(g, e)| *g += w * e);
        for (acc, p) in neg_weight.iter_mut().zip(p_negs) {
            *acc += p / (tau * p_count);
        }
    }
    for (w, e) in neg_weight.iter().zip(&neg_units) {
        g_a.iter_mut().zip(e).for_each(|(g, x)| *g += w * x);
    }
    // Through the normalization: (I - a a^T) / |u|
    let along = dot(&a, &g_a);
    let g_u: Vec<f64> = g_a.iter().zip(&a).map(|(g, ai)| (g - ai * along) / u_norm).collect();
    let mut grad = vec![0.0; adapter.d_out() * adapter.d_in()];
    for (r, gr) in g_u.iter().enumerate() {
        let row = &mut grad[r * adapter.d_in()..(r + 1) * adapter.d_in()];
        row.iter_mut().zip(query).for_each(|(g, q)| *g = gr * q);
    }
    Ok((loss, grad))
}

/// Two text and two image negatives drawn uniformly without replacement
/// from the chunks that are not positives.
///
/// When a modality has fewer than two spare chunks the other modality
/// fills in; with fewer than four spares in total all of them are used.
pub fn sample_negatives<R: Rng + ?Sized>(
    doc: &ParsedDocument,
    positive_ids: &[ChunkId],
    rng: &mut R,
) -> Result<Vec<ChunkId>, TrainError> {
    let spare = |m: Modality| -> Vec<&ChunkId> {
        doc.chunks()
            .iter()
            .filter(|c| c.modality() == m && !positive_ids.contains(c.id()))
            .map(|c| c.id())
            .collect()
    };
    let texts = spare(Modality::Text);
    let images = spare(Modality::Image);
    let total = NEGATIVES_PER_MODALITY * 2;
    if texts.is_empty() && images.is_empty() {
        return Err(TrainError::NoNegatives);
    }
    let mut n_text = NEGATIVES_PER_MODALITY.min(texts.len());
    let mut n_image = NEGATIVES_PER_MODALITY.min(images.len());
    let short = total - n_text - n_image;
    if short > 0 {
        let more_text = short.min(texts.len() - n_text);
        n_text += more_text;
        n_image += (short - more_text).min(images.len() - n_image);
    }
    let mut out: Vec<ChunkId> = texts.choose_multiple(rng, n_text).map(|c| (*c).clone()).collect();
    out.extend(images.choose_multiple(rng, n_image).map(|c| (*c).clone()));
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub adapter: LinearAdapter,
    /// Mean loss of each epoch, accumulated before each mini-batch update.
    pub trajectory: Vec<f64>,
}

/// Mini-batch gradient descent (no momentum) on the mean contrastive loss,
/// starting from the identity adapter. Deterministic for a given seed.
pub fn train_adapter(batches: &[TrainingBatch], config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    let dims = batches
        .first()
        .ok_or_else(|| TrainError::Config("no training batches".into()))?
        .dims();
    train_adapter_from(LinearAdapter::identity(dims), batches, config)
}

pub fn train_adapter_from(
    mut adapter: LinearAdapter,
    batches: &[TrainingBatch],
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if batches.is_empty() {
        return Err(TrainError::Config("no training batches".into()));
    }
    for b in batches {
        b.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..batches.len()).collect();
    let mut trajectory = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let mut grad_sum = vec![0.0; adapter.weights().len()];
            for &i in chunk {
                let b = &batches[i];
                let (loss, grad) =
                    contrastive_loss_grad(&b.query_vec, &b.positive_vecs, &b.negative_vecs, config.temperature, &adapter)?;
                if !loss.is_finite() {
                    return Err(TrainError::Diverged { epoch });
                }
                epoch_loss += loss;
                grad_sum.iter_mut().zip(&grad).for_each(|(s, g)| *s += g);
            }
            let step = config.learning_rate / chunk.len() as f64;
            adapter
                .weights_mut()
                .iter_mut()
                .zip(&grad_sum)
                .for_each(|(w, g)| *w -= step * g);
            if adapter.weights().iter().any(|w| !w.is_finite()) {
                return Err(TrainError::Diverged { epoch });
            }
        }
        let mean = epoch_loss / batches.len() as f64;
        if !mean.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }
        trajectory.push(mean);
    }
    Ok(TrainOutcome { adapter, trajectory })
}

/// Largest relative error between an analytic gradient and central finite
/// differences, `|analytic - numeric| / max(1, |numeric|)`.
pub fn gradient_check(
    query: &[f64],
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
    tau: f64,
    adapter: &LinearAdapter,
    eps: f64,
) -> Result<f64, TrainError> {
    let (_, analytic) = contrastive_loss_grad(query, positives, negatives, tau, adapter)?;
    let mut worst: f64 = 0.0;
    let mut probe = adapter.clone();
    for (idx, a) in analytic.iter().enumerate() {
        let orig = probe.weights()[idx];
        probe.weights_mut()[idx] = orig + eps;
        let up = contrastive_loss(&probe.project(query), positives, negatives, tau)?;
        probe.weights_mut()[idx] = orig - eps;
        let down = contrastive_loss(&probe.project(query), positives, negatives, tau)?;
        probe.weights_mut()[idx] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let err = (a - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
