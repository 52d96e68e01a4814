//! The preference objective on log-probability records, plus a tiny
//! trainable policy for end-to-end verification.
//!
//! The loss for one pair is -log sigmoid(margin) with
//! margin = beta * ((lp_theta_w - lp_ref_w) - (lp_theta_l - lp_ref_l)),
//! computed through a numerically stable softplus. Real language models live
//! elsewhere and export their log-probabilities as JSONL quadruples; the
//! [`ToyPolicy`] here is a unigram model just large enough to make the
//! gradient math testable against finite differences.

use std::path::Path;

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

/// The four summed log-probabilities behind one preference pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogProbQuad {
    pub pair_id: String,
    pub lp_theta_w: f64,
    pub lp_theta_l: f64,
    pub lp_ref_w: f64,
    pub lp_ref_l: f64,
}

impl LogProbQuad {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lp_theta_w", self.lp_theta_w),
            ("lp_theta_l", self.lp_theta_l),
            ("lp_ref_w", self.lp_ref_w),
            ("lp_ref_l", self.lp_ref_l),
        ] {
            if !v.is_finite() || v > 0.0 {
                return Err(Error::Integrity(format!(
                    "pair {}: {name} must be a finite log-probability <= 0, got {v}",
                    self.pair_id
                )));
            }
        }
        Ok(())
    }
}

/// Hyperparameters for [`train_toy`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpoConfig {
    pub beta: f64,
    /// Step size; zero is allowed and leaves the policy at its reference.
    pub learning_rate: f64,
    pub epochs: u64,
    pub seed: u64,
}

impl Default for DpoConfig {
    fn default() -> Self {
        DpoConfig {
            beta: 0.1,
            learning_rate: 0.1,
            epochs: 50,
            seed: 0,
        }
    }
}

impl DpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beta <= 0.0 || !self.beta.is_finite() {
            return Err(Error::Domain(format!("beta must be positive, got {}", self.beta)));
        }
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Domain(format!(
                "learning_rate must be nonnegative, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Domain("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Stable softplus: ln(1 + e^x) without overflow for large |x|.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Stable logistic sigmoid.
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean preference loss and the per-pair margins.
///
/// margin_i = beta * ((lp_theta_w - lp_ref_w) - (lp_theta_l - lp_ref_l)),
/// per-pair loss = softplus(-margin_i). A zero margin gives ln 2 for any
/// beta.
pub fn dpo_loss(quads: &[LogProbQuad], beta: f64) -> Result<(f64, Vec<f64>)> {
    if quads.is_empty() {
        return Err(Error::Domain("dpo_loss requires at least one pair".into()));
    }
    if beta <= 0.0 || !beta.is_finite() {
        return Err(Error::Domain(format!("beta must be positive, got {beta}")));
    }
    let mut margins = Vec::with_capacity(quads.len());
    let mut total = 0.0;
    for q in quads {
        q.validate()?;
        let margin = beta * ((q.lp_theta_w - q.lp_ref_w) - (q.lp_theta_l - q.lp_ref_l));
        total += softplus(-margin);
        margins.push(margin);
    }
    Ok((total / quads.len() as f64, margins))
}

/// Position-independent ("unigram") sequence policy: every token of every
/// position is drawn from softmax(logits). Small enough that gradients are a
/// few lines, yet it exposes the same log-probability interface a real
/// model would.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    pub vocab_size: usize,
    pub max_len: usize,
    pub logits: Vec<f64>,
}

impl ToyPolicy {
    pub fn new(vocab_size: usize, max_len: usize, logits: Vec<f64>) -> Result<Self> {
        if vocab_size < 2 {
            return Err(Error::Domain(format!(
                "vocab_size must be at least 2, got {vocab_size}"
            )));
        }
        if max_len < 1 {
            return Err(Error::Domain("max_len must be at least 1".into()));
        }
        if logits.len() != vocab_size {
            return Err(Error::Domain(format!(
                "expected {vocab_size} logits, got {}",
                logits.len()
            )));
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::Domain("logits must be finite".into()));
        }
        Ok(ToyPolicy {
            vocab_size,
            max_len,
            logits,
        })
    }

    pub fn uniform(vocab_size: usize, max_len: usize) -> Result<Self> {
        ToyPolicy::new(vocab_size, max_len, vec![0.0; vocab_size])
    }

    /// log softmax(logits), stabilized by subtracting the max logit.
    pub fn log_softmax(&self) -> Vec<f64> {
        let m = self.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + self.logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        self.logits.iter().map(|l| l - lse).collect()
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_softmax().iter().map(|ls| ls.exp()).collect()
    }

    /// Sum of per-token log-probabilities; 0 for the empty sequence.
    pub fn sequence_logprob(&self, tokens: &[u64]) -> Result<f64> {
        if tokens.len() > self.max_len {
            return Err(Error::Domain(format!(
                "sequence of length {} exceeds max_len {}",
                tokens.len(),
                self.max_len
            )));
        }
        let ls = self.log_softmax();
        let mut total = 0.0;
        for t in tokens {
            let idx = usize::try_from(*t).ok().filter(|i| *i < self.vocab_size);
            let Some(idx) = idx else {
                return Err(Error::Domain(format!(
                    "token {t} outside vocabulary of size {}",
                    self.vocab_size
                )));
            };
            total += ls[idx];
        }
        Ok(total)
    }
}

/// A preference pair after tokenization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedPair {
    pub chosen: Vec<u64>,
    pub rejected: Vec<u64>,
}

fn token_counts(tokens: &[u64], vocab_size: usize) -> Vec<f64> {
    let mut counts = vec![0.0; vocab_size];
    for t in tokens {
        counts[*t as usize] += 1.0;
    }
    counts
}

fn pair_quads(policy: &ToyPolicy, ref_policy: &ToyPolicy, pairs: &[TokenizedPair]) -> Result<Vec<LogProbQuad>> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            Ok(LogProbQuad {
                pair_id: i.to_string(),
                lp_theta_w: policy.sequence_logprob(&p.chosen)?,
                lp_theta_l: policy.sequence_logprob(&p.rejected)?,
                lp_ref_w: ref_policy.sequence_logprob(&p.chosen)?,
                lp_ref_l: ref_policy.sequence_logprob(&p.rejected)?,
            })
        })
        .collect()
}

/// Exact gradient of the mean preference loss with respect to the policy
/// logits, holding `ref_policy` constant.
///
/// For the unigram policy, d(sum log p)/d logit_u = count_u - n * p_u, so
/// each pair contributes -sigmoid(-margin) * beta * ((c_w_u - n_w p_u) -
/// (c_l_u - n_l p_u)).
pub fn dpo_gradient(
    policy: &ToyPolicy,
    ref_policy: &ToyPolicy,
    pairs: &[TokenizedPair],
    beta: f64,
) -> Result<Vec<f64>> {
    if policy.vocab_size != ref_policy.vocab_size || policy.max_len != ref_policy.max_len {
        return Err(Error::Domain(format!(
            "policy shape (V={}, L={}) does not match reference (V={}, L={})",
            policy.vocab_size, policy.max_len, ref_policy.vocab_size, ref_policy.max_len
        )));
    }
    if pairs.is_empty() {
        return Err(Error::Domain("dpo_gradient requires at least one pair".into()));
    }
    if beta <= 0.0 || !beta.is_finite() {
        return Err(Error::Domain(format!("beta must be positive, got {beta}")));
    }
    let quads = pair_quads(policy, ref_policy, pairs)?;
    let (_, margins) = dpo_loss(&quads, beta)?;
    let probs = policy.probs();
    let mut grad = vec![0.0; policy.vocab_size];
    for (pair, margin) in pairs.iter().zip(&margins) {
        let scale = -sigmoid(-margin) * beta;
        let cw = token_counts(&pair.chosen, policy.vocab_size);
        let cl = token_counts(&pair.rejected, policy.vocab_size);
        let nw = pair.chosen.len() as f64;
        let nl = pair.rejected.len() as f64;
        for u in 0..policy.vocab_size {
            grad[u] += scale * ((cw[u] - nw * probs[u]) - (cl[u] - nl * probs[u]));
        }
    }
    for g in &mut grad {
        *g /= pairs.len() as f64;
    }
    Ok(grad)
}

/// Result of [`train_toy`]: mean loss before each step plus after the last
/// one (`epochs + 1` entries), and the per-pair margins at the final
/// parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub losses: Vec<f64>,
    pub final_margins: Vec<f64>,
    pub vocab_size: usize,
    pub max_len: usize,
}

/// Full-batch gradient descent of a toy policy against a frozen reference.
///
/// The vocabulary is inferred from the largest token id (at least 2) and the
/// maximum length from the longest sequence (at least 1). The reference gets
/// small random logits from the seed and the policy starts as its copy, so
/// the first recorded loss is ln 2. Training aborts with an error if the
/// loss ever exceeds 10x its initial value.
pub fn train_toy(pairs: &[TokenizedPair], config: &DpoConfig) -> Result<TrainTrace> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::Domain("train_toy requires at least one pair".into()));
    }
    let max_token = pairs
        .iter()
        .flat_map(|p| p.chosen.iter().chain(p.rejected.iter()))
        .max()
        .copied();
    let vocab_size = match max_token {
        Some(t) => usize::try_from(t)
            .ok()
            .and_then(|t| t.checked_add(1))
            .ok_or_else(|| Error::Domain(format!("token id {t} is too large")))?
            .max(2),
        None => 2,
    };
    let max_len = pairs
        .iter()
        .map(|p| p.chosen.len().max(p.rejected.len()))
        .max()
        .unwrap_or(1)
        .max(1);

    let mut rng = Pcg64::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, 0.1).expect("valid normal");
    let ref_logits: Vec<f64> = (0..vocab_size).map(|_| noise.sample(&mut rng)).collect();
    let ref_policy = ToyPolicy::new(vocab_size, max_len, ref_logits)?;
    let mut policy = ref_policy.clone();

    let mut losses = Vec::with_capacity(config.epochs as usize + 1);
    let mut final_margins = Vec::new();
    for epoch in 0..=config.epochs {
        let quads = pair_quads(&policy, &ref_policy, pairs)?;
        let (loss, margins) = dpo_loss(&quads, config.beta)?;
        losses.push(loss);
        if loss > 10.0 * losses[0] {
            return Err(Error::Domain(format!(
                "training diverged at epoch {epoch}: loss {loss} exceeds 10x initial {}",
                losses[0]
            )));
        }
        if epoch == config.epochs {
            final_margins = margins;
            break;
        }
        let grad = dpo_gradient(&policy, &ref_policy, pairs, config.beta)?;
        for (l, g) in policy.logits.iter_mut().zip(&grad) {
            *l -= config.learning_rate * g;
        }
    }
    Ok(TrainTrace {
        losses,
        final_margins,
        vocab_size,
        max_len,
    })
}

/// Reads log-probability quadruples from JSONL.
pub fn load_logprobs(path: &Path) -> Result<Vec<LogProbQuad>> {
    let quads: Vec<LogProbQuad> = io::read_jsonl(path)?;
    for q in &quads {
        q.validate()?;
    }
    Ok(quads)
}
