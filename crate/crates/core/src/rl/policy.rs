//! Action selection, double-Q targets, the softmax policy over candidate
//! bins and the KL-regularized regression loss.

use rand::Rng;

use super::qnet::{backward, forward, QFunction};
use super::replay::{EncodedState, Transition};
use super::Variant;
use crate::manip_map::PixelPrior;

/// Network input: state feature followed by the affordance bins (zeros for
/// variants that do not use affordance).
pub fn network_input(state: &EncodedState, variant: Variant, out: &mut Vec<f64>) {
    out.extend_from_slice(&state.feature);
    if variant.uses_affordance() {
        out.extend(state.aff_bins.iter().map(|b| if *b { 1.0 } else { 0.0 }));
    } else {
        out.extend(std::iter::repeat_n(0.0, state.aff_bins.len()));
    }
}

pub fn batch_input<'a>(states: impl Iterator<Item = &'a EncodedState>, variant: Variant) -> Vec<f64> {
    let mut out = Vec::new();
    for s in states {
        network_input(s, variant, &mut out);
    }
    out
}

/// Affordance bins for A/AP variants when any is set, otherwise every bin.
pub fn candidates(aff_bins: &[bool], variant: Variant) -> Vec<bool> {
    if variant.uses_affordance() && aff_bins.iter().any(|b| *b) {
        aff_bins.to_vec()
    } else {
        vec![true; aff_bins.len()]
    }
}

/// Argmax over set candidates, lowest index on ties.
pub fn masked_argmax(values: &[f64], candidates: &[bool]) -> usize {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if candidates[i] && best.is_none_or(|b| *v > values[b]) {
            best = Some(i);
        }
    }
    best.expect("candidate set is never empty")
}

fn sample_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Epsilon-greedy choice over the variant's candidate set. Exploration draws
/// from the restricted prior for P/AP variants and uniformly otherwise.
pub fn select_action<R: Rng>(
    q: &QFunction,
    state: &EncodedState,
    prior: Option<&PixelPrior>,
    epsilon: f64,
    variant: Variant,
    rng: &mut R,
) -> usize {
    let cand = candidates(&state.aff_bins, variant);
    if rng.random::<f64>() < epsilon {
        match prior.filter(|_| variant.uses_prior()) {
            Some(p) => sample_categorical(&p.restricted(&cand), rng),
            None => {
                let idx: Vec<usize> = (0..cand.len()).filter(|&i| cand[i]).collect();
                idx[rng.random_range(0..idx.len())]
            }
        }
    } else {
        let mut x = Vec::new();
        network_input(state, variant, &mut x);
        masked_argmax(&q.q_online(&x, 1), &cand)
    }
}

/// Double-Q targets: the online network picks the next action within the
/// next-state candidate set, the target network scores it.
pub fn td_target(q: &QFunction, batch: &[&Transition], gamma: f64, variant: Variant) -> Vec<f64> {
    let n = q.n_actions();
    let x_next = batch_input(batch.iter().map(|t| t.s_next.as_ref()), variant);
    let online = q.q_online(&x_next, batch.len());
    let target = q.q_target(&x_next, batch.len());
    batch
        .iter()
        .enumerate()
        .map(|(b, t)| {
            if t.done {
                t.r
            } else {
                let cand = candidates(&t.s_next.aff_bins, variant);
                let a = masked_argmax(&online[b * n..(b + 1) * n], &cand);
                t.r + gamma * target[b * n + a]
            }
        })
        .collect()
}

/// `softmax(Q / tau)` over the candidates, zero elsewhere.
pub fn policy_distribution(q_values: &[f64], candidates: &[bool], tau: f64) -> Vec<f64> {
    let max = q_values
        .iter()
        .zip(candidates)
        .filter(|(_, c)| **c)
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = q_values
        .iter()
        .zip(candidates)
        .map(|(v, c)| if *c { ((v - max) / tau).exp() } else { 0.0 })
        .collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    probs
}

/// `sum pi log(pi / p)` with `0 log 0 = 0`.
pub fn kl_to_prior(pi: &[f64], p: &[f64]) -> f64 {
    pi.iter()
        .zip(p)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub tau: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub td_loss: f64,
    /// Batch-mean KL; 0 when the regularizer is off.
    pub kl: f64,
    pub grad: Vec<f64>,
}

struct KlTerm<'a> {
    prior: &'a PixelPrior,
    lambda: f64,
    tau: f64,
}

fn objective(q: &QFunction, batch: &[&Transition], gamma: f64, variant: Variant, kl: Option<KlTerm>) -> LossOutput {
    let n = q.n_actions();
    let bsz = batch.len();
    let y = td_target(q, batch, gamma, variant);
    let x = batch_input(batch.iter().map(|t| t.s.as_ref()), variant);
    let cache = forward(&q.arch, &q.online, &x, bsz);
    let out = &cache.output;
    let mut d_out = vec![0.0; bsz * n];
    let mut td_loss = 0.0;
    for (b, t) in batch.iter().enumerate() {
        let err = out[b * n + t.a] - y[b];
        td_loss += err * err;
        d_out[b * n + t.a] = 2.0 * err / bsz as f64;
    }
    td_loss /= bsz as f64;
    let mut kl_mean = 0.0;
    if let Some(term) = kl {
        for (b, t) in batch.iter().enumerate() {
            let cand = candidates(&t.s.aff_bins, variant);
            let row = &out[b * n..(b + 1) * n];
            let pi = policy_distribution(row, &cand, term.tau);
            let p = term.prior.restricted(&cand);
            let kl_b = kl_to_prior(&pi, &p);
            kl_mean += kl_b;
            let scale = term.lambda / (bsz as f64 * term.tau);
            for j in 0..n {
                if pi[j] > 0.0 {
                    d_out[b * n + j] += scale * pi[j] * ((pi[j] / p[j]).ln() - kl_b);
                }
            }
        }
        kl_mean /= bsz as f64;
        let grad = backward(&q.arch, &q.online, &cache, &d_out);
        return LossOutput {
            loss: td_loss + term.lambda * kl_mean,
            td_loss,
            kl: kl_mean,
            grad,
        };
    }
    let grad = backward(&q.arch, &q.online, &cache, &d_out);
    LossOutput {
        loss: td_loss,
        td_loss,
        kl: kl_mean,
        grad,
    }
}

/// Plain double-Q regression loss and gradient.
pub fn td_loss_and_grad(q: &QFunction, batch: &[&Transition], gamma: f64, variant: Variant) -> LossOutput {
    objective(q, batch, gamma, variant, None)
}

/// Mean squared TD error plus `lambda` times the batch-mean KL between the
/// softmax policy and the candidate-restricted prior.
pub fn loss_and_grad(
    q: &QFunction,
    batch: &[&Transition],
    prior: Option<&PixelPrior>,
    cfg: &LossConfig,
    variant: Variant,
) -> LossOutput {
    let kl = match prior {
        Some(prior) if cfg.lambda > 0.0 && variant.uses_prior() => Some(KlTerm {
            prior,
            lambda: cfg.lambda,
            tau: cfg.tau,
        }),
        _ => None,
    };
    objective(q, batch, cfg.gamma, variant, kl)
}
