//! Dice objectives and the deeply-supervised total loss.
//!
//! The training loss for a probability map `p` and binary truth `q` is
//! `1 - (2 sum(p q) + eps) / (sum(p^2) + sum(q^2) + eps)`, with
//! `eps = DICE_SMOOTH`. The total objective is
//! `sum_i alpha_i * l_i + main_weight * L`, where `l_i` is the loss of
//! supervision head `i` and `L` the loss of the final output.

use crate::autograd::{Tape, Var};
#[cfg(test)]
use crate::autograd::DICE_SMOOTH;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Hard Dice coefficient `2|A n B| / (|A| + |B|)` of two binary masks.
///
/// Two empty masks score 1.0.
pub fn dice_binary<E: Element>(pred: &Tensor<E>, truth: &Tensor<E>) -> Result<f64> {
    if pred.shape() != truth.shape() {
        return Err(Error::dim(format!(
            "dice: {} vs {}",
            pred.shape(),
            truth.shape()
        )));
    }
    let (mut inter, mut a, mut b) = (0u64, 0u64, 0u64);
    for (&p, &q) in pred.data().iter().zip(truth.data()) {
        let (p, q) = (binary(p)?, binary(q)?);
        inter += (p && q) as u64;
        a += p as u64;
        b += q as u64;
    }
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (a + b) as f64)
}

fn binary<E: Element>(v: E) -> Result<bool> {
    let f = v.to_f64();
    if f == 0.0 {
        Ok(false)
    } else if f == 1.0 {
        Ok(true)
    } else {
        Err(Error::contract(format!("mask value {f} is not 0 or 1")))
    }
}

/// Soft Dice loss of a probability map against a binary mask, evaluated
/// through the same tape operation training uses.
pub fn soft_dice_loss<E: Element>(prob: &Tensor<E>, truth: &Tensor<E>) -> Result<f64> {
    let mut tape = Tape::<E>::new();
    let p = tape.leaf(prob.clone(), false);
    let q = tape.leaf(truth.clone(), false);
    let l = tape.soft_dice(p, q)?;
    tape.scalar(l)
}

/// Head weights `alpha_i` and the weight of the main-output loss.
#[derive(Clone, Debug, PartialEq)]
pub struct SupervisionWeights {
    pub alpha: Vec<f64>,
    pub main: f64,
}

impl SupervisionWeights {
    /// All weights 1.
    pub fn uniform(heads: usize) -> Self {
        SupervisionWeights {
            alpha: vec![1.0; heads],
            main: 1.0,
        }
    }

    pub fn new(alpha: Vec<f64>, main: f64) -> Result<Self> {
        let w = SupervisionWeights { alpha, main };
        w.validate()?;
        Ok(w)
    }

    pub fn heads(&self) -> usize {
        self.alpha.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self
            .alpha
            .iter()
            .chain(std::iter::once(&self.main))
            .any(|w| !w.is_finite() || *w < 0.0)
        {
            return Err(Error::contract("supervision weights must be finite and >= 0"));
        }
        if self.main == 0.0 && self.alpha.iter().all(|&a| a == 0.0) {
            return Err(Error::contract("all supervision weights are zero"));
        }
        Ok(())
    }
}

/// Per-part values of one evaluation of the total objective.
#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub head_losses: Vec<f64>,
    pub alpha: Vec<f64>,
    pub main_weight: f64,
    pub supervised: f64,
    pub main: f64,
    pub total: f64,
}

impl LossReport {
    /// Assembles the report from its parts.
    pub fn compose(head_losses: Vec<f64>, main: f64, weights: &SupervisionWeights) -> Result<Self> {
        let supervised = weighted_sum(&head_losses, &weights.alpha)?;
        Ok(LossReport {
            total: supervised + weights.main * main,
            head_losses,
            alpha: weights.alpha.clone(),
            main_weight: weights.main,
            supervised,
            main,
        })
    }
}

/// `sum_i alpha_i * l_i`.
pub fn weighted_sum(losses: &[f64], alpha: &[f64]) -> Result<f64> {
    if losses.len() != alpha.len() {
        return Err(Error::contract(format!(
            "{} head losses for {} weights",
            losses.len(),
            alpha.len()
        )));
    }
    Ok(losses.iter().zip(alpha).map(|(l, a)| a * l).sum())
}

/// Tape handles of the objective's parts.
#[derive(Clone, Debug)]
pub struct ObjectiveVars {
    pub total: Var,
    pub main: Var,
    pub heads: Vec<Var>,
    pub supervised: Option<Var>,
}

/// Records `sum_i alpha_i * soft_dice(head_i, truth)` on the tape.
///
/// Returns the weighted sum (absent when there are no heads) and the
/// unweighted per-head losses.
pub fn supervised_loss<E: Element>(
    tape: &mut Tape<'_, E>,
    heads: &[Var],
    truth: Var,
    weights: &SupervisionWeights,
) -> Result<(Option<Var>, Vec<Var>)> {
    if heads.len() != weights.heads() {
        return Err(Error::contract(format!(
            "{} heads but {} alpha weights",
            heads.len(),
            weights.heads()
        )));
    }
    let mut losses = Vec::with_capacity(heads.len());
    let mut acc: Option<Var> = None;
    for (&h, &a) in heads.iter().zip(&weights.alpha) {
        let l = tape.soft_dice(h, truth)?;
        losses.push(l);
        let term = tape.scale(l, a);
        acc = Some(match acc {
            Some(prev) => tape.add(prev, term)?,
            None => term,
        });
    }
    Ok((acc, losses))
}

/// Records the total objective `L_supervised + main_weight * L` on the tape.
pub fn total_objective<E: Element>(
    tape: &mut Tape<'_, E>,
    main: Var,
    heads: &[Var],
    truth: Var,
    weights: &SupervisionWeights,
) -> Result<ObjectiveVars> {
    weights.validate()?;
    let (supervised, head_vars) = supervised_loss(tape, heads, truth, weights)?;
    let main_loss = tape.soft_dice(main, truth)?;
    let weighted_main = tape.scale(main_loss, weights.main);
    let total = match supervised {
        Some(s) => tape.add(s, weighted_main)?,
        None => weighted_main,
    };
    Ok(ObjectiveVars {
        total,
        main: main_loss,
        heads: head_vars,
        supervised,
    })
}

/// Reads the objective's parts back off the tape.
pub fn report<E: Element>(
    tape: &Tape<'_, E>,
    vars: &ObjectiveVars,
    weights: &SupervisionWeights,
) -> Result<LossReport> {
    let heads = vars
        .heads
        .iter()
        .map(|&v| tape.scalar(v))
        .collect::<Result<Vec<_>>>()?;
    LossReport::compose(heads, tape.scalar(vars.main)?, weights)
}
