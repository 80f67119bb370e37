//! Binarization and Dice statistics over a test set.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::dice_binary;
use crate::model::Model;
use crate::parallel;
use crate::tensor::{Element, Tensor};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// 1 where `prob > threshold`, else 0.
pub fn binarize<E: Element>(prob: &Tensor<E>, threshold: f64) -> Result<Tensor<E>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Spec(format!("threshold {threshold} outside [0, 1]")));
    }
    let (one, zero) = (E::from_f64(1.0), E::from_f64(0.0));
    Ok(prob.map(|p| if p.to_f64() > threshold { one } else { zero }))
}

/// Per-sample Dice scores with their mean, median and maximum.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub label: String,
    pub scores: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
}

impl EvalSummary {
    pub fn from_scores(label: impl Into<String>, scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::contract("no scores to summarize"));
        }
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        // Sum in sorted order so the mean does not depend on sample order.
        let mean = sorted.iter().sum::<f64>() / n as f64;
        Ok(EvalSummary {
            label: label.into(),
            scores,
            mean,
            median,
            max: sorted[n - 1],
        })
    }
}

/// Dice of the binarized main output against each mask in `test`.
pub fn evaluate(model: &Model, test: &Dataset, threshold: f64, label: impl Into<String>) -> Result<EvalSummary> {
    if test.is_empty() {
        return Err(Error::contract("evaluation set is empty"));
    }
    let scores = parallel::map_slice(&test.samples, |s| {
        let outputs = model.predict(&s.image)?;
        dice_binary(&binarize(&outputs[0], threshold)?, &s.mask)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    EvalSummary::from_scores(label, scores)
}

/// Plain-text table, one row per summary in the order given.
pub fn compare_report(summaries: &[EvalSummary]) -> String {
    let width = summaries.iter().map(|s| s.label.len()).chain(["model".len()]).max().unwrap_or(5);
    let mut out = format!("{:<width$}  {:>9}  {:>9}  {:>10}\n", "model", "meanDSC", "medianDSC", "maximumDSC");
    for s in summaries {
        out.push_str(&format!(
            "{:<width$}  {:>9.3}  {:>9.3}  {:>10.3}\n",
            s.label, s.mean, s.median, s.max
        ));
    }
    out
}
