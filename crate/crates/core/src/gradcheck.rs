//! Central finite-difference verification of analytic gradients.
//!
//! Both sides run at 64-bit storage precision: the parameters are widened
//! to `f64`, the analytic gradient comes from one backward sweep, and each
//! checked element is compared with `(f(theta + h) - f(theta - h)) / 2h`.
//! The relative error is `|a - n| / max(|a|, |n|, 1e-8)`.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::loss::{total_objective, SupervisionWeights};
use crate::model::Network;
use crate::parallel;
use crate::params::ParamStore;
use crate::tensor::{Element, Tensor};

/// Floor on the denominator of the relative error.
pub const REL_EPS: f64 = 1e-8;

/// Elements whose one-sided slopes disagree by more than this relative
/// amount straddle a ReLU or max-pool kink and are skipped.
pub const KINK_RATIO: f64 = 1e-3;

/// Elements where the f64 spacing of the loss (`eps * |f| / h`) exceeds
/// this fraction of the larger of the two gradients are skipped; their
/// difference quotient is roundoff, not a derivative.
pub const RESOLUTION_RATIO: f64 = 2.5e-4;

/// A scalar function of a parameter store, recorded on a tape.
pub trait Objective: Sync {
    fn record<E: Element>(&self, tape: &mut Tape<'_, E>) -> Result<Var>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Elements checked per parameter; parameters with fewer are checked fully.
    pub samples_per_param: usize,
    pub seed: u64,
    /// Test hook: added to the first analytic gradient element of every
    /// parameter before comparison.
    pub corrupt: Option<f64>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tolerance: 1e-3,
            samples_per_param: 100,
            seed: 0,
            corrupt: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    /// Sampled elements skipped because the numeric reference is unreliable there.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn checked(&self) -> usize {
        self.params.iter().map(|p| p.checked).sum()
    }

    pub fn skipped(&self) -> usize {
        self.params.iter().map(|p| p.skipped).sum()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    /// Parameters sorted by descending error.
    pub fn worst(&self, n: usize) -> Vec<&ParamCheck> {
        let mut v: Vec<&ParamCheck> = self.params.iter().collect();
        v.sort_by(|a, b| b.max_rel_error.total_cmp(&a.max_rel_error));
        v.truncate(n);
        v
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_EPS)
}

fn evaluate<O: Objective>(objective: &O, params: &ParamStore<f64>, context: &str) -> Result<f64> {
    let mut tape = Tape::with_params(params);
    let l = objective.record(&mut tape)?;
    let v = tape.scalar(l)?;
    if !v.is_finite() {
        return Err(Error::numeric(context, format!("loss evaluated to {v}")));
    }
    Ok(v)
}

/// Checks every learnable parameter of `params` against `objective`.
pub fn finite_diff_check<O: Objective, E: Element>(
    objective: &O,
    params: &ParamStore<E>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    if opts.step <= 0.0 || !opts.step.is_finite() {
        return Err(Error::contract("finite-difference step must be > 0"));
    }
    let base: ParamStore<f64> = params.cast();
    for p in base.iter() {
        if !p.value.all_finite() {
            return Err(Error::numeric(&p.name, "parameter holds non-finite values"));
        }
    }
    let ids: Vec<_> = base.ids().filter(|&id| base.get(id).learnable).collect();
    if ids.is_empty() {
        return Ok(GradCheckReport {
            params: vec![],
            tolerance: opts.tolerance,
            passed: true,
        });
    }

    let (f0, grads) = {
        let mut tape = Tape::with_params(&base);
        let l = objective.record(&mut tape)?;
        let v = tape.scalar(l)?;
        if !v.is_finite() {
            return Err(Error::numeric("analytic pass", format!("loss evaluated to {v}")));
        }
        (v, tape.backward(l)?)
    };

    let checks = parallel::map_slice(&ids, |&id| -> Result<ParamCheck> {
        let name = base.get(id).name.clone();
        let numel = base.get(id).value.numel();
        let mut analytic = grads
            .param(id)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; numel]);
        if let Some(c) = opts.corrupt {
            analytic[0] += c;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (id.index() as u64).wrapping_mul(0x9E37_79B9));
        let mut indices: Vec<usize> = if numel <= opts.samples_per_param {
            (0..numel).collect()
        } else {
            sample(&mut rng, numel, opts.samples_per_param).into_vec()
        };
        if opts.corrupt.is_some() && !indices.contains(&0) {
            indices.push(0);
        }
        indices.sort_unstable();

        let mut work = base.clone();
        let mut check = ParamCheck {
            name: name.clone(),
            checked: 0,
            skipped: 0,
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for &i in &indices {
            let orig = work.value(id).data()[i];
            work.get_mut(id).value.data_mut()[i] = orig + opts.step;
            let plus = evaluate(objective, &work, &name)?;
            work.get_mut(id).value.data_mut()[i] = orig - opts.step;
            let minus = evaluate(objective, &work, &name)?;
            work.get_mut(id).value.data_mut()[i] = orig;
            let (fwd, bwd) = ((plus - f0) / opts.step, (f0 - minus) / opts.step);
            let numeric = (plus - minus) / (2.0 * opts.step);
            let resolution = f64::EPSILON * f0.abs().max(plus.abs()).max(minus.abs()) / opts.step;
            let scale = analytic[i].abs().max(numeric.abs());
            let unresolved = scale > 0.0 && resolution > RESOLUTION_RATIO * scale;
            let unreliable = relative_error(fwd, bwd) > KINK_RATIO || unresolved;
            if unreliable && opts.corrupt.is_none() {
                check.skipped += 1;
                continue;
            }
            check.checked += 1;
            let err = relative_error(analytic[i], numeric);
            if err > check.max_rel_error || check.checked == 1 {
                check.max_rel_error = err;
                check.worst_index = i;
                check.analytic = analytic[i];
                check.numeric = numeric;
            }
        }
        Ok(check)
    });
    let params = checks.into_iter().collect::<Result<Vec<_>>>()?;
    let passed = params.iter().all(|p| p.max_rel_error < opts.tolerance);
    Ok(GradCheckReport {
        params,
        tolerance: opts.tolerance,
        passed,
    })
}

/// Replaces every parameter whose name ends in `.bias` with uniform noise in
/// `[-scale, scale]`. Zero-initialized biases put whole dead regions exactly
/// on the ReLU kink, where central differences are meaningless.
pub fn randomize_biases<E: Element>(params: &mut ParamStore<E>, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in params.iter_mut().filter(|p| p.name.ends_with(".bias")) {
        for v in p.value.data_mut() {
            *v = E::from_f64(rng.random_range(-scale..=scale));
        }
    }
}

/// Total deeply-supervised objective of a network on one image/mask pair.
pub struct NetworkObjective<'a> {
    pub net: &'a Network,
    pub image: &'a Tensor<f32>,
    pub mask: &'a Tensor<f32>,
    pub weights: &'a SupervisionWeights,
}

impl Objective for NetworkObjective<'_> {
    fn record<E: Element>(&self, tape: &mut Tape<'_, E>) -> Result<Var> {
        let x = tape.leaf(self.image.cast(), false);
        let y = tape.leaf(self.mask.cast(), false);
        let out = self.net.forward(tape, x)?;
        Ok(total_objective(tape, out.main, &out.heads, y, self.weights)?.total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamId;

    struct Quadratic {
        id: ParamId,
    }

    impl Objective for Quadratic {
        fn record<E: Element>(&self, tape: &mut Tape<'_, E>) -> Result<Var> {
            let w = tape.param(self.id)?;
            let sq = tape.mul(w, w)?;
            let c = tape.mul(sq, w)?;
            Ok(tape.sum(c))
        }
    }

    fn store() -> (ParamStore<f32>, ParamId) {
        let mut s = ParamStore::new();
        let id = s
            .add("w", Tensor::from_vec([1, 1, 1, 3], vec![0.5f32, -1.0, 2.0]).unwrap())
            .unwrap();
        (s, id)
    }

    #[test]
    fn cubic_passes() {
        let (s, id) = store();
        let r = finite_diff_check(&Quadratic { id }, &s, &GradCheckOptions::default()).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.params[0].checked, 3);
    }

    #[test]
    fn frozen_store_is_vacuous_pass() {
        let (mut s, id) = store();
        s.freeze_all();
        let r = finite_diff_check(&Quadratic { id }, &s, &GradCheckOptions::default()).unwrap();
        assert!(r.passed);
        assert!(r.params.is_empty());
    }

    #[test]
    fn corruption_is_caught() {
        let (s, id) = store();
        let opts = GradCheckOptions {
            corrupt: Some(1.0),
            ..Default::default()
        };
        let r = finite_diff_check(&Quadratic { id }, &s, &opts).unwrap();
        assert!(!r.passed);
    }

    #[test]
    fn non_finite_names_parameter() {
        let mut s = ParamStore::<f32>::new();
        let id = s.add("bad", Tensor::scalar(f32::NAN)).unwrap();
        let err = finite_diff_check(&Quadratic { id }, &s, &GradCheckOptions::default()).unwrap_err();
        assert!(err.to_string().contains("bad"));
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.001) - 0.001 / 1.001).abs() < 1e-15);
    }
}
