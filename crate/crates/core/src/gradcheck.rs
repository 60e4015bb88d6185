//! Finite-difference gradient checking. Central differences
//! `(f(x+e) - f(x-e)) / 2e` are compared against analytic gradients with the
//! relative error `|a - n| / max(|a|, |n|, 1e-8)`. Checking runs in `f64`.
//!
//! Two guards avoid false alarms at non-smooth points:
//! - an explicit value rule skips coordinates within `kink_margin` of a known
//!   kink (e.g. 0 for relu when the checked function is the activation
//!   itself), and
//! - a step-halving guard skips coordinates where the numeric estimates at
//!   `eps` and `eps/2` disagree with each other, which happens exactly when
//!   the difference stencil straddles a kink or an argmax switch. A wrong
//!   backward rule leaves the two numeric estimates consistent, so genuine
//!   defects are never masked.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamSet};
use crate::rng::{stream_rng, Stream};

/// Worst observed coordinate for one parameter tensor.
#[derive(Clone, Debug)]
pub struct TensorReport {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// Outcome of a whole-model check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst: Option<TensorReport>,
    pub per_tensor: Vec<TensorReport>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Options for [`check_params`].
pub struct GradCheckOptions {
    pub eps: f64,
    /// Coordinates sampled per tensor; tensors at or below this size are
    /// checked exhaustively.
    pub samples_per_tensor: usize,
    pub seed: u64,
    /// Skip coordinates whose current value is within this distance of one of
    /// `kink_points` (used for direct activation checks).
    pub kink_points: Vec<f64>,
    pub kink_margin: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            samples_per_tensor: 8,
            seed: 0,
            kink_points: Vec::new(),
            kink_margin: 0.0,
        }
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Checks analytic gradients of `loss_fn` over every trainable tensor in
/// `params`.
///
/// `grad_fn` must populate `params` gradients for the current values (one
/// forward+backward); `loss_fn` must evaluate the loss without touching
/// gradients. Both see the same `ParamSet`, so perturbations made here are
/// observed by `loss_fn`.
pub fn check_params<G, F>(
    params: &mut ParamSet<f64>,
    mut grad_fn: G,
    mut loss_fn: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    G: FnMut(&mut ParamSet<f64>) -> Result<f64>,
    F: FnMut(&mut ParamSet<f64>) -> Result<f64>,
{
    params.zero_grads();
    let base_loss = grad_fn(params)?;
    if !base_loss.is_finite() {
        return Err(Error::numeric("loss is not finite at the check point"));
    }

    let ids: Vec<ParamId> = params.trainable_ids();
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| {
            let e = params.get(id);
            match e.tensor.grad() {
                Some(g) => g.to_vec(),
                None => vec![0.0; e.tensor.numel()],
            }
        })
        .collect();
    for (i, &id) in ids.iter().enumerate() {
        if analytic[i].iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "non-finite analytic gradient in '{}'",
                params.get(id).name
            )));
        }
    }

    let mut rng = stream_rng(opts.seed, Stream::GradCheck);
    let mut per_tensor = Vec::new();

    for (ti, &id) in ids.iter().enumerate() {
        let numel = params.get(id).tensor.numel();
        let coords: Vec<usize> = if numel <= opts.samples_per_tensor {
            (0..numel).collect()
        } else {
            let mut picked: Vec<usize> = (0..opts.samples_per_tensor)
                .map(|_| rng.random_range(0..numel))
                .collect();
            picked.sort_unstable();
            picked.dedup();
            picked
        };

        let mut report = TensorReport {
            name: params.get(id).name.clone(),
            max_rel_err: 0.0,
            worst_coord: 0,
            analytic: 0.0,
            numeric: 0.0,
            checked: 0,
            skipped: 0,
        };

        for &ci in &coords {
            let orig = params.get(id).tensor.data()[ci];
            if opts
                .kink_points
                .iter()
                .any(|&kp| (orig - kp).abs() < opts.kink_margin)
            {
                report.skipped += 1;
                continue;
            }

            let mut eval_at = |v: f64, params: &mut ParamSet<f64>| -> Result<f64> {
                params.get_mut(id).tensor.data_mut()[ci] = v;
                let l = loss_fn(params);
                params.get_mut(id).tensor.data_mut()[ci] = orig;
                let l = l?;
                if !l.is_finite() {
                    return Err(Error::numeric(format!(
                        "non-finite loss while perturbing '{}'",
                        report.name
                    )));
                }
                Ok(l)
            };

            let e = opts.eps;
            let lp = eval_at(orig + e, params)?;
            let lm = eval_at(orig - e, params)?;
            let n_full = (lp - lm) / (2.0 * e);
            let lp2 = eval_at(orig + e / 2.0, params)?;
            let lm2 = eval_at(orig - e / 2.0, params)?;
            let n_half = (lp2 - lm2) / e;

            // Step-halving guard: numeric estimates that disagree with each
            // other indicate a kink inside the stencil, not a gradient bug.
            let self_err = rel_err(n_half, n_full);
            if self_err > 1e-3 && self_err > 10.0 * rel_err(analytic[ti][ci], n_half) {
                report.skipped += 1;
                continue;
            }

            let err = rel_err(analytic[ti][ci], n_half);
            report.checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst_coord = ci;
                report.analytic = analytic[ti][ci];
                report.numeric = n_half;
            }
        }
        per_tensor.push(report);
    }

    let worst = per_tensor
        .iter()
        .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
        .cloned();
    Ok(GradCheckReport {
        max_rel_err: worst.as_ref().map(|w| w.max_rel_err).unwrap_or(0.0),
        worst,
        per_tensor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;
    use crate::tensor::Tensor;

    fn square_loss(ps: &mut ParamSet<f64>, with_grad: bool) -> Result<f64> {
        let id = ps.id_of("x").unwrap();
        let mut tape = Tape::new();
        let x = tape.param(ps, id);
        let y = tape.mul(x, x)?;
        let loss = tape.sum(y)?;
        if with_grad {
            tape.backward(loss)?;
            tape.accumulate_param_grads(ps);
        }
        tape.value(loss).item()
    }

    #[test]
    fn square_function_checks_clean() {
        let mut ps = ParamSet::new();
        ps.register("x", Tensor::from_f64(&[1], &[3.0]).unwrap(), true, true)
            .unwrap();
        let report = check_params(
            &mut ps,
            |p| square_loss(p, true),
            |p| square_loss(p, false),
            &GradCheckOptions::default(),
        )
        .unwrap();
        // d(x^2)/dx at 3 is 6; central differences of a quadratic are exact.
        assert!(report.max_rel_err < 1e-8, "err {}", report.max_rel_err);
    }

    #[test]
    fn relu_at_kink_is_skipped() {
        let mut ps = ParamSet::new();
        ps.register("x", Tensor::from_f64(&[1], &[0.0]).unwrap(), true, true)
            .unwrap();
        let run = |ps: &mut ParamSet<f64>, with_grad: bool| -> Result<f64> {
            let id = ps.id_of("x").unwrap();
            let mut tape = Tape::new();
            let x = tape.param(ps, id);
            let y = tape.relu(x)?;
            let loss = tape.sum(y)?;
            if with_grad {
                tape.backward(loss)?;
                tape.accumulate_param_grads(ps);
            }
            tape.value(loss).item()
        };
        let opts = GradCheckOptions {
            kink_points: vec![0.0],
            kink_margin: 10.0 * 1e-5,
            ..Default::default()
        };
        let report = check_params(&mut ps, |p| run(p, true), |p| run(p, false), &opts).unwrap();
        assert_eq!(report.per_tensor[0].skipped, 1);
        assert_eq!(report.per_tensor[0].checked, 0);
    }

    #[test]
    fn corrupted_gradient_is_named() {
        let mut ps = ParamSet::new();
        ps.register("good", Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap(), true, true)
            .unwrap();
        ps.register("bad", Tensor::from_f64(&[2], &[0.5, -1.0]).unwrap(), true, true)
            .unwrap();
        let run = |ps: &mut ParamSet<f64>, with_grad: bool| -> Result<f64> {
            let ga = ps.id_of("good").unwrap();
            let bb = ps.id_of("bad").unwrap();
            let mut tape = Tape::new();
            let a = tape.param(ps, ga);
            let b = tape.param(ps, bb);
            let p = tape.mul(a, b)?;
            let loss = tape.sum(p)?;
            if with_grad {
                tape.backward(loss)?;
                tape.accumulate_param_grads(ps);
                // Sabotage the analytic gradient of 'bad'.
                let t = &mut ps.get_mut(bb).tensor;
                let g: Vec<f64> = t.grad().unwrap().iter().map(|v| v * 1.5).collect();
                t.zero_grad();
                t.accumulate_grad(&g);
            }
            tape.value(loss).item()
        };
        let report = check_params(
            &mut ps,
            |p| run(p, true),
            |p| run(p, false),
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_err > 0.1);
        assert_eq!(report.worst.unwrap().name, "bad");
    }
}
