//! Central finite-difference checks against the recorded backward pass.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub rel_tol: f64,
    /// Denominator floor for the relative error, so that gradients that are
    /// zero up to roundoff compare on an absolute scale.
    pub abs_floor: f64,
    /// Check at most this many coordinates per input (all when `None`).
    pub max_coords: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            rel_tol: 1e-4,
            abs_floor: 1e-6,
            max_coords: None,
        }
    }
}

impl GradCheckOptions {
    pub fn composite() -> Self {
        GradCheckOptions {
            rel_tol: 1e-3,
            max_coords: Some(32),
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct Mismatch {
    pub input: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<Mismatch>,
    pub rel_tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.rel_tol
    }
}

/// Compare analytic gradients of the scalar `f(inputs)` against central
/// differences. Every input is re-wrapped as a trainable leaf; `f` must be a
/// deterministic function of the tensors it is given.
pub fn check_gradients<F, R>(
    f: F,
    inputs: &[Tensor],
    opts: &GradCheckOptions,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
    R: Rng + ?Sized,
{
    let leaves: Vec<Tensor> = inputs.iter().map(Tensor::to_param).collect();
    f(&leaves)?.backward()?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
        rel_tol: opts.rel_tol,
    };
    for (which, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let coords: Vec<usize> = match opts.max_coords {
            Some(m) if m < n => sample(rng, n, m).into_vec(),
            _ => (0..n).collect(),
        };
        for coord in coords {
            let eval = |delta: f64| -> Result<f64> {
                let mut data = input.to_vec();
                data[coord] += delta;
                let mut args: Vec<Tensor> = inputs.iter().map(Tensor::detach).collect();
                args[which] = Tensor::new(data, input.dims().to_vec())?;
                f(&args)?.item()
            };
            let numeric = (eval(opts.step)? - eval(-opts.step)?) / (2.0 * opts.step);
            let a = analytic[which][coord];
            let denom = a.abs().max(numeric.abs()).max(opts.abs_floor);
            let err = (a - numeric).abs() / denom;
            report.checked += 1;
            if err >= report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some(Mismatch {
                    input: which,
                    coord,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}
