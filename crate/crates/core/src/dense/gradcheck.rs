//! Central finite-difference gradient checking. The numerical side only ever
//! calls the eval-mode forward pass and the loss, never the backward pass.

use super::matrix::DenseMatrix;
use super::nn::{Batch, TwoBranchNet};
use super::NnError;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Index of the parameter with the largest relative error.
    pub worst: usize,
}

/// Relative error with an absolute floor so parameters whose true gradient is
/// ~0 do not blow up the ratio.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    diff / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn loss_at(net: &TwoBranchNet, batch: &Batch, targets: &DenseMatrix) -> Result<f64, NnError> {
    Ok(TwoBranchNet::soft_ce(&net.predict(batch)?, targets))
}

/// Compares analytic gradients (dropout off) with central differences of
/// step `h` over every parameter.
pub fn check_gradients(
    net: &TwoBranchNet,
    batch: &Batch,
    targets: &DenseMatrix,
    h: f64,
) -> Result<GradCheckReport, NnError> {
    let mut work = net.clone();
    let fwd = work.forward::<rand_chacha::ChaCha8Rng>(batch, None)?;
    work.backward(&fwd, targets)?;
    let analytic = work.flat_grads();
    let base = work.flat_params();

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst: 0,
    };
    let mut probe = base.clone();
    for k in 0..base.len() {
        probe[k] = base[k] + h;
        work.set_flat_params(&probe);
        let plus = loss_at(&work, batch, targets)?;
        probe[k] = base[k] - h;
        work.set_flat_params(&probe);
        let minus = loss_at(&work, batch, targets)?;
        probe[k] = base[k];
        let numeric = (plus - minus) / (2.0 * h);
        let r = rel_err(analytic[k], numeric);
        report.max_abs_err = report.max_abs_err.max((analytic[k] - numeric).abs());
        if r > report.max_rel_err {
            report.max_rel_err = r;
            report.worst = k;
        }
        report.checked += 1;
    }
    Ok(report)
}
