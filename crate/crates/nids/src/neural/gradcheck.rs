//! Finite-difference verification of the analytic gradients. Used by the
//! test suites; exported because it is also a handy diagnostic when an
//! architecture is changed.

use super::loss::{batch_loss, batch_loss_grad, FocalLossParams};
use super::tensor::Tensor;
use super::{backward, forward, Mode, NetworkSpec, Params};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Location of the worst element, e.g. "layer 2 tensor 0 idx 14".
    pub worst: String,
    pub n_checked: usize,
}

fn rel_error(fd: f64, an: f64) -> f64 {
    (fd - an).abs() / fd.abs().max(an.abs()).max(1e-5)
}

/// Compare analytic gradients of the mean loss against central differences
/// for every trainable parameter and every input element. The forward pass is
/// replayed with the same `mode`, so dropout masks and batch statistics are
/// identical across evaluations.
pub fn check(
    spec: &NetworkSpec,
    params: &Params,
    input: &Tensor,
    labels: &[u8],
    loss_params: &FocalLossParams,
    mode: Mode,
) -> Result<GradCheckReport> {
    let h = 1e-5;
    let pass = forward(spec, params, input, mode)?;
    let d_probs = batch_loss_grad(&pass.probs, labels, None, loss_params);
    let grads = backward(spec, params, &pass, &d_probs)?;

    let eval = |params: &Params, input: &Tensor| -> Result<f64> {
        let pass = forward(spec, params, input, mode)?;
        Ok(batch_loss(&pass.probs, labels, None, loss_params))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        n_checked: 0,
    };
    let record = |fd: f64, an: f64, loc: String, report: &mut GradCheckReport| {
        let e = rel_error(fd, an);
        report.n_checked += 1;
        if e > report.max_rel_error {
            report.max_rel_error = e;
            report.worst = format!("{loc} fd={fd:.3e} an={an:.3e}");
        }
    };

    let mut work = params.clone();
    for li in 0..params.layers.len() {
        for ti in 0..params.layers[li].trainable.len() {
            for i in 0..params.layers[li].trainable[ti].len() {
                let orig = work.layers[li].trainable[ti].data[i];
                work.layers[li].trainable[ti].data[i] = orig + h;
                let up = eval(&work, input)?;
                work.layers[li].trainable[ti].data[i] = orig - h;
                let down = eval(&work, input)?;
                work.layers[li].trainable[ti].data[i] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = grads.layers[li][ti].data[i];
                record(fd, an, format!("layer {li} tensor {ti} idx {i}"), &mut report);
            }
        }
    }

    let mut work_in = input.clone();
    for i in 0..input.len() {
        let orig = work_in.data[i];
        work_in.data[i] = orig + h;
        let up = eval(params, &work_in)?;
        work_in.data[i] = orig - h;
        let down = eval(params, &work_in)?;
        work_in.data[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let an = grads.input.data[i];
        record(fd, an, format!("input idx {i}"), &mut report);
    }

    Ok(report)
}
