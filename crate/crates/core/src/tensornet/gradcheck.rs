//! Central-difference gradient checking.

use super::network::Network;
use super::ops::softmax_xent;
use super::Tensor;
use crate::Result;

/// Worst disagreement between analytic and numeric gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub layer: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn loss(net: &Network<f64>, x: &Tensor<f64>, label: usize) -> Result<f64> {
    Ok(softmax_xent(&net.logits(x)?, label).0)
}

/// Writes parameter `k` of conv `li` (weights, then biases) and returns the
/// previous value.
fn set(net: &mut Network<f64>, li: usize, k: usize, value: f64) -> f64 {
    let p = &mut net.params_mut()[li];
    let nw = p.weight.len();
    let slot = if k < nw { &mut p.weight[k] } else { &mut p.bias[k - nw] };
    std::mem::replace(slot, value)
}

/// Compares backprop against central differences of the cross-entropy loss
/// for every parameter (inference mode, so dropout is inactive).
pub fn grad_check(net: &Network<f64>, x: &Tensor<f64>, label: usize, eps: f64) -> Result<GradCheckReport> {
    let trace = net.trace(x, None)?;
    let (_, dlogits) = softmax_xent(&trace.logits, label);
    let mut grads = net.zero_grads();
    net.backward(&trace, &dlogits, &mut grads);

    let mut probe = net.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        layer: String::new(),
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for (li, g) in grads.layers.iter().enumerate() {
        let nw = g.weight.len();
        for k in 0..nw + g.bias.len() {
            let analytic = if k < nw { g.weight[k] } else { g.bias[k - nw] };
            let orig = set(&mut probe, li, k, 0.0);
            set(&mut probe, li, k, orig + eps);
            let plus = loss(&probe, x, label)?;
            set(&mut probe, li, k, orig - eps);
            let minus = loss(&probe, x, label)?;
            set(&mut probe, li, k, orig);
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(analytic, numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.layer = net.param_names()[li].clone();
                report.index = k;
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
