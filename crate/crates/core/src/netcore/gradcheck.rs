//! Central finite-difference verification of reverse-mode gradients.

use ndarray::Array2;

use super::{Network, ParameterStore};
use crate::error::Result;
use crate::rng;

/// Scalar function of a parameter store with an analytic gradient.
pub trait Objective {
    fn value(&self, params: &ParameterStore<f64>) -> Result<f64>;

    /// Zeroes gradients, accumulates `d value / d params`, returns the value.
    fn gradient(&self, params: &mut ParameterStore<f64>) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub entries_checked: usize,
}

/// Denominator floor for the relative error; entries whose analytic and
/// numeric gradients are both below it are compared absolutely against it.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares the analytic gradient with central differences of step `h`.
/// `entries_per_param` limits how many entries of each tensor are probed
/// (chosen deterministically); `None` checks every entry.
pub fn grad_check_objective<O: Objective>(
    objective: &O,
    params: &mut ParameterStore<f64>,
    h: f64,
    entries_per_param: Option<usize>,
) -> Result<GradCheckReport> {
    let mut probes = Vec::new();
    for (pi, p) in params.iter().enumerate() {
        let n = p.value.len();
        match entries_per_param {
            Some(m) if m < n => probes.extend((0..m).map(|j| {
                (
                    p.name.clone(),
                    (rng::derive(pi as u64, &[j as u64]) % n as u64) as usize,
                )
            })),
            _ => probes.extend((0..n).map(|flat| (p.name.clone(), flat))),
        }
    }
    grad_check_at(objective, params, h, &probes)
}

/// Like [`grad_check_objective`] over an explicit list of (parameter, flat
/// index) entries.
pub fn grad_check_at<O: Objective>(
    objective: &O,
    params: &mut ParameterStore<f64>,
    h: f64,
    probes: &[(String, usize)],
) -> Result<GradCheckReport> {
    objective.gradient(params)?;
    let analytic: Vec<f64> = probes
        .iter()
        .map(|(name, flat)| Ok(params.get(name)?.grad.as_slice().expect("standard layout")[*flat]))
        .collect::<Result<_>>()?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        entries_checked: 0,
    };
    for ((name, flat), a) in probes.iter().zip(analytic) {
        let original = params.get(name)?.value.as_slice().expect("standard layout")[*flat];
        set_entry(params, name, *flat, original + h)?;
        let plus = objective.value(params)?;
        set_entry(params, name, *flat, original - h)?;
        let minus = objective.value(params)?;
        set_entry(params, name, *flat, original)?;
        let numeric = (plus - minus) / (2.0 * h);
        let err = relative_error(a, numeric);
        report.entries_checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = err;
            report.worst = Some((name.clone(), *flat));
        }
    }
    Ok(report)
}

fn set_entry(params: &mut ParameterStore<f64>, name: &str, flat: usize, v: f64) -> Result<()> {
    params
        .value_mut(name)?
        .as_slice_mut()
        .expect("standard layout")[flat] = v;
    Ok(())
}

/// `0.5 * ||net(input, cond)||^2`.
pub struct NetworkObjective<'a> {
    pub net: &'a Network,
    pub input: &'a Array2<f64>,
    pub cond: Option<&'a Array2<f64>>,
}

impl Objective for NetworkObjective<'_> {
    fn value(&self, params: &ParameterStore<f64>) -> Result<f64> {
        let (y, _) = self
            .net
            .forward(params, self.input.view(), self.cond.map(|c| c.view()))?;
        Ok(0.5 * y.iter().map(|v| v * v).sum::<f64>())
    }

    fn gradient(&self, params: &mut ParameterStore<f64>) -> Result<f64> {
        params.zero_grad();
        let (y, tape) = self
            .net
            .forward(params, self.input.view(), self.cond.map(|c| c.view()))?;
        self.net.backward(params, &tape, y.view())?;
        Ok(0.5 * y.iter().map(|v| v * v).sum::<f64>())
    }
}

/// Wraps an objective and negates the analytic gradient of one parameter.
/// Used as a negative control: a correct checker must flag it.
pub struct FlipGradientSign<'a, O> {
    pub inner: &'a O,
    pub param: String,
}

impl<O: Objective> Objective for FlipGradientSign<'_, O> {
    fn value(&self, params: &ParameterStore<f64>) -> Result<f64> {
        self.inner.value(params)
    }

    fn gradient(&self, params: &mut ParameterStore<f64>) -> Result<f64> {
        let v = self.inner.gradient(params)?;
        params.grad_mut(&self.param)?.mapv_inplace(|g| -g);
        Ok(v)
    }
}

/// Checks every entry of every parameter of `net`.
pub fn grad_check(
    net: &Network,
    params: &mut ParameterStore<f64>,
    input: &Array2<f64>,
    cond: Option<&Array2<f64>>,
    h: f64,
) -> Result<GradCheckReport> {
    grad_check_objective(&NetworkObjective { net, input, cond }, params, h, None)
}
