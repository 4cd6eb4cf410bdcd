//! Nesterov SGD with global gradient-norm clipping and a
//! piecewise-constant learning-rate schedule.

use crate::ctensor::ComplexTensor;
use crate::error::{Error, Result};
use crate::real::Real;

/// Piecewise-constant epoch -> rate map: the rate of an epoch is the
/// entry with the largest start epoch not exceeding it.
#[derive(Clone, Debug, PartialEq)]
pub struct LrSchedule {
    entries: Vec<(usize, f64)>,
}

impl LrSchedule {
    pub fn new(mut entries: Vec<(usize, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid("learning-rate schedule must be nonempty"));
        }
        entries.sort_by_key(|e| e.0);
        if entries[0].0 != 0 {
            return Err(Error::invalid("schedule must define a rate for epoch 0"));
        }
        if entries.iter().any(|&(_, r)| r <= 0.0) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        Ok(LrSchedule { entries })
    }

    /// 0.01 for the first 10 epochs, 0.1 until 130, then annealed by a
    /// factor of 10 at epochs 130 and 160.
    pub fn full_scale() -> Self {
        LrSchedule::new(vec![(0, 0.01), (10, 0.1), (130, 0.01), (160, 0.001)]).unwrap()
    }

    /// Compressed variant for desk-scale runs of ~30 epochs.
    pub fn desk_scale() -> Self {
        LrSchedule::new(vec![(0, 0.01), (3, 0.1), (21, 0.01), (27, 0.001)]).unwrap()
    }

    /// Parse `"0:0.01,10:0.1,130:0.01"`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for part in s.split(',') {
            let (e, r) = part
                .split_once(':')
                .ok_or_else(|| Error::invalid(format!("bad schedule entry '{part}'")))?;
            let epoch: usize = e
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad schedule epoch '{e}'")))?;
            let rate: f64 = r
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad schedule rate '{r}'")))?;
            entries.push((epoch, rate));
        }
        LrSchedule::new(entries)
    }

    pub fn rate(&self, epoch: usize) -> f64 {
        self.entries
            .iter()
            .take_while(|&&(start, _)| start <= epoch)
            .last()
            .map(|&(_, r)| r)
            .unwrap_or(self.entries[0].1)
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }
}

/// Optimizer state: one velocity tensor per parameter.
pub struct OptimState<F> {
    velocity: Vec<ComplexTensor<F>>,
    pub momentum: f64,
    pub clip_norm: f64,
    pub schedule: LrSchedule,
}

impl<F: Real> OptimState<F> {
    pub fn new(params: &[ComplexTensor<F>], schedule: LrSchedule) -> Self {
        OptimState {
            velocity: params
                .iter()
                .map(|p| ComplexTensor::zeros(p.shape().clone()))
                .collect(),
            momentum: 0.9,
            clip_norm: 1.0,
            schedule,
        }
    }

    /// Global L2 norm over the concatenated real and imaginary
    /// components of all gradients.
    pub fn global_grad_norm(grads: &[ComplexTensor<F>]) -> f64 {
        grads
            .iter()
            .map(|g| g.sum_abs_sq().to_f64_())
            .sum::<f64>()
            .sqrt()
    }
}

/// One optimizer step: validate, clip the global gradient norm, then
/// apply the Nesterov update `v <- mu*v + g; p <- p - lr*(g + mu*v)`.
///
/// `names` label parameters in diagnostics. Returns the applied
/// learning rate.
pub fn sgd_step<F: Real>(
    params: &mut [ComplexTensor<F>],
    grads: &mut [ComplexTensor<F>],
    names: &[&str],
    state: &mut OptimState<F>,
    epoch: usize,
) -> Result<f64> {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.velocity.len());
    for (g, name) in grads.iter().zip(names) {
        if g.has_non_finite() {
            return Err(Error::Numerical(format!(
                "non-finite gradient for parameter '{name}'"
            )));
        }
    }

    let norm = OptimState::global_grad_norm(grads);
    if norm > state.clip_norm {
        let scale = F::of(state.clip_norm / norm);
        for g in grads.iter_mut() {
            let (re, im) = g.planes_mut();
            re.iter_mut().for_each(|v| *v *= scale);
            im.iter_mut().for_each(|v| *v *= scale);
        }
    }

    let lr = state.schedule.rate(epoch);
    let lr_f = F::of(lr);
    let mu = F::of(state.momentum);
    for ((p, g), v) in params.iter_mut().zip(grads.iter()).zip(&mut state.velocity) {
        let (pre, pim) = p.planes_mut();
        let (vre, vim) = v.planes_mut();
        for i in 0..pre.len() {
            vre[i] = mu * vre[i] + g.re()[i];
            vim[i] = mu * vim[i] + g.im()[i];
            pre[i] -= lr_f * (g.re()[i] + mu * vre[i]);
            pim[i] -= lr_f * (g.im()[i] + mu * vim[i]);
        }
    }
    Ok(lr)
}
