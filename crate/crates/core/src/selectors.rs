//! The outer bandit level: which kernel arm to play each round.
//!
//! Three update rules share the same sampling distribution machinery:
//!
//! * **OKS**: exponential weights with fixed `eta`, fixed exploration `delta`
//!   and a fixed inner step size.
//! * **OKS++**: the same exponential weights with loss-adaptive `delta_t`,
//!   `eta_t` and per-arm step sizes.
//! * **IOKS**: online mirror descent with the modified 8-Tsallis regularizer,
//!   a clipped importance-weighted estimator and per-arm learning rates that
//!   increase whenever an arm's probability drops below its threshold.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::losses::LossFunction;

/// Probability vectors must sum to one within this tolerance.
pub const SIMPLEX_TOL: f64 = 1e-10;

/// Smallest relative weight kept by the exponential-weights rules.
const WEIGHT_FLOOR: f64 = 1e-300;

/// Exponent of the Tsallis update: `alpha = 8` gives `-(alpha - 1) / alpha`.
const TSALLIS_POWER: f64 = -7.0 / 8.0;
const TSALLIS_INV_POWER: f64 = -8.0 / 7.0;

fn validate_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() {
        return Err(Error::StateCorruption(format!("{what} is empty")));
    }
    if let Some(i) = p.iter().position(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::StateCorruption(format!(
            "{what}[{i}] = {} is not a probability",
            p[i]
        )));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-8 {
        return Err(Error::StateCorruption(format!("{what} sums to {sum}")));
    }
    Ok(())
}

/// Inverse-CDF sampling: the smallest `i` with `p_0 + ... + p_i > draw`.
pub fn sample_arm(p: &[f64], draw: f64) -> Result<usize> {
    validate_distribution(p, "p")?;
    if !(0.0..1.0).contains(&draw) {
        return Err(invalid(format!("draw must lie in [0, 1), got {draw}")));
    }
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if acc > draw {
            return Ok(i);
        }
    }
    // Rounding left the total just below the draw.
    Ok(p.iter().rposition(|&v| v > 0.0).unwrap_or(p.len() - 1))
}

/// `(1 - delta) q + delta / K`.
pub fn mix_exploration(q: &[f64], delta: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(invalid(format!("delta must lie in [0, 1], got {delta}")));
    }
    let uniform = delta / q.len() as f64;
    Ok(q.iter().map(|&qi| (1.0 - delta) * qi + uniform).collect())
}

/// Normalizes `exp(log_weights)` with the largest weight pinned to one.
fn softmax(log_weights: &[f64]) -> Vec<f64> {
    let max = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let floor = WEIGHT_FLOOR.ln();
    let w: Vec<f64> = log_weights
        .iter()
        .map(|&lw| (lw - max).max(floor).exp())
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Importance-weighted loss estimate: non-zero only at the played arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossEstimate {
    pub arm: usize,
    pub raw_loss: f64,
    pub estimate: Vec<f64>,
}

impl LossEstimate {
    /// Unbiased estimate `c / p_arm` at the played arm.
    pub fn importance_weighted(arms: usize, arm: usize, loss: f64, p_arm: f64) -> Result<Self> {
        if arm >= arms {
            return Err(invalid(format!("arm {arm} out of range for {arms} arms")));
        }
        if !(p_arm > 0.0) {
            return Err(invalid(format!("played arm has probability {p_arm}")));
        }
        let mut estimate = vec![0.0; arms];
        estimate[arm] = loss / p_arm;
        Ok(Self {
            arm,
            raw_loss: loss,
            estimate,
        })
    }

    pub fn value(&self) -> f64 {
        self.estimate[self.arm]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OksParameters {
    pub delta: f64,
    pub lambda: f64,
    pub eta: f64,
    /// Set when the tuned `delta` reached 1 and was clipped.
    pub clipped: bool,
}

/// Exploration, step size and learning rate for OKS balancing the terms of
/// its expected regret bound over horizon `T`.
pub fn oks_parameters(arms: usize, horizon: usize, g: f64, ell_max: f64) -> Result<OksParameters> {
    if arms == 0 || horizon == 0 {
        return Err(invalid("OKS needs at least one arm and one round"));
    }
    if !(g > 0.0) || !(ell_max > 0.0) {
        return Err(invalid("gradient bound and ell_max must be positive"));
    }
    let k = arms as f64;
    let t = horizon as f64;
    let mut delta = (g / ell_max).powf(2.0 / 3.0) * k.powf(1.0 / 3.0) * t.powf(-1.0 / 3.0);
    let clipped = delta >= 1.0;
    if clipped {
        log::warn!(
            "OKS exploration rate {delta:.4} >= 1 for K={arms}, T={horizon}; clipping to 0.99"
        );
        delta = 0.99;
    }
    let lambda = (delta / (k * t * g * g)).sqrt();
    let eta = (2.0 * (1.0 - delta) * k.ln()).sqrt() / (k * t * ell_max * ell_max).sqrt();
    Ok(OksParameters {
        delta,
        lambda,
        eta,
        clipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IoksVariant {
    /// Leading constant `3 / 2` of the regret analysis.
    Analysis,
    /// Leading constant 8 used by the benchmark protocol.
    Experiment,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IoksParameters {
    pub delta: f64,
    pub eta_init: f64,
    pub upsilon: f64,
}

pub fn ioks_parameters(
    arms: usize,
    horizon: usize,
    radius: f64,
    g1: f64,
    ell_max: f64,
    variant: IoksVariant,
) -> Result<IoksParameters> {
    if horizon < 2 {
        return Err(invalid("IOKS needs a horizon of at least 2 rounds"));
    }
    if arms == 0 {
        return Err(invalid("IOKS needs at least one arm"));
    }
    if !(radius > 0.0) || !(g1 > 0.0) || !(ell_max > 0.0) {
        return Err(invalid(
            "radius, gradient bound and ell_max must be positive",
        ));
    }
    let t = horizon as f64;
    let k = arms as f64;
    let lead = match variant {
        IoksVariant::Analysis => 1.5,
        IoksVariant::Experiment => 8.0,
    };
    Ok(IoksParameters {
        delta: t.powf(-0.75),
        eta_init: lead * ell_max * k.powf(3.0 / 8.0) / (radius * g1 * (t * t.ln()).sqrt()),
        upsilon: (2.0 / (3.0 * t.ln())).exp(),
    })
}

/// Clipped estimate at the played arm: `c / p` when `p >= max eta`, else
/// `c / (p + max eta)`.
pub fn ioks_estimate(
    c_norm: f64,
    p: &[f64],
    arm: usize,
    eta_per_arm: &[f64],
) -> Result<LossEstimate> {
    if !(0.0..=1.0).contains(&c_norm) {
        return Err(invalid(format!("normalized loss {c_norm} outside [0, 1]")));
    }
    if arm >= p.len() || eta_per_arm.len() != p.len() {
        return Err(invalid(
            "arm index or learning-rate vector inconsistent with p",
        ));
    }
    let max_eta = eta_per_arm.iter().copied().fold(0.0, f64::max);
    let p_arm = p[arm];
    let denom = if p_arm >= max_eta {
        p_arm
    } else {
        p_arm + max_eta
    };
    if !(denom > 0.0) {
        return Err(invalid("played arm has zero probability"));
    }
    let mut estimate = vec![0.0; p.len()];
    estimate[arm] = c_norm / denom;
    Ok(LossEstimate {
        arm,
        raw_loss: c_norm,
        estimate,
    })
}

/// Result of one Tsallis mirror-descent step.
#[derive(Debug, Clone, PartialEq)]
pub struct TsallisStep {
    pub q_next: Vec<f64>,
    /// Normalizing multiplier.
    pub mu: f64,
}

fn tsallis_point(q: &[f64], est: &[f64], eta: &[f64], mu: f64) -> Vec<f64> {
    q.iter()
        .zip(est)
        .zip(eta)
        .map(|((&qi, &ci), &ei)| (qi.powf(TSALLIS_POWER) + ei * (ci - mu)).powf(TSALLIS_INV_POWER))
        .collect()
}

fn tsallis_mass(q: &[f64], est: &[f64], eta: &[f64], mu: f64) -> f64 {
    tsallis_point(q, est, eta, mu).iter().sum()
}

/// Solves `q_next_i = (q_i^{-7/8} + eta_i (c_i - mu))^{-8/7}` with `mu` chosen
/// so that `q_next` sums to one.
///
/// The mass is strictly increasing in `mu` below the first pole
/// `min_i (c_i + q_i^{-7/8} / eta_i)`. At `mu = min(0, min_i c_i)` every base
/// is at least `q_i^{-7/8}`, so the mass is at most one there.
pub fn ioks_solve(q: &[f64], estimate: &LossEstimate, eta_per_arm: &[f64]) -> Result<TsallisStep> {
    let est = &estimate.estimate;
    if q.len() != est.len() || q.len() != eta_per_arm.len() {
        return Err(invalid("q, estimate and learning rates differ in length"));
    }
    if q.iter().any(|&v| !(v > 0.0)) || eta_per_arm.iter().any(|&v| !(v > 0.0)) {
        return Err(invalid("q entries and learning rates must be positive"));
    }
    if est.iter().any(|v| !v.is_finite()) {
        return Err(invalid("non-finite loss estimate"));
    }
    if est.iter().all(|&c| c == 0.0) {
        return Ok(TsallisStep {
            q_next: q.to_vec(),
            mu: 0.0,
        });
    }

    let dump = || format!("q={q:?} estimate={est:?} eta={eta_per_arm:?}");
    let mut lo = est.iter().copied().fold(0.0, f64::min);
    let pole = q
        .iter()
        .zip(est)
        .zip(eta_per_arm)
        .map(|((&qi, &ci), &ei)| ci + qi.powf(TSALLIS_POWER) / ei)
        .fold(f64::INFINITY, f64::min);

    let mut gap = (pole - lo) / 2.0;
    let mut hi = pole - gap;
    let mut widenings = 0;
    while tsallis_mass(q, est, eta_per_arm, hi) < 1.0 {
        gap /= 2.0;
        hi = pole - gap;
        widenings += 1;
        if widenings > 2000 || !(hi > lo) || !(gap > 0.0) {
            return Err(Error::Numerical(format!(
                "Tsallis normalizer not bracketed: {}",
                dump()
            )));
        }
    }

    let mut mu = lo;
    for _ in 0..200 {
        mu = 0.5 * (lo + hi);
        let mass = tsallis_mass(q, est, eta_per_arm, mu);
        if (mass - 1.0).abs() <= 1e-13 {
            break;
        }
        if mass < 1.0 {
            lo = mu;
        } else {
            hi = mu;
        }
        if hi - lo <= f64::EPSILON * mu.abs().max(1.0) {
            break;
        }
    }
    let q_next = tsallis_point(q, est, eta_per_arm, mu);
    let mass: f64 = q_next.iter().sum();
    if (mass - 1.0).abs() > SIMPLEX_TOL || q_next.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Numerical(format!(
            "Tsallis step did not normalize (mass {mass}, mu {mu}): {}",
            dump()
        )));
    }
    Ok(TsallisStep { q_next, mu })
}

/// Adaptive quantities of OKS++ for the current round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OksPlusPlusSchedule {
    pub delta: f64,
    pub eta: f64,
    pub lambdas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OksState {
    pub params: OksParameters,
    pub log_weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OksPlusPlusState {
    pub radius: f64,
    /// `G` substituted into the schedules (1 for second-order smooth losses).
    pub gradient_bound: f64,
    pub c0: f64,
    /// Sum over rounds of the estimate vectors.
    pub cum_est_losses: Vec<f64>,
    /// Sum over rounds and arms of the estimates.
    pub tilde_c: f64,
    /// Sum over rounds of `sum_i q_i c_i^2`.
    pub sum_q_c2: f64,
    /// Per-arm importance-weighted cumulative loss.
    pub arm_loss: Vec<f64>,
    pub delta: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IoksState {
    pub delta: f64,
    pub upsilon: f64,
    pub radius: f64,
    pub ell_max: f64,
    pub eta: Vec<f64>,
    pub rho: Vec<f64>,
    /// Per-arm `sum ||importance-weighted gradient||^2`, driving the step sizes.
    pub grad_sq_sums: Vec<f64>,
    /// Learning-rate raises per arm.
    pub raises: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum UpdateRule {
    Oks(OksState),
    OksPlusPlus(OksPlusPlusState),
    Ioks(IoksState),
}

/// How to initialize a selector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SelectorConfig {
    Oks(OksParameters),
    OksPlusPlus {
        radius: f64,
        loss: LossFunction,
    },
    Ioks {
        params: IoksParameters,
        radius: f64,
        ell_max: f64,
    },
}

/// One round of bandit feedback for the played arm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feedback {
    pub arm: usize,
    /// Raw (unnormalized) loss of the played arm.
    pub loss: f64,
    /// `||grad_f l||^2` before importance weighting.
    pub grad_sq_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorState {
    q: Vec<f64>,
    p: Vec<f64>,
    horizon: usize,
    rule: UpdateRule,
}

impl SelectorState {
    pub fn new(arms: usize, horizon: usize, config: SelectorConfig) -> Result<Self> {
        if arms == 0 {
            return Err(invalid("selector needs at least one arm"));
        }
        let k = arms as f64;
        let uniform = vec![1.0 / k; arms];
        let rule = match config {
            SelectorConfig::Oks(params) => UpdateRule::Oks(OksState {
                params,
                log_weights: vec![0.0; arms],
            }),
            SelectorConfig::OksPlusPlus { radius, loss } => {
                let c0 = loss.c0.ok_or_else(|| {
                    Error::Unsupported(format!("OKS++ needs a smooth loss, got {}", loss.kind))
                })?;
                let mut state = OksPlusPlusState {
                    radius,
                    gradient_bound: loss.schedule_gradient_bound(),
                    c0,
                    cum_est_losses: vec![0.0; arms],
                    tilde_c: 0.0,
                    sum_q_c2: 0.0,
                    arm_loss: vec![0.0; arms],
                    delta: 0.0,
                    eta: 0.0,
                };
                let s = okspp_schedules(&state, arms);
                state.delta = s.delta;
                state.eta = s.eta;
                UpdateRule::OksPlusPlus(state)
            }
            SelectorConfig::Ioks {
                params,
                radius,
                ell_max,
            } => UpdateRule::Ioks(IoksState {
                delta: params.delta,
                upsilon: params.upsilon,
                radius,
                ell_max,
                eta: vec![params.eta_init; arms],
                rho: vec![2.0 * k; arms],
                grad_sq_sums: vec![0.0; arms],
                raises: vec![0; arms],
            }),
        };
        Ok(Self {
            q: uniform.clone(),
            p: uniform,
            horizon,
            rule,
        })
    }

    pub fn arms(&self) -> usize {
        self.q.len()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn rule(&self) -> &UpdateRule {
        &self.rule
    }

    /// Current exploration rate.
    pub fn delta(&self) -> f64 {
        match &self.rule {
            UpdateRule::Oks(s) => s.params.delta,
            UpdateRule::OksPlusPlus(s) => s.delta,
            UpdateRule::Ioks(s) => s.delta,
        }
    }

    pub fn sample(&self, draw: f64) -> Result<usize> {
        sample_arm(&self.p, draw)
    }

    /// Consumes the played arm's feedback, advances `q` and `p`, and returns
    /// the step size for the played arm's gradient update this round.
    pub fn observe(&mut self, fb: Feedback) -> Result<f64> {
        let arms = self.arms();
        if fb.arm >= arms {
            return Err(invalid(format!("arm {} out of range", fb.arm)));
        }
        if !(fb.loss >= 0.0) || !fb.loss.is_finite() {
            return Err(invalid(format!(
                "loss must be finite and >= 0, got {}",
                fb.loss
            )));
        }
        let p_arm = self.p[fb.arm];
        let stepsize = match &mut self.rule {
            UpdateRule::Oks(state) => {
                let est = LossEstimate::importance_weighted(arms, fb.arm, fb.loss, p_arm)?;
                let (q, p) = oks_update(state, &est)?;
                self.q = q;
                self.p = p;
                state.params.lambda
            }
            UpdateRule::OksPlusPlus(state) => {
                let est = LossEstimate::importance_weighted(arms, fb.arm, fb.loss, p_arm)?;
                let (q, p, schedule) = okspp_update(state, &est, &self.q)?;
                self.q = q;
                self.p = p;
                schedule.lambdas[fb.arm]
            }
            UpdateRule::Ioks(state) => {
                let c_norm = (fb.loss / state.ell_max).min(1.0);
                let est = ioks_estimate(c_norm, &self.p, fb.arm, &state.eta)?;
                state.grad_sq_sums[fb.arm] += fb.grad_sq_norm / (p_arm * p_arm);
                let lambda =
                    state.radius / (2f64.sqrt() * (1.0 + state.grad_sq_sums[fb.arm]).sqrt());
                let step = ioks_solve(&self.q, &est, &state.eta)?;
                let p_next = mix_exploration(&step.q_next, state.delta)?;
                ioks_lr_schedule(state, &p_next);
                self.q = step.q_next;
                self.p = p_next;
                lambda
            }
        };
        self.check_invariants()?;
        Ok(stepsize)
    }

    pub fn check_invariants(&self) -> Result<()> {
        for (name, v) in [("q", &self.q), ("p", &self.p)] {
            let sum: f64 = v.iter().sum();
            if (sum - 1.0).abs() > SIMPLEX_TOL || v.iter().any(|x| !(*x >= 0.0)) {
                return Err(Error::StateCorruption(format!(
                    "{name} = {v:?} (sum {sum})"
                )));
            }
        }
        let floor = self.delta() / self.arms() as f64;
        if self.delta() > 0.0 && self.p.iter().any(|&pi| pi < floor * (1.0 - 1e-12)) {
            return Err(Error::StateCorruption(format!(
                "p = {:?} below exploration floor {floor}",
                self.p
            )));
        }
        Ok(())
    }
}

/// Multiplies the played arm's weight by `exp(-eta * estimate)` and returns
/// the new `(q, p)`.
pub fn oks_update(state: &mut OksState, estimate: &LossEstimate) -> Result<(Vec<f64>, Vec<f64>)> {
    let arm = estimate.arm;
    state.log_weights[arm] -= state.params.eta * estimate.value();
    let q = softmax(&state.log_weights);
    let p = mix_exploration(&q, state.params.delta)?;
    Ok((q, p))
}

/// The loss-adaptive exploration rate, learning rate and per-arm step sizes
/// from the accumulated statistics.
pub fn okspp_schedules(state: &OksPlusPlusState, arms: usize) -> OksPlusPlusSchedule {
    let k = arms as f64;
    let u = state.radius;
    let gc = state.gradient_bound * state.c0;
    let lead = gc.cbrt() * (u * k).powf(2.0 / 3.0);
    let delta = lead / (2.0 * lead.max(2.0 * state.tilde_c.cbrt()));
    let eta = (2.0 * k.ln()).sqrt() / (1.0 + state.sum_q_c2).sqrt();
    let scale = u.powf(4.0 / 3.0)
        * (gc * u * u * k * k)
            .max(8.0 * state.tilde_c)
            .powf(-1.0 / 6.0)
        / ((4.0f64 / 3.0).sqrt() * k.powf(1.0 / 6.0) * gc.cbrt());
    let lambdas = state
        .arm_loss
        .iter()
        .map(|&d| scale / (1.0 + d).sqrt())
        .collect();
    OksPlusPlusSchedule {
        delta,
        eta,
        lambdas,
    }
}

/// Folds one estimate into the OKS++ statistics, then recomputes
/// `q ∝ exp(-eta_t * cumulative estimates)` and mixes with `delta_t`.
/// `q_current` weights the second-moment statistic.
pub fn okspp_update(
    state: &mut OksPlusPlusState,
    estimate: &LossEstimate,
    q_current: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, OksPlusPlusSchedule)> {
    let arms = state.cum_est_losses.len();
    if estimate.estimate.len() != arms || q_current.len() != arms {
        return Err(invalid("estimate or q has the wrong number of arms"));
    }
    for (c, e) in state.cum_est_losses.iter_mut().zip(&estimate.estimate) {
        *c += e;
    }
    let value = estimate.value();
    state.tilde_c += value;
    state.arm_loss[estimate.arm] += value;
    state.sum_q_c2 += q_current
        .iter()
        .zip(&estimate.estimate)
        .map(|(q, c)| q * c * c)
        .sum::<f64>();

    let schedule = okspp_schedules(state, arms);
    state.delta = schedule.delta;
    state.eta = schedule.eta;
    let logits: Vec<f64> = state
        .cum_est_losses
        .iter()
        .map(|&c| -schedule.eta * c)
        .collect();
    let q = softmax(&logits);
    let p = mix_exploration(&q, schedule.delta)?;
    Ok((q, p, schedule))
}

/// Raises `eta_i` by `upsilon` and resets `rho_i = 2 / p_i` for every arm whose
/// inverse probability crossed its threshold.
pub fn ioks_lr_schedule(state: &mut IoksState, p_next: &[f64]) {
    for (i, &pi) in p_next.iter().enumerate() {
        if 1.0 / pi > state.rho[i] {
            state.rho[i] = 2.0 / pi;
            state.eta[i] *= state.upsilon;
            state.raises[i] += 1;
        }
    }
}
