//! Per-arm hypotheses and their importance-weighted projected gradient steps.
//!
//! [`RkhsHypothesis`] is a support-vector expansion kept inside the norm ball
//! of radius `U`; [`RfHypothesis`] is a linear model over random features kept
//! inside the box `||w||_inf <= U / sqrt(D)`.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, invalid, Error, Result};
use crate::kernels::{FeatureMap, KernelSpec};
use crate::losses::LossFunction;

/// The interface the online loop needs from an arm's learner.
///
/// A round evaluates the arm once through [`Hypothesis::probe`]; the same
/// probe is reused for the prediction and for the gradient step.
pub trait Hypothesis {
    type Probe;

    fn probe(&self, x: &[f64]) -> Result<Self::Probe>;

    fn prediction(&self, probe: &Self::Probe) -> f64;

    /// Squared norm of the gradient direction per unit loss derivative:
    /// `k(x, x)` in an RKHS, `||z(x)||^2` for random features.
    fn direction_sq_norm(&self, probe: &Self::Probe) -> f64;

    /// Moves along `-step * direction(x)` and projects back onto the
    /// restricted class. A zero step leaves the hypothesis untouched.
    fn descend(&mut self, x: &[f64], probe: Self::Probe, step: f64) -> Result<()>;

    /// Hash of the full learner state, used to check bandit-feedback purity.
    fn digest(&self) -> u64;
}

/// `f = sum_j a_j k(x_j, .)` with tracked `||f||^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RkhsHypothesis {
    kernel: KernelSpec,
    input_dim: usize,
    /// Row-major support points.
    points: Vec<f64>,
    coefficients: Vec<f64>,
    sq_norm: f64,
    /// Ball radius; `f64::INFINITY` disables the projection.
    radius: f64,
}

impl RkhsHypothesis {
    pub fn new(kernel: KernelSpec, input_dim: usize, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(invalid("radius must be positive"));
        }
        if input_dim == 0 {
            return Err(invalid("input dimension must be at least 1"));
        }
        Ok(Self {
            kernel,
            input_dim,
            points: Vec::new(),
            coefficients: Vec::new(),
            sq_norm: 0.0,
            radius,
        })
    }

    pub fn kernel(&self) -> KernelSpec {
        self.kernel
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn sq_norm(&self) -> f64 {
        self.sq_norm
    }

    pub fn support_len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn support_point(&self, j: usize) -> &[f64] {
        &self.points[j * self.input_dim..(j + 1) * self.input_dim]
    }

    /// Appends `coefficient * k(point, .)` without projecting.
    pub fn push_support(&mut self, point: &[f64], coefficient: f64) -> Result<()> {
        let fx = self.predict(point)?;
        self.append(point, fx, coefficient)
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.eval(x))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(invalid(format!(
                "dimension mismatch: hypothesis expects {}, got {}",
                self.input_dim,
                x.len()
            )));
        }
        check_finite(x, "input")
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.points
            .chunks_exact(self.input_dim)
            .zip(&self.coefficients)
            .map(|(p, a)| a * self.kernel.eval_unchecked(p, x))
            .sum()
    }

    /// `||f||^2` recomputed from the full Gram quadratic form.
    pub fn exact_sq_norm(&self) -> f64 {
        let n = self.support_len();
        let mut total = 0.0;
        for i in 0..n {
            let pi = self.support_point(i);
            let ai = self.coefficients[i];
            total += ai * ai * self.kernel.diagonal();
            for j in 0..i {
                total += 2.0
                    * ai
                    * self.coefficients[j]
                    * self.kernel.eval_unchecked(pi, self.support_point(j));
            }
        }
        total
    }

    /// Importance-weighted projected gradient step:
    /// `f <- Proj(f - stepsize * inv_prob * l'(f(x), y) k(x, .))`.
    pub fn ogd_step(
        &mut self,
        x: &[f64],
        y: f64,
        loss: &LossFunction,
        stepsize: f64,
        inv_prob: f64,
    ) -> Result<()> {
        check_step(stepsize, inv_prob)?;
        let fx = self.predict(x)?;
        let derivative = loss.derivative(fx, y)?;
        self.descend(x, fx, stepsize * inv_prob * derivative)
    }

    fn append(&mut self, x: &[f64], fx: f64, c: f64) -> Result<()> {
        let updated = self.sq_norm + 2.0 * c * fx + c * c * self.kernel.diagonal();
        if !updated.is_finite() || !c.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite RKHS update: coefficient {c}, f(x) {fx}, ||f||^2 {} -> {updated}, support {}",
                self.sq_norm,
                self.support_len()
            )));
        }
        self.points.extend_from_slice(x);
        self.coefficients.push(c);
        self.sq_norm = updated.max(0.0);
        Ok(())
    }

    /// Radial projection onto `{ ||f|| <= radius }`.
    pub fn project(&mut self) {
        let r2 = self.radius * self.radius;
        if self.sq_norm > r2 {
            let scale = self.radius / self.sq_norm.sqrt();
            for a in &mut self.coefficients {
                *a *= scale;
            }
            self.sq_norm = r2;
        }
    }
}

fn check_step(stepsize: f64, inv_prob: f64) -> Result<()> {
    if !(stepsize > 0.0) || !stepsize.is_finite() {
        return Err(invalid(format!(
            "stepsize must be positive, got {stepsize}"
        )));
    }
    if !(inv_prob >= 1.0) || !inv_prob.is_finite() {
        return Err(invalid(format!(
            "inverse probability must be >= 1, got {inv_prob}"
        )));
    }
    Ok(())
}

impl Hypothesis for RkhsHypothesis {
    /// `f(x)`
    type Probe = f64;

    fn probe(&self, x: &[f64]) -> Result<f64> {
        self.predict(x)
    }

    fn prediction(&self, probe: &f64) -> f64 {
        *probe
    }

    fn direction_sq_norm(&self, _probe: &f64) -> f64 {
        self.kernel.diagonal()
    }

    fn descend(&mut self, x: &[f64], fx: f64, step: f64) -> Result<()> {
        if step == 0.0 {
            return Ok(());
        }
        self.append(x, fx, -step)?;
        self.project();
        Ok(())
    }

    fn digest(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.sq_norm.to_bits().hash(&mut h);
        for v in self.points.iter().chain(&self.coefficients) {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

/// `f(x) = w . z(x)` over a fixed random feature map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfHypothesis {
    map: FeatureMap,
    weights: Vec<f64>,
    /// Box half-width is `radius / sqrt(D)`; infinite disables the projection.
    radius: f64,
}

/// Features and prediction of one evaluation.
#[derive(Debug, Clone)]
pub struct RfProbe {
    pub features: Vec<f64>,
    pub prediction: f64,
}

impl RfHypothesis {
    pub fn new(map: FeatureMap, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(invalid("radius must be positive"));
        }
        let weights = vec![0.0; map.dimension()];
        Ok(Self {
            map,
            weights,
            radius,
        })
    }

    pub fn map(&self) -> &FeatureMap {
        &self.map
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Replaces the weights, projecting them into the box.
    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.weights.len() {
            return Err(invalid("weight vector has wrong dimension"));
        }
        check_finite(&weights, "weights")?;
        self.weights = weights;
        project_box(&mut self.weights, self.radius);
        Ok(())
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.probe(x)?.prediction)
    }

    pub fn ogd_step(
        &mut self,
        x: &[f64],
        y: f64,
        loss: &LossFunction,
        stepsize: f64,
        inv_prob: f64,
    ) -> Result<()> {
        check_step(stepsize, inv_prob)?;
        let probe = self.probe(x)?;
        let derivative = loss.derivative(probe.prediction, y)?;
        self.descend(x, probe, stepsize * inv_prob * derivative)
    }
}

/// Coordinate-wise projection onto `{ |w_j| <= radius / sqrt(D) }`.
pub fn project_box(weights: &mut [f64], radius: f64) {
    let cap = radius / (weights.len() as f64).sqrt();
    for w in weights {
        *w = w.clamp(-cap, cap);
    }
}

impl Hypothesis for RfHypothesis {
    type Probe = RfProbe;

    fn probe(&self, x: &[f64]) -> Result<RfProbe> {
        check_finite(x, "input")?;
        let features = self.map.features(x)?;
        let prediction = self.weights.iter().zip(&features).map(|(w, z)| w * z).sum();
        Ok(RfProbe {
            features,
            prediction,
        })
    }

    fn prediction(&self, probe: &RfProbe) -> f64 {
        probe.prediction
    }

    fn direction_sq_norm(&self, probe: &RfProbe) -> f64 {
        probe.features.iter().map(|z| z * z).sum()
    }

    fn descend(&mut self, _x: &[f64], probe: RfProbe, step: f64) -> Result<()> {
        if step == 0.0 {
            return Ok(());
        }
        if !step.is_finite() {
            return Err(Error::Numerical(format!("non-finite RF step {step}")));
        }
        for (w, z) in self.weights.iter_mut().zip(&probe.features) {
            *w -= step * z;
        }
        project_box(&mut self.weights, self.radius);
        Ok(())
    }

    fn digest(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for v in &self.weights {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

/// Arm whose prediction is `x[0] + offset` and which never learns.
///
/// Streams that carry the label in the first coordinate turn it into an arm
/// with a fixed, known loss, which isolates the selector from the learners.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScriptedArm {
    pub offset: f64,
}

impl Hypothesis for ScriptedArm {
    type Probe = f64;

    fn probe(&self, x: &[f64]) -> Result<f64> {
        x.first()
            .map(|v| v + self.offset)
            .ok_or_else(|| invalid("scripted arm needs a non-empty input"))
    }

    fn prediction(&self, probe: &f64) -> f64 {
        *probe
    }

    fn direction_sq_norm(&self, _probe: &f64) -> f64 {
        1.0
    }

    fn descend(&mut self, _x: &[f64], _probe: f64, _step: f64) -> Result<()> {
        Ok(())
    }

    fn digest(&self) -> u64 {
        self.offset.to_bits()
    }
}
