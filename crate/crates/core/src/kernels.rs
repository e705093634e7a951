//! Gaussian kernels and their random Fourier feature maps.

use std::f64::consts::{PI, SQRT_2};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Gaussian widths used by the benchmark protocol: `2^-2, ..., 2^3`.
pub const DEFAULT_WIDTHS: [f64; 6] = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0];

/// Feature count per arm used by the budgeted variants.
pub const DEFAULT_FEATURES: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `exp(-||x - v||^2 / (2 width^2))`
    Gaussian { width: f64, id: usize },
}

impl KernelSpec {
    pub fn gaussian(width: f64, id: usize) -> Result<Self> {
        if !(width > 0.0) || !width.is_finite() {
            return Err(invalid(format!(
                "kernel width must be positive, got {width}"
            )));
        }
        Ok(KernelSpec::Gaussian { width, id })
    }

    /// One Gaussian arm per width, ids in order.
    pub fn gaussian_arms(widths: &[f64]) -> Result<Vec<Self>> {
        if widths.is_empty() {
            return Err(invalid("at least one kernel width is required"));
        }
        widths
            .iter()
            .enumerate()
            .map(|(i, &w)| Self::gaussian(w, i))
            .collect()
    }

    pub fn id(&self) -> usize {
        match *self {
            KernelSpec::Gaussian { id, .. } => id,
        }
    }

    pub fn width(&self) -> f64 {
        match *self {
            KernelSpec::Gaussian { width, .. } => width,
        }
    }

    pub fn eval(&self, x: &[f64], v: &[f64]) -> Result<f64> {
        if x.len() != v.len() {
            return Err(invalid(format!(
                "dimension mismatch: {} vs {}",
                x.len(),
                v.len()
            )));
        }
        Ok(self.eval_unchecked(x, v))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], v: &[f64]) -> f64 {
        match *self {
            KernelSpec::Gaussian { width, .. } => (-sq_dist(x, v) / (2.0 * width * width)).exp(),
        }
    }

    /// `k(x, x)`; identically 1 for the Gaussian family.
    pub fn diagonal(&self) -> f64 {
        1.0
    }
}

#[inline]
pub(crate) fn sq_dist(x: &[f64], v: &[f64]) -> f64 {
    x.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Random Fourier feature map `z(x) = D^{-1/2} (sqrt(2) cos(w_j . x + b_j))_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    kernel: KernelSpec,
    input_dim: usize,
    /// Row-major `dimension x input_dim`.
    frequencies: Vec<f64>,
    phases: Vec<f64>,
    seed: u64,
}

impl FeatureMap {
    /// Samples `dimension` frequencies from the kernel's spectral density.
    pub fn sample(
        kernel: KernelSpec,
        input_dim: usize,
        dimension: usize,
        seed: u64,
    ) -> Result<Self> {
        if dimension == 0 {
            return Err(invalid("feature dimension must be at least 1"));
        }
        if input_dim == 0 {
            return Err(invalid("input dimension must be at least 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (frequencies, phases) = match kernel {
            KernelSpec::Gaussian { width, .. } => {
                let scale = 1.0 / width;
                let freqs: Vec<f64> = (0..dimension * input_dim)
                    .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let phases: Vec<f64> = (0..dimension)
                    .map(|_| rng.random_range(0.0..2.0 * PI))
                    .collect();
                (freqs, phases)
            }
        };
        Ok(Self {
            kernel,
            input_dim,
            frequencies,
            phases,
            seed,
        })
    }

    pub fn kernel(&self) -> KernelSpec {
        self.kernel
    }

    pub fn dimension(&self) -> usize {
        self.phases.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn frequency(&self, j: usize) -> &[f64] {
        &self.frequencies[j * self.input_dim..(j + 1) * self.input_dim]
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    /// Bound on each unscaled feature `|phi(x, w)|`.
    pub fn feature_bound(&self) -> f64 {
        SQRT_2
    }

    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dimension()];
        self.features_into(x, &mut out)?;
        Ok(out)
    }

    pub fn features_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(invalid(format!(
                "dimension mismatch: map expects {}, got {}",
                self.input_dim,
                x.len()
            )));
        }
        if out.len() != self.dimension() {
            return Err(Error::InvalidInput("output buffer has wrong length".into()));
        }
        let scale = SQRT_2 / (self.dimension() as f64).sqrt();
        for (j, (o, b)) in out.iter_mut().zip(&self.phases).enumerate() {
            let w = self.frequency(j);
            let proj: f64 = w.iter().zip(x).map(|(a, c)| a * c).sum();
            *o = scale * (proj + b).cos();
        }
        Ok(())
    }
}
