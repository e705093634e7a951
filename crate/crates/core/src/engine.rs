//! The per-round bandit-feedback protocol and run-level accounting.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::hypotheses::Hypothesis;
use crate::kernels::KernelSpec;
use crate::losses::LossFunction;
use crate::selectors::{Feedback, SelectorState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    Regression,
}

impl Task {
    pub fn metric_name(self) -> &'static str {
        match self {
            Task::Classification => "AMR",
            Task::Regression => "AL",
        }
    }
}

/// One round of the protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    /// 1-based round index.
    pub round: usize,
    pub arm: usize,
    /// Output: `sign(f(x))` for classification, `f(x)` for regression.
    pub prediction: f64,
    pub label: f64,
    pub loss: f64,
    /// Sign mistake; always false for regression.
    pub mistake: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<f64>>,
    pub nanos: u64,
}

impl TrialRecord {
    /// Equality on everything except wall-clock time.
    pub fn same_outcome(&self, other: &TrialRecord) -> bool {
        self.round == other.round
            && self.arm == other.arm
            && self.prediction.to_bits() == other.prediction.to_bits()
            && self.label.to_bits() == other.label.to_bits()
            && self.loss.to_bits() == other.loss.to_bits()
            && self.mistake == other.mistake
            && self.p == other.p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub rounds: usize,
    pub metric_name: String,
    /// AMR (fraction of sign mistakes) or AL (average loss).
    pub metric: f64,
    pub cumulative_loss: f64,
    pub average_loss: f64,
    pub mistakes: usize,
    pub selection_counts: Vec<usize>,
    pub final_q: Vec<f64>,
    pub final_p: Vec<f64>,
    pub seconds: f64,
}

/// A single online run: one selector and one hypothesis per arm.
#[derive(Debug, Clone)]
pub struct OnlineRun<H> {
    loss: LossFunction,
    task: Task,
    selector: SelectorState,
    arms: Vec<H>,
    records: Vec<TrialRecord>,
    rng: ChaCha8Rng,
    snapshot_every: Option<usize>,
}

impl<H: Hypothesis> OnlineRun<H> {
    pub fn new(
        arms: Vec<H>,
        selector: SelectorState,
        loss: LossFunction,
        task: Task,
        seed: u64,
    ) -> Result<Self> {
        if arms.len() != selector.arms() {
            return Err(invalid(format!(
                "{} hypotheses for a selector over {} arms",
                arms.len(),
                selector.arms()
            )));
        }
        if (task == Task::Classification) != loss.kind.is_classification() {
            return Err(Error::InvalidTask(format!(
                "{} loss does not match the {task:?} task",
                loss.kind
            )));
        }
        Ok(Self {
            loss,
            task,
            selector,
            arms,
            records: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            snapshot_every: None,
        })
    }

    /// Records a `p` snapshot every `every` rounds (and on round 1).
    pub fn with_snapshots(mut self, every: usize) -> Self {
        self.snapshot_every = (every > 0).then_some(every);
        self
    }

    pub fn selector(&self) -> &SelectorState {
        &self.selector
    }

    pub fn arms(&self) -> &[H] {
        &self.arms
    }

    pub fn records(&self) -> &[TrialRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<TrialRecord> {
        self.records
    }

    pub fn step(&mut self, x: &[f64], y: f64) -> Result<&TrialRecord> {
        let round = self.records.len() + 1;
        let record = self.play(round, x, y).map_err(|e| Error::Round {
            round,
            source: Box::new(e),
        })?;
        self.records.push(record);
        Ok(self.records.last().expect("just pushed"))
    }

    fn play(&mut self, round: usize, x: &[f64], y: f64) -> Result<TrialRecord> {
        if round > self.selector.horizon() {
            return Err(invalid(format!(
                "round exceeds the configured horizon {}",
                self.selector.horizon()
            )));
        }
        let start = Instant::now();
        let p_snapshot = match self.snapshot_every {
            Some(every) if round == 1 || round.is_multiple_of(every) => {
                Some(self.selector.p().to_vec())
            }
            _ => None,
        };
        let draw: f64 = self.rng.random();
        let arm = self.selector.sample(draw)?;
        let p_arm = self.selector.p()[arm];

        let hypothesis = &mut self.arms[arm];
        let probe = hypothesis.probe(x)?;
        let raw = hypothesis.prediction(&probe);
        let loss = self.loss.value(raw, y)?;
        let derivative = self.loss.derivative(raw, y)?;
        let grad_sq_norm = derivative * derivative * hypothesis.direction_sq_norm(&probe);

        let stepsize = self.selector.observe(Feedback {
            arm,
            loss,
            grad_sq_norm,
        })?;
        hypothesis.descend(x, probe, stepsize * derivative / p_arm)?;

        let (prediction, mistake) = match self.task {
            Task::Classification => {
                let s = if raw >= 0.0 { 1.0 } else { -1.0 };
                (s, s != y)
            }
            Task::Regression => (raw, false),
        };
        Ok(TrialRecord {
            round,
            arm,
            prediction,
            label: y,
            loss,
            mistake,
            p: p_snapshot,
            nanos: start.elapsed().as_nanos() as u64,
        })
    }

    /// Plays every example of the stream in order.
    pub fn run_stream<'a, I>(&mut self, stream: I) -> Result<RunSummary>
    where
        I: IntoIterator<Item = (&'a [f64], f64)>,
    {
        let start = Instant::now();
        let before = self.records.len();
        for (x, y) in stream {
            self.step(x, y)?;
        }
        if self.records.len() == before {
            return Err(invalid("empty stream"));
        }
        let mut summary = self.summary();
        summary.seconds = start.elapsed().as_secs_f64();
        Ok(summary)
    }

    pub fn summary(&self) -> RunSummary {
        let rounds = self.records.len();
        let cumulative_loss: f64 = self.records.iter().map(|r| r.loss).sum();
        let mistakes = self.records.iter().filter(|r| r.mistake).count();
        let mut selection_counts = vec![0; self.arms.len()];
        for r in &self.records {
            selection_counts[r.arm] += 1;
        }
        let n = rounds.max(1) as f64;
        let average_loss = cumulative_loss / n;
        let metric = match self.task {
            Task::Classification => mistakes as f64 / n,
            Task::Regression => average_loss,
        };
        RunSummary {
            rounds,
            metric_name: self.task.metric_name().to_string(),
            metric,
            cumulative_loss,
            average_loss,
            mistakes,
            selection_counts,
            final_q: self.selector.q().to_vec(),
            final_p: self.selector.p().to_vec(),
            seconds: self.records.iter().map(|r| r.nanos as f64).sum::<f64>() * 1e-9,
        }
    }
}

/// Upper bound on the best cumulative loss inside one arm's norm ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate {
    pub kernel: KernelSpec,
    /// Cumulative loss of the best iterate found; an upper bound on the optimum.
    pub cumulative_loss: f64,
    pub epochs: usize,
    pub approximate: bool,
}

/// Gram matrices larger than this many entries are evaluated on the fly.
const GRAM_CACHE_LIMIT: usize = 25_000_000;

/// Trains a hypothesis in the arm's radius-`U` ball by multi-epoch projected
/// stochastic gradient descent with full feedback (step `U / sqrt(e T)` in
/// epoch `e`), and returns the smallest end-of-epoch cumulative loss over the
/// stream, the zero hypothesis included.
pub fn offline_oracle(
    xs: &[Vec<f64>],
    ys: &[f64],
    kernel: KernelSpec,
    loss: &LossFunction,
    radius: f64,
    epochs: usize,
) -> Result<OracleEstimate> {
    let n = xs.len();
    if n == 0 || ys.len() != n {
        return Err(invalid(
            "oracle needs a non-empty stream with one label per point",
        ));
    }
    if !(radius > 0.0) {
        return Err(invalid("radius must be positive"));
    }
    let gram = (n * n <= GRAM_CACHE_LIMIT).then(|| {
        let mut g = vec![0.0; n * n];
        for i in 0..n {
            g[i * n + i] = kernel.diagonal();
            for j in 0..i {
                let v = kernel.eval_unchecked(&xs[i], &xs[j]);
                g[i * n + j] = v;
                g[j * n + i] = v;
            }
        }
        g
    });
    let row = |i: usize, alpha: &[f64]| -> f64 {
        match &gram {
            Some(g) => g[i * n..(i + 1) * n]
                .iter()
                .zip(alpha)
                .map(|(k, a)| k * a)
                .sum(),
            None => alpha
                .iter()
                .enumerate()
                .filter(|(_, a)| **a != 0.0)
                .map(|(j, a)| a * kernel.eval_unchecked(&xs[j], &xs[i]))
                .sum(),
        }
    };

    let mut alpha = vec![0.0; n];
    let mut sq_norm = 0.0;
    let mut best = ys
        .iter()
        .map(|&y| loss.value(0.0, y))
        .sum::<Result<f64>>()?;
    let t = n as f64;
    for epoch in 1..=epochs {
        let step = radius / (epoch as f64 * t).sqrt();
        for i in 0..n {
            let fx = row(i, &alpha);
            let c = -step * loss.derivative(fx, ys[i])?;
            if c == 0.0 {
                continue;
            }
            sq_norm = (sq_norm + 2.0 * c * fx + c * c * kernel.diagonal()).max(0.0);
            alpha[i] += c;
            if sq_norm > radius * radius {
                let scale = radius / sq_norm.sqrt();
                alpha.iter_mut().for_each(|a| *a *= scale);
                sq_norm = radius * radius;
            }
        }
        let total = (0..n)
            .map(|i| loss.value(row(i, &alpha), ys[i]))
            .sum::<Result<f64>>()?;
        if !total.is_finite() {
            return Err(Error::Numerical(format!(
                "oracle loss diverged in epoch {epoch}"
            )));
        }
        best = best.min(total);
    }
    Ok(OracleEstimate {
        kernel,
        cumulative_loss: best,
        epochs,
        approximate: true,
    })
}

/// Learner loss minus the best oracle estimate across arms. Because the
/// oracle only upper-bounds each arm's optimum, this lower-bounds the regret.
pub fn diagnostic_regret(learner_cumulative_loss: f64, oracles: &[OracleEstimate]) -> f64 {
    let best = oracles
        .iter()
        .map(|o| o.cumulative_loss)
        .fold(f64::INFINITY, f64::min);
    learner_cumulative_loss - best
}
