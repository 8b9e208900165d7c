//! Online gradient boosting machinery: composite losses, shrinkage state
//! with interval projection, max-norm bounding of weak-learner outputs, and
//! regret accounting.
//!
//! A composite loss evaluates a base loss through a link inverse, so the
//! boosted score vector is trained directly: each weak learner receives the
//! loss gradient at the previous partial sum as its descent signal, and the
//! partial sums chain as `F_i = (1 - theta_i) F_{i-1} + eta * out_i` with
//! `F_0 = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self};

/// A base loss composed with its canonical link inverse.
///
/// `Logistic` scores are one-dimensional with labels in `{0, 1}`;
/// `SoftmaxCrossEntropy` scores carry one entry per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CompositeLoss {
    Logistic,
    SoftmaxCrossEntropy { classes: usize },
}

impl CompositeLoss {
    pub fn name(&self) -> &'static str {
        match self {
            CompositeLoss::Logistic => "logistic",
            CompositeLoss::SoftmaxCrossEntropy { .. } => "softmax-cross-entropy",
        }
    }

    /// Width of the score vector the loss consumes.
    pub fn score_width(&self) -> usize {
        match self {
            CompositeLoss::Logistic => 1,
            CompositeLoss::SoftmaxCrossEntropy { classes } => *classes,
        }
    }

    pub fn class_count(&self) -> usize {
        match self {
            CompositeLoss::Logistic => 2,
            CompositeLoss::SoftmaxCrossEntropy { classes } => *classes,
        }
    }

    fn validate(&self, scores: &[f64], label: usize) -> Result<()> {
        if scores.len() != self.score_width() {
            return Err(Error::LengthMismatch {
                op: "composite loss",
                expected: self.score_width(),
                got: scores.len(),
            });
        }
        if label >= self.class_count() {
            return Err(Error::InvalidLabel {
                label,
                classes: self.class_count(),
            });
        }
        Ok(())
    }

    /// Link inverse mapping scores into the label simplex. Outputs one
    /// probability per class and sum to 1 within 1e-12.
    pub fn link_inverse(&self, scores: &[f64]) -> Result<Vec<f64>> {
        match self {
            CompositeLoss::Logistic => {
                if scores.len() != 1 {
                    return Err(Error::LengthMismatch {
                        op: "link_inverse",
                        expected: 1,
                        got: scores.len(),
                    });
                }
                let p = math::sigmoid(scores[0]);
                Ok(vec![1.0 - p, p])
            }
            CompositeLoss::SoftmaxCrossEntropy { .. } => math::stable_softmax(scores),
        }
    }

    /// Loss value and its gradient with respect to the score vector.
    ///
    /// Both losses reduce to `link_inverse(scores) - onehot(label)` on the
    /// score coordinates.
    pub fn loss_and_gradient(&self, scores: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
        self.validate(scores, label)?;
        match self {
            CompositeLoss::Logistic => {
                let sign = if label == 1 { 1.0 } else { -1.0 };
                let value = math::softplus(-sign * scores[0]);
                let grad = math::sigmoid(scores[0]) - label as f64;
                Ok((value, vec![grad]))
            }
            CompositeLoss::SoftmaxCrossEntropy { .. } => {
                let log_probs = math::stable_log_softmax(scores)?;
                let value = -log_probs[label];
                let mut grad: Vec<f64> = log_probs.iter().map(|l| l.exp()).collect();
                grad[label] -= 1.0;
                Ok((value, grad))
            }
        }
    }

    pub fn value(&self, scores: &[f64], label: usize) -> Result<f64> {
        Ok(self.loss_and_gradient(scores, label)?.0)
    }

    pub fn gradient(&self, scores: &[f64], label: usize) -> Result<Vec<f64>> {
        Ok(self.loss_and_gradient(scores, label)?.1)
    }

    /// Predicted class: argmax of the link inverse, lowest index on ties.
    pub fn predict_class(&self, scores: &[f64]) -> Result<usize> {
        let probs = self.link_inverse(scores)?;
        let mut best = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = i;
            }
        }
        Ok(best)
    }
}

/// Descent signal for weak learner `i`: the composite-loss gradient
/// evaluated at the previous partial sum. The learner's target is the
/// negative of this direction.
pub fn learner_descent_signal(
    loss: &CompositeLoss,
    prev_partial: &[f64],
    label: usize,
) -> Result<Vec<f64>> {
    loss.gradient(prev_partial, label)
}

/// One step of the partial-sum recursion:
/// `(1 - theta_i) * prev + eta * module_out`.
pub fn combine_partial(
    prev: &[f64],
    module_out: &[f64],
    theta_i: f64,
    eta: f64,
) -> Result<Vec<f64>> {
    if prev.len() != module_out.len() {
        return Err(Error::LengthMismatch {
            op: "combine_partial",
            expected: prev.len(),
            got: module_out.len(),
        });
    }
    if !(0.0..=eta).contains(&theta_i) {
        return Err(Error::InvalidArgument(format!(
            "shrinkage {theta_i} outside [0, {eta}]"
        )));
    }
    Ok(prev
        .iter()
        .zip(module_out)
        .map(|(f, m)| (1.0 - theta_i) * f + eta * m)
        .collect())
}

/// Per-learner shrinkage values, projected into `[0, eta]` after every
/// update.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShrinkageState {
    theta: Vec<f64>,
    eta: f64,
    theta_learning_rate: f64,
}

impl ShrinkageState {
    /// `eta` must lie in `[1/N, 1]` for `N` learners.
    pub fn new(learners: usize, eta: f64, theta_learning_rate: f64) -> Result<Self> {
        if learners == 0 {
            return Err(Error::InvalidArgument("need at least one learner".into()));
        }
        let lo = 1.0 / learners as f64;
        if !(lo..=1.0).contains(&eta) {
            return Err(Error::InvalidArgument(format!(
                "step size {eta} outside [{lo}, 1] for {learners} learners"
            )));
        }
        if !(theta_learning_rate > 0.0) {
            return Err(Error::InvalidArgument(
                "shrinkage learning rate must be positive".into(),
            ));
        }
        Ok(ShrinkageState {
            theta: vec![0.0; learners],
            eta,
            theta_learning_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn theta_learning_rate(&self) -> f64 {
        self.theta_learning_rate
    }

    /// Gradient step on one shrinkage value, clipped back into `[0, eta]`.
    pub fn update(&mut self, index: usize, grad: f64) {
        let next = self.theta[index] - self.theta_learning_rate * grad;
        self.theta[index] = next.clamp(0.0, self.eta);
    }

    /// Used by checkpoint loading; values are re-projected defensively.
    pub fn restore(learners: usize, eta: f64, lr: f64, theta: Vec<f64>) -> Result<Self> {
        let mut state = ShrinkageState::new(learners, eta, lr)?;
        if theta.len() != learners {
            return Err(Error::LengthMismatch {
                op: "ShrinkageState::restore",
                expected: learners,
                got: theta.len(),
            });
        }
        state.theta = theta.iter().map(|t| t.clamp(0.0, eta)).collect();
        Ok(state)
    }
}

/// Predetermined cap on a weak learner's output norm.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MaxNormBound {
    limit: f64,
}

impl MaxNormBound {
    pub fn new(limit: f64) -> Result<Self> {
        if !(limit > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "max-norm bound must be positive, got {limit}"
            )));
        }
        Ok(MaxNormBound { limit })
    }

    pub fn limit(&self) -> f64 {
        self.limit
    }

    /// Rescales `v` onto the ball of radius `limit` when it sticks out;
    /// shorter vectors pass through unchanged.
    pub fn bound_output(&self, v: &[f64]) -> Vec<f64> {
        let norm = math::l2_norm(v);
        if norm <= self.limit {
            v.to_vec()
        } else {
            let s = self.limit / norm;
            v.iter().map(|x| x * s).collect()
        }
    }

    /// Backward pass of [`bound_output`](Self::bound_output) at the raw
    /// (pre-bound) vector `v`.
    pub fn bound_backward(&self, v: &[f64], upstream: &[f64]) -> Vec<f64> {
        let norm = math::l2_norm(v);
        if norm <= self.limit {
            return upstream.to_vec();
        }
        // d/dv of v * limit/|v| is limit/|v| (I - vv^T/|v|^2)
        let s = self.limit / norm;
        let vg = math::dot(v, upstream) / (norm * norm);
        v.iter()
            .zip(upstream)
            .map(|(vi, g)| s * (g - vi * vg))
            .collect()
    }
}

/// Cumulative loss accounting for the ensemble and each learner, plus the
/// initial-error accumulator (loss of the zero score minus ensemble loss).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RegretLedger {
    per_learner: Vec<f64>,
    ensemble_total: f64,
    initial_error: f64,
    steps: u64,
}

impl RegretLedger {
    pub fn new(learners: usize) -> Self {
        RegretLedger {
            per_learner: vec![0.0; learners],
            ensemble_total: 0.0,
            initial_error: 0.0,
            steps: 0,
        }
    }

    /// Adds one example's losses: the loss at each head's partial sum, the
    /// ensemble loss (last head), and the loss of the zero score.
    pub fn record(&mut self, head_losses: &[f64], ensemble_loss: f64, loss_at_zero: f64) {
        debug_assert_eq!(head_losses.len(), self.per_learner.len());
        for (total, l) in self.per_learner.iter_mut().zip(head_losses) {
            *total += l;
        }
        self.ensemble_total += ensemble_loss;
        self.initial_error += loss_at_zero - ensemble_loss;
        self.steps += 1;
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn ensemble_total(&self) -> f64 {
        self.ensemble_total
    }

    pub fn per_learner_totals(&self) -> &[f64] {
        &self.per_learner
    }

    pub fn initial_error(&self) -> f64 {
        self.initial_error
    }

    /// Total loss of the best single head in hindsight, a practical
    /// comparator for empirical regret.
    pub fn best_learner_total(&self) -> Option<(usize, f64)> {
        self.per_learner
            .iter()
            .cloned()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }

    /// Ensemble total minus an arbitrary comparator's total.
    pub fn empirical_regret(&self, comparator_total: f64) -> f64 {
        self.ensemble_total - comparator_total
    }
}
