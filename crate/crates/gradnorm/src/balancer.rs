//! Loss-weight balancing strategies: gradient-norm rate equalization plus
//! the equal-weights, static-weights, and uncertainty-weighting baselines.
//!
//! The adaptive balancer holds per-task weights `w_i` (initialized to 1 and
//! renormalized to sum to the task count after every step), the recorded
//! initial losses, and its own Adam state. Each step measures the weighted
//! gradient norms `G_i = w_i * g_i` at the shared layer, forms targets
//! `mean(G) * r_i^alpha` from the relative inverse training rates `r_i`,
//! and moves the weights down the gradient of the L1 gap between norms and
//! targets, holding the targets constant.

use crate::error::{Error, Result};
use crate::optim::{AdamConfig, AdamState};
use crate::scalar::Scalar;

/// Per-step rate and norm measurements, returned for tracing.
#[derive(Debug, Clone, PartialEq)]
pub struct RateSnapshot<T> {
    /// `L_i(t) / L_i(0)` per task.
    pub loss_ratios: Vec<T>,
    /// Loss ratios divided by their mean; averages to 1 by construction.
    pub relative_rates: Vec<T>,
    /// Weighted gradient norms `G_i = w_i * g_i`.
    pub grad_norms: Vec<T>,
    /// Arithmetic mean of `grad_norms`.
    pub mean_grad_norm: T,
}

/// `L_i(t) / L_i(0)` per task. Initial losses must be positive.
pub fn loss_ratios<T: Scalar>(losses: &[T], initial: &[T]) -> Result<Vec<T>> {
    if losses.len() != initial.len() {
        return Err(Error::InvalidArgument(format!(
            "losses ({}) and initial losses ({}) differ in length",
            losses.len(),
            initial.len()
        )));
    }
    for &l0 in initial {
        if !(l0 > T::zero()) {
            return Err(Error::DegenerateLosses(format!(
                "initial loss {l0} is not positive; loss ratios undefined"
            )));
        }
    }
    Ok(losses.iter().zip(initial).map(|(&l, &l0)| l / l0).collect())
}

/// Relative inverse training rates: each loss ratio over the task mean.
/// Rejects an all-zero ratio vector (a converged or broken run).
pub fn relative_rates<T: Scalar>(ratios: &[T]) -> Result<Vec<T>> {
    let mean = mean(ratios);
    if !(mean > T::zero()) {
        return Err(Error::DegenerateLosses(
            "mean loss ratio is not positive; relative rates undefined".into(),
        ));
    }
    Ok(ratios.iter().map(|&r| r / mean).collect())
}

/// Desired gradient norm per task: `mean_norm * r_i^alpha`. The result is
/// treated as a constant by the weight update.
pub fn gradnorm_targets<T: Scalar>(mean_norm: T, rates: &[T], alpha: T) -> Vec<T> {
    rates.iter().map(|&r| mean_norm * r.powf(alpha)).collect()
}

/// L1 gap between actual and target norms, summed over tasks.
pub fn gradnorm_loss<T: Scalar>(norms: &[T], targets: &[T]) -> T {
    norms
        .iter()
        .zip(targets)
        .map(|(&g, &t)| (g - t).abs())
        .sum()
}

/// Analytic `d L_grad / d w_i` with targets held constant.
///
/// Since `G_i = w_i * g_i` is linear in the weight, the subgradient of
/// `|G_i - target_i|` in `w_i` is `sign(G_i - target_i) * g_i`, with
/// `sign(0) = 0` so the zero-gap state is a fixed point.
pub fn gradnorm_weight_gradient<T: Scalar>(
    unweighted_norms: &[T],
    weights: &[T],
    targets: &[T],
) -> Vec<T> {
    unweighted_norms
        .iter()
        .zip(weights)
        .zip(targets)
        .map(|((&g, &w), &t)| {
            let gap = w * g - t;
            if gap > T::zero() {
                g
            } else if gap < T::zero() {
                -g
            } else {
                T::zero()
            }
        })
        .collect()
}

/// Scale weights so they sum to the task count, then clamp to the floor.
/// If clamping fired, the unclamped entries are rescaled so the total is
/// still exact; both the sum and the floor hold on return.
pub fn renormalize<T: Scalar>(weights: &mut [T], floor: T) -> Result<()> {
    let total = T::from_f64(weights.len() as f64);
    let sum: T = weights.iter().copied().sum();
    if !(sum > T::zero()) {
        return Err(Error::NonPositiveWeightSum);
    }
    let scale = total / sum;
    for w in weights.iter_mut() {
        *w = *w * scale;
    }
    let mut clamped = vec![false; weights.len()];
    loop {
        let mut fired = false;
        for (w, c) in weights.iter_mut().zip(&mut clamped) {
            if !*c && *w < floor {
                *w = floor;
                *c = true;
                fired = true;
            }
        }
        if !fired {
            return Ok(());
        }
        let fixed: T = clamped
            .iter()
            .zip(weights.iter())
            .filter(|(c, _)| **c)
            .map(|(_, &w)| w)
            .sum();
        let free: T = clamped
            .iter()
            .zip(weights.iter())
            .filter(|(c, _)| !**c)
            .map(|(_, &w)| w)
            .sum();
        if !(free > T::zero()) {
            // Everything at the floor; nothing left to rescale.
            return Ok(());
        }
        let scale = (total - fixed) / free;
        for (w, c) in weights.iter_mut().zip(&clamped) {
            if !*c {
                *w = *w * scale;
            }
        }
    }
}

/// Equal-weights baseline: all ones, never updated.
pub fn equal_weights<T: Scalar>(num_tasks: usize) -> Vec<T> {
    vec![T::one(); num_tasks]
}

/// Fixed weights, normalized to sum to the task count at construction.
/// Rejects nonpositive entries.
pub fn static_weights<T: Scalar>(fixed: &[T]) -> Result<Vec<T>> {
    if fixed.is_empty() {
        return Err(Error::InvalidArgument("static weights are empty".into()));
    }
    for &w in fixed {
        if !(w > T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "static weight {w} is not positive"
            )));
        }
    }
    let mut out = fixed.to_vec();
    renormalize(&mut out, T::zero())?;
    Ok(out)
}

/// State for the adaptive balancer.
#[derive(Debug, Clone)]
pub struct BalancerState<T> {
    weights: Vec<T>,
    initial_losses: Option<Vec<T>>,
    alpha: T,
    optimizer: AdamState<T>,
    weight_floor: T,
}

pub const DEFAULT_WEIGHT_FLOOR: f64 = 1e-4;
/// Weight-update learning rate shared by the adaptive balancer and the
/// uncertainty baseline.
pub const DEFAULT_WEIGHT_LR: f64 = 0.025;

impl<T: Scalar> BalancerState<T> {
    /// All weights start at 1; initial losses are captured separately.
    pub fn new(num_tasks: usize, alpha: T, optimizer_config: AdamConfig) -> Result<Self> {
        if num_tasks == 0 {
            return Err(Error::InvalidArgument("need at least one task".into()));
        }
        if alpha < T::zero() {
            return Err(Error::InvalidArgument(format!(
                "alpha must be nonnegative, got {alpha}"
            )));
        }
        Ok(BalancerState {
            weights: vec![T::one(); num_tasks],
            initial_losses: None,
            alpha,
            optimizer: AdamState::new(num_tasks, optimizer_config),
            weight_floor: T::from_f64(DEFAULT_WEIGHT_FLOOR),
        })
    }

    pub fn with_weight_floor(mut self, floor: T) -> Self {
        self.weight_floor = floor;
        self
    }

    pub fn num_tasks(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn initial_losses(&self) -> Option<&[T]> {
        self.initial_losses.as_deref()
    }

    /// Drop the weight optimizer's moments (exposed for runs that want a
    /// fresh optimizer each step instead of the persistent default).
    pub fn reset_optimizer(&mut self) {
        self.optimizer.reset();
    }

    /// Record measured first-step losses verbatim. Each must be positive,
    /// else loss ratios are undefined.
    pub fn capture_initial_losses(&mut self, losses: &[T]) -> Result<()> {
        if losses.len() != self.weights.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} initial losses, got {}",
                self.weights.len(),
                losses.len()
            )));
        }
        for &l in losses {
            if !(l > T::zero()) {
                return Err(Error::DegenerateLosses(format!(
                    "initial loss {l} is not positive"
                )));
            }
        }
        self.initial_losses = Some(losses.to_vec());
        Ok(())
    }

    /// Use the theoretical initial loss `ln(C)` of a `C`-class cross-entropy
    /// task instead of a measured value, for setups where the measured
    /// `L_i(0)` depends too sharply on initialization.
    pub fn capture_theoretical_initial_losses(&mut self, class_counts: &[usize]) -> Result<()> {
        let losses: Vec<T> = class_counts
            .iter()
            .map(|&c| T::from_f64((c as f64).ln()))
            .collect();
        self.capture_initial_losses(&losses)
    }

    /// Rate and norm measurements for the current step, without mutating
    /// anything. `unweighted_norms[i]` is `||grad_W L_i||`.
    pub fn diagnostics(
        &self,
        losses: &[T],
        unweighted_norms: &[T],
    ) -> Result<(RateSnapshot<T>, Vec<T>, T)> {
        let initial = self
            .initial_losses
            .as_ref()
            .ok_or(Error::InitialLossesNotSet)?;
        if losses.len() != self.weights.len() || unweighted_norms.len() != self.weights.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} losses and norms, got {} and {}",
                self.weights.len(),
                losses.len(),
                unweighted_norms.len()
            )));
        }
        let grad_norms: Vec<T> = self
            .weights
            .iter()
            .zip(unweighted_norms)
            .map(|(&w, &g)| w * g)
            .collect();
        let mean_grad_norm = mean(&grad_norms);
        let ratios = loss_ratios(losses, initial)?;
        let rates = relative_rates(&ratios)?;
        let targets = gradnorm_targets(mean_grad_norm, &rates, self.alpha);
        let grad_loss = gradnorm_loss(&grad_norms, &targets);
        Ok((
            RateSnapshot {
                loss_ratios: ratios,
                relative_rates: rates,
                grad_norms,
                mean_grad_norm,
            },
            targets,
            grad_loss,
        ))
    }

    /// One balancing step: measure, update the weights by Adam on the
    /// analytic gradient, renormalize. Returns the pre-update snapshot and
    /// the gradient-gap loss.
    pub fn step(&mut self, losses: &[T], unweighted_norms: &[T]) -> Result<(RateSnapshot<T>, T)> {
        let (snapshot, targets, grad_loss) = self.diagnostics(losses, unweighted_norms)?;
        let weight_grad = gradnorm_weight_gradient(unweighted_norms, &self.weights, &targets);
        self.optimizer.update(&mut self.weights, &weight_grad)?;
        renormalize(&mut self.weights, self.weight_floor)?;
        let total = T::from_f64(self.weights.len() as f64);
        let ceiling = total * T::from_f64(0.9);
        if let Some((i, &w)) = self
            .weights
            .iter()
            .enumerate()
            .find(|(_, &w)| w > ceiling)
        {
            log::warn!(
                "task weight w_{i} = {w} exceeds 0.9 * T; a task may be stuck at constant loss"
            );
        }
        Ok((snapshot, grad_loss))
    }
}

/// State for the uncertainty-weighting baseline: learned log-variances
/// `s_i`, effective weights `exp(-s_i)`, no sum constraint.
#[derive(Debug, Clone)]
pub struct UncertaintyState<T> {
    log_variances: Vec<T>,
    optimizer: AdamState<T>,
}

impl<T: Scalar> UncertaintyState<T> {
    pub fn new(num_tasks: usize, optimizer_config: AdamConfig) -> Result<Self> {
        if num_tasks == 0 {
            return Err(Error::InvalidArgument("need at least one task".into()));
        }
        Ok(UncertaintyState {
            log_variances: vec![T::zero(); num_tasks],
            optimizer: AdamState::new(num_tasks, optimizer_config),
        })
    }

    pub fn log_variances(&self) -> &[T] {
        &self.log_variances
    }

    /// `exp(-s_i)` per task; strictly positive.
    pub fn effective_weights(&self) -> Vec<T> {
        self.log_variances.iter().map(|&s| (-s).exp()).collect()
    }

    /// Total objective `sum_i exp(-s_i) L_i + s_i` for the current state.
    pub fn total_loss(&self, losses: &[T]) -> T {
        self.log_variances
            .iter()
            .zip(losses)
            .map(|(&s, &l)| (-s).exp() * l + s)
            .sum()
    }

    /// Analytic `d total / d s_i = -exp(-s_i) L_i + 1`; stationary exactly
    /// where the effective weight matches `1 / L_i`.
    pub fn gradient(&self, losses: &[T]) -> Vec<T> {
        self.log_variances
            .iter()
            .zip(losses)
            .map(|(&s, &l)| -(-s).exp() * l + T::one())
            .collect()
    }

    /// One step: returns the effective weights and total loss as seen by
    /// this step (pre-update), then advances `s` by Adam.
    pub fn step(&mut self, losses: &[T]) -> Result<(Vec<T>, T)> {
        if losses.len() != self.log_variances.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} losses, got {}",
                self.log_variances.len(),
                losses.len()
            )));
        }
        let weights = self.effective_weights();
        let total = self.total_loss(losses);
        let grad = self.gradient(losses);
        self.optimizer.update(&mut self.log_variances, &grad)?;
        Ok((weights, total))
    }
}

fn mean<T: Scalar>(xs: &[T]) -> T {
    xs.iter().copied().sum::<T>() / T::from_f64(xs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;
    use crate::rng::Rng;

    fn balancer(num_tasks: usize, alpha: f64) -> BalancerState<f64> {
        BalancerState::new(
            num_tasks,
            alpha,
            AdamConfig::with_lr(DEFAULT_WEIGHT_LR),
        )
        .unwrap()
    }

    #[test]
    fn capture_stores_measured_losses_verbatim() {
        let mut b = balancer(2, 0.12);
        b.capture_initial_losses(&[4.0, 400.0]).unwrap();
        assert_eq!(b.initial_losses().unwrap(), &[4.0, 400.0]);
    }

    #[test]
    fn theoretical_initial_loss_is_log_of_class_count() {
        let mut b = balancer(1, 0.12);
        b.capture_theoretical_initial_losses(&[13]).unwrap();
        let l0 = b.initial_losses().unwrap()[0];
        assert!((l0 - 2.5649).abs() < 1e-4);
    }

    #[test]
    fn zero_initial_loss_rejected() {
        let mut b = balancer(2, 0.12);
        assert!(b.capture_initial_losses(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn loss_ratio_examples() {
        assert_eq!(loss_ratios(&[4.0, 4.0], &[4.0, 4.0]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(loss_ratios(&[2.0], &[4.0]).unwrap(), vec![0.5]);
        assert_eq!(loss_ratios(&[2.0, 6.0], &[4.0, 4.0]).unwrap(), vec![0.5, 1.5]);
        assert!(loss_ratios(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn relative_rate_examples() {
        for r in relative_rates(&[0.7_f64, 0.7, 0.7]).unwrap() {
            assert!((r - 1.0).abs() < 1e-12);
        }
        assert_eq!(relative_rates(&[0.5, 1.5]).unwrap(), vec![0.5, 1.5]);
        assert!(relative_rates(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn relative_rates_mean_is_one() {
        let mut rng = Rng::new(4);
        for _ in 0..100 {
            let ratios: Vec<f64> = (0..7).map(|_| rng.next_f64() + 1e-3).collect();
            let rates = relative_rates(&ratios).unwrap();
            let m = rates.iter().sum::<f64>() / rates.len() as f64;
            assert!((m - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn target_examples() {
        // alpha = 0 pins every target to the mean norm.
        assert_eq!(gradnorm_targets(3.0_f64, &[0.2, 5.0], 0.0), vec![3.0, 3.0]);
        // unit rates leave targets at the mean for any alpha.
        assert_eq!(gradnorm_targets(2.0_f64, &[1.0, 1.0], 1.7), vec![2.0, 2.0]);
        let t = gradnorm_targets(2.0_f64, &[0.5, 2.0], 1.0);
        assert!((t[0] - 1.0).abs() < 1e-15);
        assert!((t[1] - 4.0).abs() < 1e-15);
    }

    #[test]
    fn gradnorm_loss_examples() {
        assert_eq!(gradnorm_loss(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(gradnorm_loss(&[3.0, 1.0], &[1.0, 1.0]), 2.0);
        let mut rng = Rng::new(6);
        for _ in 0..50 {
            let g: Vec<f64> = (0..4).map(|_| rng.next_f64() * 5.0).collect();
            let t: Vec<f64> = (0..4).map(|_| rng.next_f64() * 5.0).collect();
            assert!(gradnorm_loss(&g, &t) >= 0.0);
        }
    }

    #[test]
    fn weight_gradient_sign_convention() {
        // At the kink the subgradient is zero.
        let grad = gradnorm_weight_gradient(&[2.0], &[1.5], &[3.0]);
        assert_eq!(grad, vec![0.0]);
        // Norm above target pushes the weight down (positive gradient).
        let grad = gradnorm_weight_gradient(&[2.0], &[2.0], &[3.0]);
        assert_eq!(grad, vec![2.0]);
        // Norm below target pulls the weight up.
        let grad = gradnorm_weight_gradient(&[2.0], &[1.0], &[3.0]);
        assert_eq!(grad, vec![-2.0]);
    }

    #[test]
    fn weight_gradient_matches_finite_differences() {
        let mut rng = Rng::new(12);
        let mut checked = 0;
        while checked < 100 {
            let n = 2 + (rng.next_u64() % 4) as usize;
            let g: Vec<f64> = (0..n).map(|_| rng.next_f64() * 4.0 + 0.1).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.next_f64() * 2.0 + 0.05).collect();
            let t: Vec<f64> = (0..n).map(|_| rng.next_f64() * 4.0 + 0.1).collect();
            // Stay away from the L1 kinks where the oracle is invalid.
            let near_kink = g
                .iter()
                .zip(&w)
                .zip(&t)
                .any(|((&g, &w), &t)| (w * g - t).abs() < 1e-3);
            if near_kink {
                continue;
            }
            let analytic = gradnorm_weight_gradient(&g, &w, &t);
            let f = |wv: &[f64]| {
                let norms: Vec<f64> = wv.iter().zip(&g).map(|(&w, &g)| w * g).collect();
                gradnorm_loss(&norms, &t)
            };
            let numeric = gradcheck::gradient(f, &w, 1e-7);
            let err = gradcheck::max_relative_error(&analytic, &numeric);
            assert!(err < 1e-6, "instance {checked}: error {err}");
            checked += 1;
        }
    }

    #[test]
    fn weight_gradient_scale_equivariant() {
        let g = [0.5, 2.0, 1.0];
        let w = [1.2, 0.8, 1.0];
        let t = [1.0, 1.5, 0.7];
        let base = gradnorm_weight_gradient(&g, &w, &t);
        let c = 3.5;
        let gs: Vec<f64> = g.iter().map(|&x| x * c).collect();
        let ts: Vec<f64> = t.iter().map(|&x| x * c).collect();
        let scaled = gradnorm_weight_gradient(&gs, &w, &ts);
        for (a, b) in base.iter().zip(&scaled) {
            assert!((a * c - b).abs() < 1e-12);
        }
    }

    #[test]
    fn renormalize_examples() {
        let mut w = vec![1.0, 1.0];
        renormalize(&mut w, 0.0).unwrap();
        assert_eq!(w, vec![1.0, 1.0]);

        let mut w = vec![2.0, 2.0];
        renormalize(&mut w, 0.0).unwrap();
        assert_eq!(w, vec![1.0, 1.0]);

        let mut w = vec![1.0, 3.0];
        renormalize(&mut w, 0.0).unwrap();
        assert_eq!(w, vec![0.5, 1.5]);

        let mut w = vec![0.0, 0.0];
        assert!(renormalize(&mut w, 0.0).is_err());
    }

    #[test]
    fn renormalize_with_floor_keeps_both_invariants() {
        let mut w = vec![1e-7, 1.0, 2.0];
        renormalize(&mut w, 1e-4).unwrap();
        let sum: f64 = w.iter().sum();
        assert!((sum - 3.0).abs() < 1e-12);
        assert!(w.iter().all(|&x| x >= 1e-4));
    }

    #[test]
    fn equal_weights_examples() {
        let w = equal_weights::<f64>(3);
        assert_eq!(w, vec![1.0, 1.0, 1.0]);
        assert_eq!(w.iter().sum::<f64>(), 3.0);
    }

    #[test]
    fn static_weights_examples() {
        assert_eq!(static_weights(&[1.0_f64, 1.0]).unwrap(), vec![1.0, 1.0]);
        let w = static_weights(&[2.0_f64, 1.0]).unwrap();
        assert!((w[0] - 4.0 / 3.0).abs() < 1e-15);
        assert!((w[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!(static_weights(&[1.0, 0.0]).is_err());
        assert!(static_weights(&[1.0, -2.0]).is_err());
    }

    #[test]
    fn symmetric_tasks_keep_equal_weights() {
        let mut b = balancer(3, 0.12);
        b.capture_initial_losses(&[5.0, 5.0, 5.0]).unwrap();
        for step in 0..1000 {
            let l = 5.0 / (1.0 + step as f64 * 0.01);
            let g = 0.3 / (1.0 + step as f64 * 0.005);
            b.step(&[l, l, l], &[g, g, g]).unwrap();
            for &w in b.weights() {
                assert!((w - 1.0).abs() < 1e-9, "step {step}: w = {w}");
            }
        }
    }

    #[test]
    fn larger_gradient_task_loses_weight() {
        // Equal loss ratios but task 1 backpropagates much larger gradients:
        // the balancer shifts weight toward task 0.
        let mut b = balancer(2, 0.12);
        b.capture_initial_losses(&[1.0, 1.0]).unwrap();
        b.step(&[0.5, 0.5], &[0.1, 10.0]).unwrap();
        let w = b.weights();
        assert!(w[0] > 1.0, "w_0 = {}", w[0]);
        assert!(w[1] < 1.0, "w_1 = {}", w[1]);
    }

    #[test]
    fn weights_always_sum_to_task_count() {
        let mut rng = Rng::new(77);
        let mut b = balancer(4, 0.5);
        b.capture_initial_losses(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        for _ in 0..500 {
            let losses: Vec<f64> = (0..4).map(|_| rng.next_f64() * 3.0 + 0.01).collect();
            let norms: Vec<f64> = (0..4).map(|_| rng.next_f64() * 2.0 + 0.01).collect();
            b.step(&losses, &norms).unwrap();
            let sum: f64 = b.weights().iter().sum();
            assert!((sum - 4.0).abs() < 1e-9);
            assert!(b.weights().iter().all(|&w| w >= DEFAULT_WEIGHT_FLOOR));
        }
    }

    #[test]
    fn step_requires_initial_losses() {
        let mut b = balancer(2, 0.12);
        assert!(matches!(
            b.step(&[1.0, 1.0], &[1.0, 1.0]),
            Err(Error::InitialLossesNotSet)
        ));
    }

    #[test]
    fn alpha_zero_fixed_point_equalizes_weighted_norms() {
        // With constant losses and norms, iterating the update at alpha = 0
        // drives w_i * g_i to a common value, i.e. w_i proportional to 1/g_i.
        let g = [0.4, 2.5];
        let mut b = balancer(2, 0.0);
        b.capture_initial_losses(&[1.0, 1.0]).unwrap();
        for _ in 0..4000 {
            b.step(&[1.0, 1.0], &g).unwrap();
        }
        let w = b.weights();
        let products = [w[0] * g[0], w[1] * g[1]];
        let rel = (products[0] - products[1]).abs() / products[0].max(products[1]);
        assert!(rel < 1e-3, "products {products:?}");
        // Closed form: w_i ∝ 1/g_i, scaled to sum 2.
        let inv_sum = 1.0 / g[0] + 1.0 / g[1];
        for i in 0..2 {
            let expected = 2.0 / g[i] / inv_sum;
            assert!((w[i] - expected).abs() / expected < 1e-2, "w[{i}] = {}", w[i]);
        }
    }

    #[test]
    fn uncertainty_initial_weights_are_one() {
        let mut u = UncertaintyState::<f64>::new(3, AdamConfig::with_lr(DEFAULT_WEIGHT_LR)).unwrap();
        let (w, total) = u.step(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(w, vec![1.0, 1.0, 1.0]);
        // With s = 0 the total is just the summed losses.
        assert!((total - 6.0).abs() < 1e-15);
    }

    #[test]
    fn uncertainty_stationary_at_inverse_loss() {
        // gradient vanishes exactly when exp(-s) = 1/L.
        let losses = [4.0, 0.25];
        let mut u = UncertaintyState::<f64>::new(2, AdamConfig::with_lr(DEFAULT_WEIGHT_LR)).unwrap();
        u.log_variances = losses.iter().map(|&l: &f64| l.ln()).collect();
        let g = u.gradient(&losses);
        for gi in g {
            assert!(gi.abs() < 1e-12);
        }
    }

    #[test]
    fn uncertainty_gradient_matches_finite_differences() {
        let mut rng = Rng::new(55);
        for _ in 0..100 {
            let n = 2 + (rng.next_u64() % 3) as usize;
            let losses: Vec<f64> = (0..n).map(|_| rng.next_f64() * 5.0 + 0.01).collect();
            let s: Vec<f64> = (0..n).map(|_| rng.next_normal(0.0, 1.0)).collect();
            let mut u =
                UncertaintyState::<f64>::new(n, AdamConfig::with_lr(DEFAULT_WEIGHT_LR)).unwrap();
            u.log_variances = s.clone();
            let analytic = u.gradient(&losses);
            let f = |sv: &[f64]| {
                sv.iter()
                    .zip(&losses)
                    .map(|(&s, &l)| (-s).exp() * l + s)
                    .sum::<f64>()
            };
            let numeric = gradcheck::gradient(f, &s, 1e-7);
            let err = gradcheck::max_relative_error(&analytic, &numeric);
            assert!(err < 1e-6, "error {err}");
        }
    }

    #[test]
    fn uncertainty_weights_grow_without_bound_once_losses_are_small() {
        // Weights track 1/L_i, so below-one losses pull every weight above
        // one; no renormalization caps the sum.
        let mut u = UncertaintyState::<f64>::new(2, AdamConfig::with_lr(DEFAULT_WEIGHT_LR)).unwrap();
        let losses = [0.5, 0.25];
        // Strictly uphill while far from the fixed point (Adam only
        // oscillates once it gets there).
        let mut prev_sum = 2.0;
        for step in 0..40 {
            u.step(&losses).unwrap();
            let sum: f64 = u.effective_weights().iter().sum();
            assert!(sum > prev_sum, "step {step}: {sum} <= {prev_sum}");
            prev_sum = sum;
        }
        for _ in 40..300 {
            u.step(&losses).unwrap();
        }
        let w = u.effective_weights();
        assert!((w[0] - 2.0).abs() < 0.05, "w_0 = {}", w[0]);
        assert!((w[1] - 4.0).abs() < 0.05, "w_1 = {}", w[1]);
    }
}
