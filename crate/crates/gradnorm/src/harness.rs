//! Experiment orchestration: the full training loop with strategy-driven
//! loss weighting, per-run trace records, static-weight extraction, the
//! random-weight study, and the asymmetry sweep.

use std::time::Instant;

use rayon::prelude::*;

use crate::balancer::{self, BalancerState, RateSnapshot, UncertaintyState};
use crate::config::{ExperimentConfig, StrategyConfig};
use crate::error::{Error, Result};
use crate::network::{squared_loss, squared_loss_residual, MlpModel};
use crate::optim::{AdamConfig, AdamState};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::stats;
use crate::toytasks::{Batch, ToyTaskSet};

/// One logged step of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: u64,
    /// Task weights entering this step (post-renormalization from the
    /// previous step; the weights the network update at this step uses).
    pub weights: Vec<f64>,
    pub train_losses: Vec<f64>,
    pub test_losses: Vec<f64>,
    pub loss_ratios: Vec<f64>,
    pub rates: Vec<f64>,
    /// Weighted gradient norms at the shared layer.
    pub grad_norms: Vec<f64>,
    pub mean_grad_norm: f64,
    /// Gradient-gap loss for the adaptive balancer; 0 for strategies that
    /// do not compute one.
    pub grad_loss: f64,
}

/// Why a run stopped early.
#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    pub step: u64,
    pub detail: String,
}

/// Everything recorded about one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub num_tasks: usize,
    pub sigmas: Vec<f64>,
    pub rows: Vec<TraceRow>,
    /// Test losses of the untrained network on the fixed test batch.
    pub initial_test_losses: Vec<f64>,
    /// Test losses at the end of the run (unset if the run diverged).
    pub final_test_losses: Option<Vec<f64>>,
    pub diverged: Option<Divergence>,
    /// Fraction of run time spent on balancing work (norm measurement plus
    /// the weight update) rather than the plain training step.
    pub balancer_overhead: f64,
}

impl RunRecord {
    pub fn completed(&self) -> bool {
        self.diverged.is_none()
    }
}

/// Sum of final test losses normalized by the initial test losses; equals
/// the task count for an untrained network.
pub fn task_normalized_test_loss(record: &RunRecord) -> Result<f64> {
    let finals = record
        .final_test_losses
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("run has no final test losses".into()))?;
    normalized_sum(finals, &record.initial_test_losses)
}

/// The same metric evaluated at one logged row.
pub fn normalized_test_loss_at(record: &RunRecord, row: usize) -> Result<f64> {
    let row = record
        .rows
        .get(row)
        .ok_or_else(|| Error::InvalidArgument(format!("row {row} out of range")))?;
    normalized_sum(&row.test_losses, &record.initial_test_losses)
}

fn normalized_sum(losses: &[f64], initial: &[f64]) -> Result<f64> {
    if losses.len() != initial.len() {
        return Err(Error::InvalidArgument(
            "loss vectors differ in length".into(),
        ));
    }
    if initial.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::DegenerateLosses(
            "initial test losses must be positive".into(),
        ));
    }
    Ok(losses.iter().zip(initial).map(|(&l, &l0)| l / l0).sum())
}

/// Time-averaged weights over all logged rows, renormalized to sum to the
/// task count.
pub fn extract_static_weights(record: &RunRecord) -> Result<Vec<f64>> {
    if record.rows.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot average weights of an empty trace".into(),
        ));
    }
    let t = record.num_tasks;
    let mut avg = vec![0.0; t];
    for row in &record.rows {
        for (a, &w) in avg.iter_mut().zip(&row.weights) {
            *a += w;
        }
    }
    let n = record.rows.len() as f64;
    for a in avg.iter_mut() {
        *a /= n;
    }
    balancer::renormalize(&mut avg, 0.0)?;
    Ok(avg)
}

/// Per-run strategy state.
enum StrategyState<T> {
    GradNorm(BalancerState<T>),
    Equal(Vec<T>),
    Static(Vec<T>),
    Uncertainty(UncertaintyState<T>),
}

struct StepOutput<T> {
    snapshot: Option<RateSnapshot<T>>,
    grad_loss: T,
}

impl<T: Scalar> StrategyState<T> {
    fn new(config: &ExperimentConfig) -> Result<Self> {
        let t = config.taskset.num_tasks;
        let weight_adam = AdamConfig {
            lr: config.optimizer.weight_lr,
            beta1: config.optimizer.beta1,
            beta2: config.optimizer.beta2,
            epsilon: config.optimizer.epsilon,
        };
        Ok(match &config.strategy {
            StrategyConfig::Gradnorm { alpha } => StrategyState::GradNorm(BalancerState::new(
                t,
                T::from_f64(*alpha),
                weight_adam,
            )?),
            StrategyConfig::Equal => StrategyState::Equal(balancer::equal_weights(t)),
            StrategyConfig::Static { weights } => {
                let w: Vec<T> = weights.iter().map(|&x| T::from_f64(x)).collect();
                StrategyState::Static(balancer::static_weights(&w)?)
            }
            StrategyConfig::Uncertainty => {
                StrategyState::Uncertainty(UncertaintyState::new(t, weight_adam)?)
            }
        })
    }

    fn needs_norms(&self) -> bool {
        matches!(self, StrategyState::GradNorm(_))
    }

    fn current_weights(&self) -> Vec<T> {
        match self {
            StrategyState::GradNorm(b) => b.weights().to_vec(),
            StrategyState::Equal(w) | StrategyState::Static(w) => w.clone(),
            StrategyState::Uncertainty(u) => u.effective_weights(),
        }
    }

    fn capture_initial_losses(&mut self, losses: &[T]) -> Result<()> {
        if let StrategyState::GradNorm(b) = self {
            b.capture_initial_losses(losses)?;
        }
        Ok(())
    }

    /// Perform (or, on the final bookkeeping pass, just measure) one
    /// balancing step.
    fn step_or_peek(
        &mut self,
        losses: &[T],
        norms: Option<&[T]>,
        update: bool,
        reset_optimizer: bool,
    ) -> Result<StepOutput<T>> {
        match self {
            StrategyState::GradNorm(b) => {
                let norms = norms.ok_or_else(|| {
                    Error::InvalidArgument("balancer step requires gradient norms".into())
                })?;
                if update {
                    if reset_optimizer {
                        b.reset_optimizer();
                    }
                    let (snapshot, grad_loss) = b.step(losses, norms)?;
                    Ok(StepOutput {
                        snapshot: Some(snapshot),
                        grad_loss,
                    })
                } else {
                    let (snapshot, _, grad_loss) = b.diagnostics(losses, norms)?;
                    Ok(StepOutput {
                        snapshot: Some(snapshot),
                        grad_loss,
                    })
                }
            }
            StrategyState::Uncertainty(u) => {
                if update {
                    u.step(losses)?;
                }
                Ok(StepOutput {
                    snapshot: None,
                    grad_loss: T::zero(),
                })
            }
            StrategyState::Equal(_) | StrategyState::Static(_) => Ok(StepOutput {
                snapshot: None,
                grad_loss: T::zero(),
            }),
        }
    }
}

fn to_f64s<T: Scalar>(xs: &[T]) -> Vec<f64> {
    xs.iter().map(|&x| x.to_f64()).collect()
}

fn test_losses<T: Scalar>(model: &MlpModel<T>, batch: &Batch<T>) -> Result<Vec<T>> {
    let (preds, _) = model.forward(&batch.inputs)?;
    preds
        .iter()
        .zip(&batch.targets)
        .map(|(p, t)| squared_loss(p, t))
        .collect()
}

/// Execute one training run. Deterministic: the record is a pure function
/// of the (resolved) config.
pub fn train_run<T: Scalar>(config: &ExperimentConfig) -> Result<RunRecord> {
    let config = config.resolved()?;
    let sigmas = config.taskset.sigmas.clone().expect("resolved");
    let num_tasks = config.taskset.num_tasks;

    let taskset = ToyTaskSet::<T>::generate(
        config.taskset.seed,
        &sigmas,
        config.taskset.input_dim,
        config.taskset.output_dim,
        config.taskset.base_scale,
        config.taskset.eps_scale,
        config.taskset.scale_kind.into(),
    )?;
    let mut model = MlpModel::<T>::init(
        &mut Rng::new(config.model.init_seed),
        config.taskset.input_dim,
        config.model.hidden_dim,
        config.model.depth,
        config.taskset.output_dim,
        num_tasks,
    );
    if let Some(idx) = config.model.shared_layer_index {
        model.set_shared_layer_index(idx)?;
    }
    let test_batch = taskset.sample_batch(&mut Rng::new(config.test_seed), config.test_batch_size)?;
    let mut data_rng = Rng::new(config.data_seed);
    let mut net_opt = AdamState::<T>::new(
        model.param_count(),
        AdamConfig {
            lr: config.optimizer.network_lr,
            beta1: config.optimizer.beta1,
            beta2: config.optimizer.beta2,
            epsilon: config.optimizer.epsilon,
        },
    );
    let mut strategy = StrategyState::<T>::new(&config)?;

    let mut rows = Vec::with_capacity((config.steps / config.eval_every + 1) as usize);
    let mut initial_train: Vec<T> = Vec::new();
    let mut initial_test: Vec<f64> = Vec::new();
    let mut final_test: Option<Vec<f64>> = None;
    let mut diverged = None;
    let run_start = Instant::now();
    let mut balancer_time = 0.0f64;

    for t in 0..=config.steps {
        let batch = taskset.sample_batch(&mut data_rng, config.batch_size)?;
        let (preds, cache) = model.forward(&batch.inputs)?;
        let train: Vec<T> = preds
            .iter()
            .zip(&batch.targets)
            .map(|(p, tg)| squared_loss(p, tg))
            .collect::<Result<_>>()?;
        if train.iter().any(|l| !l.is_finite()) {
            diverged = Some(Divergence {
                step: t,
                detail: format!("non-finite training loss at step {t}: {:?}", to_f64s(&train)),
            });
            break;
        }
        if t == 0 {
            strategy.capture_initial_losses(&train)?;
            initial_train = train.clone();
        }

        let weights_now = strategy.current_weights();
        let is_row = t % config.eval_every == 0;
        let is_last = t == config.steps;
        let need_norms = strategy.needs_norms() || is_row;

        let residuals: Vec<_> = preds
            .iter()
            .zip(&batch.targets)
            .map(|(p, tg)| squared_loss_residual(p, tg))
            .collect::<Result<_>>()?;

        let balancer_start = Instant::now();
        let (total_grads, norms) = if need_norms {
            let (total, task_grads) = model.backward(&cache, &residuals, &weights_now)?;
            (total, Some(task_grads.unweighted_norms()))
        } else {
            (model.backward_total(&cache, &residuals, &weights_now)?, None)
        };
        let step_out = strategy.step_or_peek(
            &train,
            norms.as_deref(),
            !is_last,
            config.optimizer.reset_weight_optimizer_each_step,
        )?;
        balancer_time += balancer_start.elapsed().as_secs_f64();

        if is_row || is_last {
            let test = test_losses(&model, &test_batch)?;
            if test.iter().any(|l| !l.is_finite()) {
                diverged = Some(Divergence {
                    step: t,
                    detail: format!("non-finite test loss at step {t}"),
                });
                break;
            }
            let test64 = to_f64s(&test);
            if t == 0 {
                initial_test = test64.clone();
            }
            if is_last {
                final_test = Some(test64.clone());
            }
            if is_row {
                let norms = norms.as_ref().expect("norms computed on logged steps");
                let (ratios, rates, grad_norms, mean_norm) = match &step_out.snapshot {
                    Some(snap) => (
                        to_f64s(&snap.loss_ratios),
                        to_f64s(&snap.relative_rates),
                        to_f64s(&snap.grad_norms),
                        snap.mean_grad_norm.to_f64(),
                    ),
                    None => {
                        let ratios = balancer::loss_ratios(&train, &initial_train)?;
                        let rates = balancer::relative_rates(&ratios)?;
                        let weighted: Vec<T> = weights_now
                            .iter()
                            .zip(norms)
                            .map(|(&w, &g)| w * g)
                            .collect();
                        let mean = weighted.iter().copied().sum::<T>()
                            / T::from_f64(weighted.len() as f64);
                        (
                            to_f64s(&ratios),
                            to_f64s(&rates),
                            to_f64s(&weighted),
                            mean.to_f64(),
                        )
                    }
                };
                rows.push(TraceRow {
                    step: t,
                    weights: to_f64s(&weights_now),
                    train_losses: to_f64s(&train),
                    test_losses: test64,
                    loss_ratios: ratios,
                    rates,
                    grad_norms,
                    mean_grad_norm: mean_norm,
                    grad_loss: step_out.grad_loss.to_f64(),
                });
            }
        }
        if is_last {
            break;
        }
        net_opt.update_slices(&mut model.param_slices_mut(), &total_grads.grad_slices())?;
    }

    let wall = run_start.elapsed().as_secs_f64();
    Ok(RunRecord {
        num_tasks,
        sigmas,
        rows,
        initial_test_losses: initial_test,
        final_test_losses: final_test,
        diverged,
        balancer_overhead: if wall > 0.0 { balancer_time / wall } else { 0.0 },
    })
}

/// Why a row exists in a study table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyRunKind {
    GradnormReference,
    Static,
}

impl StudyRunKind {
    pub fn label(self) -> &'static str {
        match self {
            StudyRunKind::GradnormReference => "gradnorm_ref",
            StudyRunKind::Static => "static",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub index: usize,
    pub kind: StudyRunKind,
    /// For static rows, the run's fixed weights; for the reference row, the
    /// time-averaged weights it produced.
    pub weights: Vec<f64>,
    pub normalized_loss: f64,
    /// Distance to the reference run's time-averaged weights.
    pub distance: f64,
    /// Percent change in normalized loss versus the reference (positive is
    /// worse).
    pub pct_delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyResult {
    pub rows: Vec<StudyRow>,
    /// Spearman correlation between distance and normalized loss over the
    /// static rows.
    pub spearman: f64,
    pub reference_avg_weights: Vec<f64>,
    pub steps: u64,
}

/// Train `n_runs` random-static-weight networks at a quarter of the base
/// budget and compare them with an adaptive reference run at the same
/// budget. Weights are drawn uniformly and renormalized to sum to the task
/// count. Runs execute in parallel; row order is by index.
pub fn grid_search_study(
    base: &ExperimentConfig,
    n_runs: usize,
    study_seed: u64,
) -> Result<StudyResult> {
    if n_runs < 2 {
        return Err(Error::InvalidArgument(
            "grid search study needs at least 2 runs".into(),
        ));
    }
    if !matches!(base.strategy, StrategyConfig::Gradnorm { .. }) {
        return Err(Error::InvalidArgument(
            "grid search study requires a gradnorm base config".into(),
        ));
    }
    let mut short = base.resolved()?;
    short.steps = (short.steps / 4).max(1);

    let reference = train_run::<f64>(&short)?;
    if !reference.completed() {
        return Err(Error::DegenerateLosses(
            "reference run diverged; study aborted".into(),
        ));
    }
    let ref_avg = extract_static_weights(&reference)?;
    let ref_loss = task_normalized_test_loss(&reference)?;

    let t = short.taskset.num_tasks;
    let mut rng = Rng::new(study_seed);
    let weight_draws: Vec<Vec<f64>> = (0..n_runs)
        .map(|_| loop {
            let w: Vec<f64> = (0..t).map(|_| rng.next_f64()).collect();
            if w.iter().all(|&x| x > 0.0) {
                break w;
            }
        })
        .collect();

    let static_rows: Vec<StudyRow> = weight_draws
        .par_iter()
        .enumerate()
        .map(|(i, draw)| -> Result<StudyRow> {
            let weights = balancer::static_weights(draw)?;
            let mut cfg = short.clone();
            cfg.strategy = StrategyConfig::Static {
                weights: weights.clone(),
            };
            let record = train_run::<f64>(&cfg)?;
            let loss = task_normalized_test_loss(&record)?;
            Ok(StudyRow {
                index: i + 1,
                kind: StudyRunKind::Static,
                distance: stats::l2_distance(&weights, &ref_avg),
                pct_delta: 100.0 * (loss - ref_loss) / ref_loss,
                normalized_loss: loss,
                weights,
            })
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(n_runs + 1);
    rows.push(StudyRow {
        index: 0,
        kind: StudyRunKind::GradnormReference,
        weights: ref_avg.clone(),
        normalized_loss: ref_loss,
        distance: 0.0,
        pct_delta: 0.0,
    });
    rows.extend(static_rows);

    let dists: Vec<f64> = rows[1..].iter().map(|r| r.distance).collect();
    let losses: Vec<f64> = rows[1..].iter().map(|r| r.normalized_loss).collect();
    Ok(StudyResult {
        spearman: stats::spearman(&dists, &losses),
        rows,
        reference_avg_weights: ref_avg,
        steps: short.steps,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub alpha: f64,
    /// True for the degenerate weight-lr-0 control run, which must show no
    /// change versus the equal-weights baseline.
    pub control: bool,
    /// Percent improvement in final test loss ratio per task versus the
    /// equal-weights baseline (positive is better).
    pub per_task_gain_pct: Vec<f64>,
    pub mean_gain_pct: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

/// For each asymmetry value, train an adaptive run and compare its final
/// test loss ratios with an equal-weights baseline on identical seeds. A
/// control row (weight lr forced to zero) is appended; it must come out at
/// exactly zero gain. Runs execute in parallel; row order follows the input.
pub fn alpha_sweep(base: &ExperimentConfig, alphas: &[f64]) -> Result<SweepResult> {
    if alphas.is_empty() {
        return Err(Error::InvalidArgument("alpha list is empty".into()));
    }
    if alphas.iter().any(|&a| a < 0.0) {
        return Err(Error::InvalidArgument(
            "alpha values must be nonnegative".into(),
        ));
    }
    let base = base.resolved()?;
    let mut equal_cfg = base.clone();
    equal_cfg.strategy = StrategyConfig::Equal;
    let equal_ratios = final_loss_ratios(&train_run::<f64>(&equal_cfg)?)?;

    let mut jobs: Vec<(f64, bool)> = alphas.iter().map(|&a| (a, false)).collect();
    jobs.push((alphas[0], true));

    let rows: Vec<SweepRow> = jobs
        .par_iter()
        .map(|&(alpha, control)| -> Result<SweepRow> {
            let mut cfg = base.clone();
            cfg.strategy = StrategyConfig::Gradnorm { alpha };
            if control {
                cfg.optimizer.weight_lr = 0.0;
            }
            let ratios = final_loss_ratios(&train_run::<f64>(&cfg)?)?;
            let gains: Vec<f64> = ratios
                .iter()
                .zip(&equal_ratios)
                .map(|(&g, &e)| 100.0 * (e - g) / e)
                .collect();
            let mean = gains.iter().sum::<f64>() / gains.len() as f64;
            Ok(SweepRow {
                alpha,
                control,
                mean_gain_pct: mean,
                per_task_gain_pct: gains,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SweepResult { rows })
}

/// Final test loss over initial test loss, per task.
pub fn final_loss_ratios(record: &RunRecord) -> Result<Vec<f64>> {
    let finals = record
        .final_test_losses
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("run has no final test losses".into()))?;
    finals
        .iter()
        .zip(&record.initial_test_losses)
        .map(|(&l, &l0)| {
            if l0 > 0.0 {
                Ok(l / l0)
            } else {
                Err(Error::DegenerateLosses(
                    "initial test loss must be positive".into(),
                ))
            }
        })
        .collect()
}
