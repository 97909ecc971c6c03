//! Training and evaluation: mini-batch Adam over shuffled windows with an
//! exponential learning-rate schedule and best-on-validation early stopping,
//! plus the finite-difference gradient harness and the four-variant ablation
//! runner.
//!
//! Batch gradients and evaluation forwards fan out over the rayon pool when
//! the `parallel` feature is on. Per-window results are collected in window
//! order and reduced sequentially, so the arithmetic is bit-identical
//! regardless of thread count.

use crate::data::WindowDataset;
use crate::error::{Result, TsatError};
use crate::graph::{build_graph, DynamicGraph, SiftParams};
use crate::metrics::{AblationVariant, EvalReport, HorizonMetric};
use crate::model::{forward_staged, stage_params, TsatConfig, TsatParams};
use crate::optim::{adam_step, decay_learning_rate, AdamState};
use crate::par;
use crate::rng::{seed_stream, streams};
use crate::tape::Tape;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

/// Training-loop knobs. Defaults: batch 64, lr 1e-4 decaying with 5e-3 per
/// epoch, at most 2000 epochs, early stopping after 20 stale epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub initial_lr: f64,
    pub decay_gamma: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            initial_lr: 1e-4,
            decay_gamma: 5e-3,
            max_epochs: 2000,
            patience: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(TsatError::Config(
                "batch_size, max_epochs and patience must all be at least 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// A training/evaluation item: the window's graph and its forecast target.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphWindow {
    pub graph: DynamicGraph,
    pub target: Tensor,
}

/// Build graphs for every window of a dataset (in parallel when enabled;
/// output order is the window order either way).
pub fn prepare_graph_windows(
    ds: &WindowDataset,
    k: usize,
    c: f64,
    sift: &SiftParams,
) -> Result<Vec<GraphWindow>> {
    let items: Vec<usize> = (0..ds.windows.len()).collect();
    par::batch_map(&items, |&i| -> Result<GraphWindow> {
        let node_matrix = ds.node_matrix(i)?;
        let graph = build_graph(&node_matrix, k, c, sift)?;
        Ok(GraphWindow {
            graph,
            target: ds.windows[i].y.clone(),
        })
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_rmse: f64,
    pub lr: f64,
}

pub fn loss_curve_csv(curve: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_loss,val_rmse,lr\n");
    for e in curve {
        out.push_str(&format!("{},{},{},{}\n", e.epoch, e.train_loss, e.val_rmse, e.lr));
    }
    out
}

pub struct TrainOutcome {
    pub params: TsatParams,
    pub report: EvalReport,
    pub loss_curve: Vec<EpochStats>,
}

/// Loss and per-parameter gradients of one window (training mode, seeded
/// dropout).
fn window_gradient(
    config: &TsatConfig,
    params: &TsatParams,
    window: &GraphWindow,
    dropout_seed: u64,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let staged = stage_params(&mut tape, params);
    let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    let out = forward_staged(&mut tape, &window.graph, &staged, config, true, Some(&mut rng))?;
    let loss = tape.mse_against(out.forecasts, &window.target)?;
    let loss_value = tape.value(loss).data()[0];
    tape.backward(loss)?;
    let grads = staged
        .ids
        .iter()
        .map(|&id| tape.grad(id).cloned().expect("trainable leaf has gradient"))
        .collect();
    Ok((loss_value, grads))
}

/// Aggregate and per-horizon metrics of an evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalMetrics {
    pub per_horizon: Vec<HorizonMetric>,
    pub rmse: f64,
    pub mae: f64,
}

/// Evaluation-mode forward over a window set; metrics are computed over all
/// (window, series) pairs, per forecast step and in aggregate.
pub fn evaluate(params: &TsatParams, config: &TsatConfig, windows: &[GraphWindow]) -> Result<EvalMetrics> {
    if windows.is_empty() {
        return Err(TsatError::Config("cannot evaluate on an empty window set".to_string()));
    }
    let forecasts = forecast_all(params, config, windows)?;
    let l_y = config.forecast_len;
    let mut sq = vec![0.0; l_y];
    let mut abs = vec![0.0; l_y];
    let mut count = vec![0usize; l_y];
    for (pred, w) in forecasts.iter().zip(windows) {
        let n = w.target.shape()[0];
        for i in 0..n {
            for h in 0..l_y {
                let d = pred.at(i, h) - w.target.at(i, h);
                sq[h] += d * d;
                abs[h] += d.abs();
                count[h] += 1;
            }
        }
    }
    let per_horizon: Vec<HorizonMetric> = (0..l_y)
        .map(|h| HorizonMetric {
            horizon: h + 1,
            rmse: (sq[h] / count[h] as f64).sqrt(),
            mae: abs[h] / count[h] as f64,
        })
        .collect();
    let total: usize = count.iter().sum();
    let rmse = (sq.iter().sum::<f64>() / total as f64).sqrt();
    let mae = abs.iter().sum::<f64>() / total as f64;
    Ok(EvalMetrics { per_horizon, rmse, mae })
}

/// Evaluation-mode forecasts for every window, in window order.
pub fn forecast_all(params: &TsatParams, config: &TsatConfig, windows: &[GraphWindow]) -> Result<Vec<Tensor>> {
    par::batch_map(windows, |w| {
        crate::model::forward(&w.graph, params, config, false, None).map(|o| o.forecasts)
    })
    .into_iter()
    .collect()
}

/// Mini-batch Adam with per-epoch seeded shuffling, exponential decay, and
/// best-on-validation early stopping. Returns the best parameters, a report
/// carrying the validation metrics of that checkpoint, and the loss curve.
pub fn train(
    config: &TsatConfig,
    train_windows: &[GraphWindow],
    val_windows: &[GraphWindow],
    train_cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    train_cfg.validate()?;
    if train_windows.is_empty() || val_windows.is_empty() {
        return Err(TsatError::Config(format!(
            "training needs non-empty splits: {} train / {} val windows",
            train_windows.len(),
            val_windows.len()
        )));
    }
    let started = Instant::now();
    let mut params = TsatParams::init(config, train_cfg.seed)?;
    let mut adam: Vec<AdamState> = params
        .named_tensors()
        .iter()
        .map(|(_, t)| AdamState::new(t.shape().to_vec(), train_cfg.initial_lr))
        .collect();
    let shuffle_master = seed_stream(train_cfg.seed, streams::SHUFFLE);
    let dropout_master = seed_stream(train_cfg.seed, streams::DROPOUT);

    let mut curve = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_params = params.clone();
    let mut best_metrics: Option<EvalMetrics> = None;
    let mut stale_epochs = 0usize;
    let mut epochs_run = 0usize;

    for epoch in 0..train_cfg.max_epochs {
        let lr = decay_learning_rate(train_cfg.initial_lr, train_cfg.decay_gamma, epoch as u64);
        for state in adam.iter_mut() {
            state.learning_rate = lr;
        }
        let mut order: Vec<usize> = (0..train_windows.len()).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed_stream(shuffle_master, epoch as u64));
        order.shuffle(&mut shuffle_rng);
        let epoch_dropout = seed_stream(dropout_master, epoch as u64);

        let mut loss_sum = 0.0;
        for batch in order.chunks(train_cfg.batch_size) {
            let items: Vec<(usize, u64)> = batch
                .iter()
                .map(|&i| (i, seed_stream(epoch_dropout, i as u64)))
                .collect();
            let results: Vec<Result<(f64, Vec<Tensor>)>> = par::batch_map(&items, |&(i, dseed)| {
                window_gradient(config, &params, &train_windows[i], dseed)
            });

            let mut batch_loss = 0.0;
            let mut grad_sum: Option<Vec<Tensor>> = None;
            for r in results {
                let (loss, grads) = r?;
                batch_loss += loss;
                match &mut grad_sum {
                    None => grad_sum = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            for (av, gv) in a.data_mut().iter_mut().zip(g.data()) {
                                *av += gv;
                            }
                        }
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            let mut grads = grad_sum.expect("non-empty batch");
            for g in &mut grads {
                for v in g.data_mut() {
                    *v *= scale;
                }
            }
            loss_sum += batch_loss;
            for ((slot, state), grad) in params.tensors_mut().into_iter().zip(&mut adam).zip(&grads) {
                adam_step(state, slot, grad)?;
            }
        }
        let train_loss = loss_sum / train_windows.len() as f64;
        let val = evaluate(&params, config, val_windows)?;
        epochs_run = epoch + 1;
        curve.push(EpochStats {
            epoch,
            train_loss,
            val_rmse: val.rmse,
            lr,
        });
        if val.rmse < best_val {
            best_val = val.rmse;
            best_params = params.clone();
            best_metrics = Some(val);
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= train_cfg.patience {
                break;
            }
        }
    }

    let metrics = best_metrics.expect("at least one epoch ran");
    let variant = variant_of(config).label().to_string();
    let report = EvalReport {
        variant,
        per_horizon: metrics.per_horizon,
        rmse: metrics.rmse,
        mae: metrics.mae,
        epochs_run,
        best_val_rmse: best_val,
        runtime_seconds: started.elapsed().as_secs_f64(),
        seed: train_cfg.seed,
    };
    Ok(TrainOutcome {
        params: best_params,
        report,
        loss_curve: curve,
    })
}

fn variant_of(config: &TsatConfig) -> AblationVariant {
    match (config.use_edge, config.use_adjacency) {
        (true, true) => AblationVariant::Full,
        (false, true) => AblationVariant::WithoutEdge,
        (true, false) => AblationVariant::WithoutAdjacency,
        (false, false) => AblationVariant::WithoutGraph,
    }
}

/// Relative gradient error of one parameter group: the largest entrywise
/// deviation between analytic and central-difference gradients, scaled by
/// the larger of the two gradient magnitudes in the group (floored at 1e-5
/// so that rounding noise on vanishing gradients does not register).
#[derive(Debug, Clone)]
pub struct GradCheckGroup {
    pub name: String,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub groups: Vec<GradCheckGroup>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.max_rel_error < self.tolerance)
    }

    pub fn failures(&self) -> Vec<&GradCheckGroup> {
        self.groups.iter().filter(|g| g.max_rel_error >= self.tolerance).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("tolerance {}\n", self.tolerance);
        for g in &self.groups {
            let status = if g.max_rel_error < self.tolerance { "ok" } else { "FAIL" };
            out.push_str(&format!("{:<24} {:>12.3e}  {}\n", g.name, g.max_rel_error, status));
        }
        out
    }
}

/// Analytic gradients vs central finite differences (h = 1e-5) of the MSE
/// loss on a seeded random graph and target, reported per parameter group.
pub fn grad_check(config: &TsatConfig, tolerance: f64, seed: u64) -> Result<GradCheckReport> {
    grad_check_impl(config, tolerance, seed, None)
}

fn grad_check_impl(
    config: &TsatConfig,
    tolerance: f64,
    seed: u64,
    corrupt_group: Option<&str>,
) -> Result<GradCheckReport> {
    let (window, target) = random_fixture(config, seed)?;
    let params = TsatParams::init(config, seed)?;
    let eval_loss = |p: &TsatParams| -> Result<f64> {
        let out = crate::model::forward(&window, p, config, false, None)?;
        crate::metrics::mse(&out.forecasts, &target)
    };

    // Analytic pass (evaluation mode: dropout must not perturb the check).
    let mut tape = Tape::new();
    let staged = stage_params(&mut tape, &params);
    let out = forward_staged(&mut tape, &window, &staged, config, false, None)?;
    let loss = tape.mse_against(out.forecasts, &target)?;
    tape.backward(loss)?;
    let mut analytic: Vec<Tensor> = staged
        .ids
        .iter()
        .map(|&id| tape.grad(id).cloned().expect("trainable leaf"))
        .collect();

    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    if let Some(victim) = corrupt_group {
        let idx = names
            .iter()
            .position(|n| n == victim)
            .ok_or_else(|| TsatError::Contract(format!("no parameter group named {:?}", victim)))?;
        for v in analytic[idx].data_mut() {
            *v += 1.0;
        }
    }

    let h = 1e-5;
    let mut groups = Vec::with_capacity(names.len());
    let mut probe = params.clone();
    for gi in 0..names.len() {
        let numel = analytic[gi].numel();
        let mut fd = vec![0.0; numel];
        for e in 0..numel {
            let original = {
                let mut slots = probe.tensors_mut();
                let v = slots[gi].data()[e];
                slots[gi].data_mut()[e] = v + h;
                v
            };
            let up = eval_loss(&probe)?;
            probe.tensors_mut()[gi].data_mut()[e] = original - h;
            let down = eval_loss(&probe)?;
            probe.tensors_mut()[gi].data_mut()[e] = original;
            fd[e] = (up - down) / (2.0 * h);
        }
        let fd_scale = fd.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
        let an_scale = analytic[gi].data().iter().map(|v| v.abs()).fold(0.0f64, f64::max);
        let scale = fd_scale.max(an_scale).max(1e-5);
        let max_dev = analytic[gi]
            .data()
            .iter()
            .zip(&fd)
            .map(|(a, f)| (a - f).abs())
            .fold(0.0f64, f64::max);
        groups.push(GradCheckGroup {
            name: names[gi].clone(),
            max_rel_error: max_dev / scale,
        });
    }
    Ok(GradCheckReport { groups, tolerance })
}

/// Seeded random graph window and forecast target for harness runs: smooth
/// sinusoid mixtures with trends, so the decomposition is well-posed.
pub fn random_fixture(config: &TsatConfig, seed: u64) -> Result<(DynamicGraph, Tensor)> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed_stream(seed, streams::GRADCHECK));
    let n = config.num_series;
    let l = config.backcast_len;
    let mut data = Vec::with_capacity(n * l);
    for _ in 0..n {
        let cycles1 = rng.gen_range(2.0..6.0);
        let cycles2 = rng.gen_range(6.0..14.0);
        let amp2 = rng.gen_range(0.2..0.8);
        let slope = rng.gen_range(-1.0..1.0);
        let phase1 = rng.gen_range(0.0..std::f64::consts::TAU);
        let phase2 = rng.gen_range(0.0..std::f64::consts::TAU);
        for t in 0..l {
            let tf = t as f64 / l as f64;
            data.push(
                (std::f64::consts::TAU * cycles1 * tf + phase1).sin()
                    + amp2 * (std::f64::consts::TAU * cycles2 * tf + phase2).sin()
                    + slope * tf,
            );
        }
    }
    let window = crate::graph::NodeMatrix::new(
        Tensor::new(vec![n, l], data)?,
        (0..n).map(|i| format!("s{}", i)).collect(),
        0,
    )?;
    let graph = build_graph(&window, config.num_imfs, config.threshold, &SiftParams::default())?;
    let target_data: Vec<f64> = (0..n * config.forecast_len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let target = Tensor::new(vec![n, config.forecast_len], target_data)?;
    Ok((graph, target))
}

/// Result of the four-variant ablation. Variants that fail keep the run
/// going; their errors are reported alongside the completed rows.
pub struct AblationOutcome {
    pub reports: Vec<EvalReport>,
    pub failures: Vec<(String, TsatError)>,
}

/// Train and test-evaluate the four ablation variants with identical seeds
/// and splits, in the fixed report order.
pub fn ablation_run(
    base_config: &TsatConfig,
    train_windows: &[GraphWindow],
    val_windows: &[GraphWindow],
    test_windows: &[GraphWindow],
    train_cfg: &TrainConfig,
) -> Result<AblationOutcome> {
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for variant in AblationVariant::REPORT_ORDER {
        let (use_edge, use_adjacency) = variant.flags();
        let mut config = base_config.clone();
        config.use_edge = use_edge;
        config.use_adjacency = use_adjacency;
        let outcome = train(&config, train_windows, val_windows, train_cfg)
            .and_then(|o| {
                let test = evaluate(&o.params, &config, test_windows)?;
                Ok(EvalReport {
                    variant: variant.label().to_string(),
                    per_horizon: test.per_horizon,
                    rmse: test.rmse,
                    mae: test.mae,
                    epochs_run: o.report.epochs_run,
                    best_val_rmse: o.report.best_val_rmse,
                    runtime_seconds: o.report.runtime_seconds,
                    seed: train_cfg.seed,
                })
            });
        match outcome {
            Ok(report) => reports.push(report),
            Err(e) => failures.push((variant.label().to_string(), e)),
        }
    }
    Ok(AblationOutcome { reports, failures })
}
