//! Evaluation metrics on normalized data, the persistence reference
//! forecast, and report formatting.

use crate::error::{Result, TsatError};
use crate::graph::NodeMatrix;
use crate::tensor::Tensor;

fn check_shapes(op: &'static str, pred: &Tensor, target: &Tensor) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(TsatError::dimension(
            op,
            format!("prediction {:?} vs target {:?}", pred.shape(), target.shape()),
        ));
    }
    Ok(())
}

/// Mean of squared elementwise errors.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<f64> {
    check_shapes("mse_loss", pred, target)?;
    let n = pred.numel() as f64;
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
}

pub fn rmse(pred: &Tensor, target: &Tensor) -> Result<f64> {
    mse(pred, target).map(f64::sqrt)
}

pub fn mae(pred: &Tensor, target: &Tensor) -> Result<f64> {
    check_shapes("mae", pred, target)?;
    let n = pred.numel() as f64;
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / n)
}

/// Naive reference: repeat each series' last observed value across the
/// horizon.
pub fn persistence_baseline(window: &NodeMatrix, forecast_len: usize) -> Tensor {
    let n = window.num_series();
    let last_col = window.backcast_len() - 1;
    let mut data = Vec::with_capacity(n * forecast_len);
    for i in 0..n {
        let v = window.matrix().at(i, last_col);
        data.extend(std::iter::repeat(v).take(forecast_len));
    }
    Tensor::new(vec![n, forecast_len], data).expect("sized")
}

/// Ablation variants in the fixed report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationVariant {
    WithoutGraph,
    WithoutEdge,
    WithoutAdjacency,
    Full,
}

impl AblationVariant {
    pub const REPORT_ORDER: [AblationVariant; 4] = [
        AblationVariant::WithoutGraph,
        AblationVariant::WithoutEdge,
        AblationVariant::WithoutAdjacency,
        AblationVariant::Full,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AblationVariant::WithoutGraph => "TSAT w/o graph",
            AblationVariant::WithoutEdge => "TSAT w/o edge",
            AblationVariant::WithoutAdjacency => "TSAT w/o adj",
            AblationVariant::Full => "TSAT",
        }
    }

    /// Flag settings for this variant.
    pub fn flags(self) -> (bool, bool) {
        match self {
            AblationVariant::WithoutGraph => (false, false),
            AblationVariant::WithoutEdge => (false, true),
            AblationVariant::WithoutAdjacency => (true, false),
            AblationVariant::Full => (true, true),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonMetric {
    /// 1-based forecast step.
    pub horizon: usize,
    pub rmse: f64,
    pub mae: f64,
}

/// Metrics of one trained run. `runtime_seconds` is reported on stdout only;
/// the serialized reports stay byte-identical across reruns.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub variant: String,
    pub per_horizon: Vec<HorizonMetric>,
    pub rmse: f64,
    pub mae: f64,
    pub epochs_run: usize,
    pub best_val_rmse: f64,
    pub runtime_seconds: f64,
    pub seed: u64,
}

impl EvalReport {
    /// Per-horizon rows plus an aggregate row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,horizon,rmse,mae,epochs_run,best_val_rmse,seed\n");
        for h in &self.per_horizon {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                self.variant, h.horizon, h.rmse, h.mae, self.epochs_run, self.best_val_rmse, self.seed
            ));
        }
        out.push_str(&format!(
            "{},aggregate,{},{},{},{},{}\n",
            self.variant, self.rmse, self.mae, self.epochs_run, self.best_val_rmse, self.seed
        ));
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<16} {:>10} {:>10}\n", "Horizon", "RMSE", "MAE"));
        for h in &self.per_horizon {
            out.push_str(&format!("{:<16} {:>10.6} {:>10.6}\n", h.horizon, h.rmse, h.mae));
        }
        out.push_str(&format!("{:<16} {:>10.6} {:>10.6}\n", "aggregate", self.rmse, self.mae));
        out
    }
}

/// Ablation summary: one row per variant, average RMSE over horizons.
pub fn ablation_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("variant,avg_rmse,avg_mae,epochs_run,best_val_rmse,seed\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.variant, r.rmse, r.mae, r.epochs_run, r.best_val_rmse, r.seed
        ));
    }
    out
}

pub fn ablation_table(reports: &[EvalReport]) -> String {
    let width = reports
        .iter()
        .map(|r| r.variant.len())
        .chain(std::iter::once("Method".len()))
        .max()
        .unwrap_or(6);
    let mut out = format!("{:<w$}  {:>12}\n", "Method", "Average RMSE", w = width);
    for r in reports {
        out.push_str(&format!("{:<w$}  {:>12.6}\n", r.variant, r.rmse, w = width));
    }
    out
}
