//! Implementations of the subcommands. Every command resolves one RunConfig,
//! echoes it into the output directory, and writes byte-identical outputs
//! for identical config + seed.

use crate::config::RunConfig;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;
use tsat::checkpoint::{load_checkpoint, save_checkpoint};
use tsat::data::{
    load_csv, make_windows, split_sequential, synth_coupled_sinusoids, znormalize, denormalize,
    NormStats, Split, TimeSeriesFrame, WindowDataset,
};
use tsat::emd::{decompose_with, Series};
use tsat::error::{Result, TsatError};
use tsat::graph_io::{export_archive, export_graph};
use tsat::metrics::{ablation_csv, ablation_table, persistence_baseline, EvalReport};
use tsat::model::{forward, pool_nodes, stage_params, TsatConfig, TsatParams};
use tsat::tape::Tape;
use tsat::train::{
    ablation_run, evaluate, forecast_all, loss_curve_csv, prepare_graph_windows, train, GraphWindow,
};
use tsat::Tensor;

fn ensure_out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(&cfg.out_dir);
    std::fs::create_dir_all(&dir).map_err(|e| TsatError::io(dir.display().to_string(), e))?;
    cfg.echo(&dir)?;
    Ok(dir)
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).map_err(|e| TsatError::io(path.display().to_string(), e))
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let dir = ensure_out_dir(cfg)?;
    let frame = synth_coupled_sinusoids(&cfg.synth_config())?;
    let path = dir.join("synthetic.csv");
    write_file(&path, &frame.to_csv())?;
    println!(
        "wrote {} ({} series x {} steps)",
        path.display(),
        frame.num_series(),
        frame.num_steps()
    );
    Ok(())
}

pub fn cmd_decompose(cfg: &RunConfig) -> Result<()> {
    let dir = ensure_out_dir(cfg)?;
    let frame = load_csv(cfg.require_input()?)?;
    let sift = cfg.sift_params();
    let mut out = String::from("series,component,t,value\n");
    for i in 0..frame.num_series() {
        let series = Series::new(frame.series_names()[i].clone(), frame.series(i).to_vec())?;
        let d = decompose_with(&series, cfg.k_max, sift.sd_threshold, sift.max_iter)?;
        for (k, imf) in d.imfs.iter().enumerate() {
            for (t, v) in imf.iter().enumerate() {
                let _ = writeln!(out, "{},imf{},{},{}", series.name(), k + 1, t, v);
            }
        }
        for (t, v) in d.residual.iter().enumerate() {
            let _ = writeln!(out, "{},residual,{},{}", series.name(), t, v);
        }
    }
    let path = dir.join("imfs.csv");
    write_file(&path, &out)?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn cmd_build_graph(cfg: &RunConfig) -> Result<()> {
    let dir = ensure_out_dir(cfg)?;
    let frame = load_csv(cfg.require_input()?)?;
    let ds = make_windows(
        &frame,
        &(0..frame.num_steps()),
        cfg.backcast_len,
        cfg.forecast_len,
        cfg.stride,
        Split::Train,
    )?;
    let sift = cfg.sift_params();
    let windows = prepare_graph_windows(&ds, cfg.num_imfs, cfg.threshold, &sift)?;

    let mut manifest = String::from("window_id,x_start,y_start,split\n");
    for (id, w) in ds.windows.iter().enumerate() {
        let _ = writeln!(manifest, "{},{},{},full", id, w.x_start, w.y_start);
    }
    write_file(&dir.join("windows.csv"), &manifest)?;

    if cfg.archive {
        let graphs: Vec<_> = windows.into_iter().map(|w| w.graph).collect();
        let path = dir.join("graphs.tsga");
        export_archive(&graphs, &path)?;
        println!("wrote {} ({} graphs)", path.display(), graphs.len());
    } else {
        let graph_dir = dir.join("graphs");
        std::fs::create_dir_all(&graph_dir).map_err(|e| TsatError::io(graph_dir.display().to_string(), e))?;
        let count = windows.len();
        for (id, w) in windows.into_iter().enumerate() {
            export_graph(&w.graph, graph_dir.join(format!("graph_{:06}.tsg", id)))?;
        }
        println!("wrote {} graphs under {}", count, graph_dir.display());
    }
    Ok(())
}

struct Prepared {
    tsat: TsatConfig,
    norm: TimeSeriesFrame,
    stats: NormStats,
    train_ds: WindowDataset,
    val_ds: WindowDataset,
    test_ds: WindowDataset,
    train_w: Vec<GraphWindow>,
    val_w: Vec<GraphWindow>,
    test_w: Vec<GraphWindow>,
}

/// Shared train/ablate pipeline: load, split, normalize, window, and build
/// graphs for all three splits.
fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let frame = load_csv(cfg.require_input()?)?;
    let tsat = cfg.tsat_config(frame.num_series())?;
    let split = split_sequential(&frame)?;
    let (norm, stats) = znormalize(&frame, &split.train)?;
    for &i in &stats.degenerate {
        eprintln!(
            "warning: series {:?} is constant on the training range; normalized to zeros",
            frame.series_names()[i]
        );
    }
    let train_ds = make_windows(&norm, &split.train, cfg.backcast_len, cfg.forecast_len, cfg.stride, Split::Train)?;
    let val_ds = make_windows(&norm, &split.val, cfg.backcast_len, cfg.forecast_len, cfg.stride, Split::Val)?;
    let test_ds = make_windows(&norm, &split.test, cfg.backcast_len, cfg.forecast_len, cfg.stride, Split::Test)?;
    let sift = cfg.sift_params();
    let train_w = prepare_graph_windows(&train_ds, tsat.num_imfs, tsat.threshold, &sift)?;
    let val_w = prepare_graph_windows(&val_ds, tsat.num_imfs, tsat.threshold, &sift)?;
    let test_w = prepare_graph_windows(&test_ds, tsat.num_imfs, tsat.threshold, &sift)?;
    Ok(Prepared {
        tsat,
        norm,
        stats,
        train_ds,
        val_ds,
        test_ds,
        train_w,
        val_w,
        test_w,
    })
}

fn write_split_artifacts(dir: &Path, p: &Prepared) -> Result<()> {
    write_file(&dir.join("normalized.csv"), &p.norm.to_csv())?;
    let mut manifest = String::from("window_id,x_start,y_start,split\n");
    let mut id = 0usize;
    for ds in [&p.train_ds, &p.val_ds, &p.test_ds] {
        for w in &ds.windows {
            let _ = writeln!(manifest, "{},{},{},{}", id, w.x_start, w.y_start, ds.split);
            id += 1;
        }
    }
    write_file(&dir.join("windows.csv"), &manifest)
}

/// Long-format denormalized forecasts of the test windows.
fn forecasts_csv(
    params: &TsatParams,
    tsat: &TsatConfig,
    windows: &[GraphWindow],
    stats: &NormStats,
    names: &[String],
) -> Result<String> {
    let forecasts = forecast_all(params, tsat, windows)?;
    let mut out = String::from("window_id,series,horizon,value\n");
    for (id, pred) in forecasts.iter().enumerate() {
        let denorm = denormalize(pred, stats)?;
        for i in 0..tsat.num_series {
            for h in 0..tsat.forecast_len {
                let _ = writeln!(out, "{},{},{},{}", id, names[i], h + 1, denorm.at(i, h));
            }
        }
    }
    Ok(out)
}

/// One forward/backward at the initial parameters, dumped as per-node
/// gradient norms.
fn grad_norm_dump(tsat: &TsatConfig, seed: u64, window: &GraphWindow) -> Result<String> {
    let params = TsatParams::init(tsat, seed)?;
    let mut tape = Tape::new();
    let staged = stage_params(&mut tape, &params);
    let out = tsat::model::forward_staged(&mut tape, &window.graph, &staged, tsat, false, None)?;
    let loss = tape.mse_against(out.forecasts, &window.target)?;
    tape.backward(loss)?;
    Ok(tape.grad_norm_report())
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let started = Instant::now();
    let dir = ensure_out_dir(cfg)?;
    let p = prepare(cfg)?;
    write_split_artifacts(&dir, &p)?;
    if cfg.dump_grad_norms {
        let dump = grad_norm_dump(&p.tsat, cfg.seed, &p.train_w[0])?;
        write_file(&dir.join("grad_norms.txt"), &dump)?;
    }
    let outcome = train(&p.tsat, &p.train_w, &p.val_w, &cfg.train_config())?;
    save_checkpoint(&outcome.params, &p.tsat, dir.join("checkpoint.tsc"))?;
    write_file(&dir.join("loss_curve.csv"), &loss_curve_csv(&outcome.loss_curve))?;

    let test = evaluate(&outcome.params, &p.tsat, &p.test_w)?;
    let report = EvalReport {
        variant: outcome.report.variant.clone(),
        per_horizon: test.per_horizon,
        rmse: test.rmse,
        mae: test.mae,
        epochs_run: outcome.report.epochs_run,
        best_val_rmse: outcome.report.best_val_rmse,
        runtime_seconds: outcome.report.runtime_seconds,
        seed: cfg.seed,
    };
    write_file(&dir.join("eval_report.csv"), &report.to_csv())?;
    write_file(&dir.join("eval_report.txt"), &report.to_table())?;
    write_file(
        &dir.join("forecasts_denormalized.csv"),
        &forecasts_csv(&outcome.params, &p.tsat, &p.test_w, &p.stats, p.norm.series_names())?,
    )?;
    println!(
        "trained {} epochs, best val rmse {:.6}, test rmse {:.6} (wall {:.1}s)",
        report.epochs_run,
        report.best_val_rmse,
        report.rmse,
        started.elapsed().as_secs_f64()
    );
    println!("outputs in {}", dir.display());
    Ok(())
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    let dir = ensure_out_dir(cfg)?;
    let (tsat, params) = load_checkpoint(cfg.require_checkpoint()?)?;
    let frame = load_csv(cfg.require_input()?)?;
    if frame.num_series() != tsat.num_series {
        return Err(TsatError::Config(format!(
            "checkpoint expects {} series but {} has {}",
            tsat.num_series,
            cfg.require_input()?,
            frame.num_series()
        )));
    }
    let split = split_sequential(&frame)?;
    let (norm, stats) = znormalize(&frame, &split.train)?;
    let test_ds = make_windows(&norm, &split.test, tsat.backcast_len, tsat.forecast_len, cfg.stride, Split::Test)?;
    let sift = cfg.sift_params();
    let test_w = prepare_graph_windows(&test_ds, tsat.num_imfs, tsat.threshold, &sift)?;
    let test = evaluate(&params, &tsat, &test_w)?;
    let report = EvalReport {
        variant: "TSAT".to_string(),
        per_horizon: test.per_horizon,
        rmse: test.rmse,
        mae: test.mae,
        epochs_run: 0,
        best_val_rmse: f64::NAN,
        runtime_seconds: 0.0,
        seed: cfg.seed,
    };
    write_file(&dir.join("eval_report.csv"), &report.to_csv())?;
    write_file(&dir.join("eval_report.txt"), &report.to_table())?;
    write_file(
        &dir.join("forecasts_denormalized.csv"),
        &forecasts_csv(&params, &tsat, &test_w, &stats, norm.series_names())?,
    )?;
    println!("test rmse {:.6}, mae {:.6}; outputs in {}", report.rmse, report.mae, dir.display());
    Ok(())
}

pub fn cmd_ablate(cfg: &RunConfig) -> Result<()> {
    let dir = ensure_out_dir(cfg)?;
    let p = prepare(cfg)?;
    write_split_artifacts(&dir, &p)?;
    let outcome = ablation_run(&p.tsat, &p.train_w, &p.val_w, &p.test_w, &cfg.train_config())?;
    write_file(&dir.join("ablation.csv"), &ablation_csv(&outcome.reports))?;
    write_file(&dir.join("ablation.txt"), &ablation_table(&outcome.reports))?;
    print!("{}", ablation_table(&outcome.reports));
    for r in &outcome.reports {
        println!("{}: {} epochs, wall {:.1}s", r.variant, r.epochs_run, r.runtime_seconds);
    }
    if !outcome.failures.is_empty() {
        for (variant, err) in &outcome.failures {
            eprintln!("variant {:?} failed: {}", variant, err);
        }
        return Err(TsatError::Contract(format!(
            "{} ablation variant(s) failed; partial report written",
            outcome.failures.len()
        )));
    }
    println!("outputs in {}", dir.display());
    Ok(())
}

pub fn cmd_embed(cfg: &RunConfig) -> Result<()> {
    let dir = ensure_out_dir(cfg)?;
    let (tsat, params) = load_checkpoint(cfg.require_checkpoint()?)?;
    let frame = load_csv(cfg.require_input()?)?;
    if frame.num_series() != tsat.num_series {
        return Err(TsatError::Config(format!(
            "checkpoint expects {} series but {} has {}",
            tsat.num_series,
            cfg.require_input()?,
            frame.num_series()
        )));
    }
    let split = split_sequential(&frame)?;
    let (norm, _stats) = znormalize(&frame, &split.train)?;
    // Embeddings cover every window of the frame at the configured stride.
    let ds = make_windows(&norm, &(0..norm.num_steps()), tsat.backcast_len, tsat.forecast_len, cfg.stride, Split::Train)?;
    let sift = cfg.sift_params();
    let windows = prepare_graph_windows(&ds, tsat.num_imfs, tsat.threshold, &sift)?;

    let mut node_csv = String::from("window_index,node");
    for d in 0..tsat.model_dim {
        let _ = write!(node_csv, ",dim_{}", d);
    }
    node_csv.push('\n');
    let mut pooled_csv = String::from("window_index");
    for d in 0..tsat.model_dim {
        let _ = write!(pooled_csv, ",dim_{}", d);
    }
    pooled_csv.push('\n');

    let outputs: Result<Vec<(Tensor, Tensor)>> = tsat::par::batch_map(&windows, |w| {
        forward(&w.graph, &params, &tsat, false, None)
            .and_then(|o| Ok((o.node_embeddings.clone(), pool_nodes(&o.node_embeddings)?)))
    })
    .into_iter()
    .collect();
    for (idx, (nodes, pooled)) in outputs?.iter().enumerate() {
        for i in 0..tsat.num_series {
            let _ = write!(node_csv, "{},{}", idx, norm.series_names()[i]);
            for d in 0..tsat.model_dim {
                let _ = write!(node_csv, ",{}", nodes.at(i, d));
            }
            node_csv.push('\n');
        }
        let _ = write!(pooled_csv, "{}", idx);
        for d in 0..tsat.model_dim {
            let _ = write!(pooled_csv, ",{}", pooled.data()[d]);
        }
        pooled_csv.push('\n');
    }
    write_file(&dir.join("node_embeddings.csv"), &node_csv)?;
    write_file(&dir.join("graph_embeddings.csv"), &pooled_csv)?;
    println!(
        "wrote embeddings for {} windows x {} nodes in {}",
        windows.len(),
        tsat.num_series,
        dir.display()
    );
    Ok(())
}

/// Reference forecast quality of the naive baseline, printed by `train` runs
/// for context.
#[allow(dead_code)]
pub fn persistence_rmse(windows: &[GraphWindow], forecast_len: usize) -> f64 {
    let mut sq = 0.0;
    let mut count = 0usize;
    for w in windows {
        let p = persistence_baseline(&w.graph.nodes, forecast_len);
        for (pv, tv) in p.data().iter().zip(w.target.data()) {
            sq += (pv - tv) * (pv - tv);
            count += 1;
        }
    }
    (sq / count as f64).sqrt()
}
