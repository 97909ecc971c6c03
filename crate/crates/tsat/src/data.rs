//! Dataset plumbing: strict CSV ingestion, sequential 80/20 splitting with
//! the last 10% of the training span reserved for validation, train-range
//! z-normalization, rolling-window construction, and a seeded synthetic
//! generator of coupled sinusoid groups.

use crate::error::{Result, TsatError};
use crate::graph::NodeMatrix;
use crate::rng::{seed_stream, streams};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::fmt;
use std::ops::Range;
use std::path::Path;

/// Raw multivariate observations: series as rows, time as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesFrame {
    values: Tensor,
    series_names: Vec<String>,
    timestamps: Option<Vec<String>>,
}

impl TimeSeriesFrame {
    pub fn new(values: Tensor, series_names: Vec<String>, timestamps: Option<Vec<String>>) -> Result<Self> {
        let (n, t) = values.dims2("time_series_frame")?;
        if series_names.len() != n {
            return Err(TsatError::dimension(
                "time_series_frame",
                format!("{} names for {} series", series_names.len(), n),
            ));
        }
        if let Some(ts) = &timestamps {
            if ts.len() != t {
                return Err(TsatError::dimension(
                    "time_series_frame",
                    format!("{} timestamps for {} steps", ts.len(), t),
                ));
            }
        }
        values.debug_check_finite("time_series_frame");
        Ok(TimeSeriesFrame {
            values,
            series_names,
            timestamps,
        })
    }

    pub fn num_series(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn num_steps(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn series(&self, i: usize) -> &[f64] {
        self.values.row(i)
    }

    pub fn series_names(&self) -> &[String] {
        &self.series_names
    }

    pub fn timestamps(&self) -> Option<&[String]> {
        self.timestamps.as_deref()
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    /// The frame as CSV in the same column-per-series layout it is read
    /// from, with timestamps leading when present.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if self.timestamps.is_some() {
            out.push_str("timestamp,");
        }
        out.push_str(&self.series_names.join(","));
        out.push('\n');
        for t in 0..self.num_steps() {
            if let Some(ts) = &self.timestamps {
                out.push_str(&ts[t]);
                out.push(',');
            }
            let row: Vec<String> = (0..self.num_series())
                .map(|i| format!("{}", self.values.at(i, t)))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Strict CSV load: a header row of series names, an optional leading
/// timestamp column auto-detected by non-numeric content in the first data
/// row, and a located error for any other non-numeric or missing cell.
/// Row/column positions in errors are 1-based file coordinates.
pub fn load_csv(path: impl AsRef<Path>) -> Result<TimeSeriesFrame> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| TsatError::io(path.display().to_string(), e))?;
    parse_csv(&text, &path.display().to_string())
}

pub fn parse_csv(text: &str, path: &str) -> Result<TimeSeriesFrame> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| TsatError::Parse {
        path: path.to_string(),
        row: 1,
        col: 1,
        detail: "empty file".to_string(),
    })?;
    let header_cells: Vec<&str> = header.split(',').map(str::trim).collect();
    let rows: Vec<(usize, Vec<&str>)> = lines
        .map(|(ln, l)| (ln, l.split(',').map(str::trim).collect()))
        .collect();
    if rows.is_empty() {
        return Err(TsatError::Parse {
            path: path.to_string(),
            row: 2,
            col: 1,
            detail: "no data rows".to_string(),
        });
    }

    // Timestamp column detection: non-numeric first cell of the first row.
    let has_timestamps = rows[0].1.first().map(|c| c.parse::<f64>().is_err()).unwrap_or(false);
    let first_value_col = usize::from(has_timestamps);
    if header_cells.len() <= first_value_col {
        return Err(TsatError::Parse {
            path: path.to_string(),
            row: 1,
            col: 1,
            detail: "header has no series columns".to_string(),
        });
    }
    let series_names: Vec<String> = header_cells[first_value_col..].iter().map(|s| s.to_string()).collect();
    let n = series_names.len();
    let t = rows.len();

    let mut timestamps = if has_timestamps { Some(Vec::with_capacity(t)) } else { None };
    let mut data = vec![0.0; n * t];
    for (step, (line_no, cells)) in rows.iter().enumerate() {
        if cells.len() != n + first_value_col {
            return Err(TsatError::Parse {
                path: path.to_string(),
                row: *line_no,
                col: cells.len().max(1),
                detail: format!("expected {} cells, found {}", n + first_value_col, cells.len()),
            });
        }
        if let Some(ts) = &mut timestamps {
            ts.push(cells[0].to_string());
        }
        for (s, cell) in cells[first_value_col..].iter().enumerate() {
            if cell.is_empty() {
                return Err(TsatError::Parse {
                    path: path.to_string(),
                    row: *line_no,
                    col: first_value_col + s + 1,
                    detail: "missing value".to_string(),
                });
            }
            let v: f64 = cell.parse().map_err(|_| TsatError::Parse {
                path: path.to_string(),
                row: *line_no,
                col: first_value_col + s + 1,
                detail: format!("not a number: {:?}", cell),
            })?;
            if !v.is_finite() {
                return Err(TsatError::Parse {
                    path: path.to_string(),
                    row: *line_no,
                    col: first_value_col + s + 1,
                    detail: format!("non-finite value: {:?}", cell),
                });
            }
            data[s * t + step] = v;
        }
    }
    TimeSeriesFrame::new(Tensor::new(vec![n, t], data)?, series_names, timestamps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// Step-index ranges of the three sequential splits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

/// First 80% of steps form the training span, whose last 10% becomes the
/// validation span; the remaining 20% is the test span. Windows are built
/// per span, so they never straddle a boundary.
pub fn split_sequential(frame: &TimeSeriesFrame) -> Result<SplitRanges> {
    let t = frame.num_steps();
    let train_span = (0.8 * t as f64).floor() as usize;
    let val_len = (0.1 * train_span as f64).floor() as usize;
    if train_span == 0 || val_len == 0 || train_span >= t {
        return Err(TsatError::Config(format!(
            "series too short to split: {} steps", t
        )));
    }
    Ok(SplitRanges {
        train: 0..train_span - val_len,
        val: train_span - val_len..train_span,
        test: train_span..t,
    })
}

/// Per-series normalization statistics from the training span.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Series whose train-range std fell below 1e-12 and were zeroed.
    pub degenerate: Vec<usize>,
}

/// Z-score every series with statistics computed on the training range only.
/// A constant (dead) series maps to zeros instead of failing.
pub fn znormalize(frame: &TimeSeriesFrame, train_range: &Range<usize>) -> Result<(TimeSeriesFrame, NormStats)> {
    if train_range.is_empty() || train_range.end > frame.num_steps() {
        return Err(TsatError::Config(format!(
            "bad train range {:?} for {} steps",
            train_range,
            frame.num_steps()
        )));
    }
    let n = frame.num_series();
    let t = frame.num_steps();
    let span = train_range.len() as f64;
    let mut mean = vec![0.0; n];
    let mut std = vec![0.0; n];
    let mut degenerate = Vec::new();
    let mut data = vec![0.0; n * t];
    for i in 0..n {
        let series = frame.series(i);
        let m = series[train_range.clone()].iter().sum::<f64>() / span;
        let var = series[train_range.clone()].iter().map(|v| (v - m) * (v - m)).sum::<f64>() / span;
        let s = var.sqrt();
        mean[i] = m;
        std[i] = s;
        if s < 1e-12 {
            degenerate.push(i);
            // leaves the row at zero
        } else {
            for (step, v) in series.iter().enumerate() {
                data[i * t + step] = (v - m) / s;
            }
        }
    }
    let normalized = TimeSeriesFrame::new(
        Tensor::new(vec![n, t], data)?,
        frame.series_names().to_vec(),
        frame.timestamps().map(|ts| ts.to_vec()),
    )?;
    Ok((normalized, NormStats { mean, std, degenerate }))
}

/// Invert [`znormalize`] on an N×h block of per-series values (rows aligned
/// with the frame's series order). Degenerate series map back to their mean.
pub fn denormalize(values: &Tensor, stats: &NormStats) -> Result<Tensor> {
    let (n, h) = values.dims2("denormalize")?;
    if n != stats.mean.len() {
        return Err(TsatError::dimension(
            "denormalize",
            format!("{} rows vs {} series statistics", n, stats.mean.len()),
        ));
    }
    let mut out = values.clone();
    for i in 0..n {
        let s = if stats.std[i] < 1e-12 { 0.0 } else { stats.std[i] };
        for j in 0..h {
            let idx = i * h + j;
            out.data_mut()[idx] = values.data()[idx] * s + stats.mean[i];
        }
    }
    Ok(out)
}

/// One rolling window: N×L_x backcast values and the N×L_y forecast target,
/// which starts at the step immediately after the backcast ends.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub x: Tensor,
    pub y: Tensor,
    pub x_start: usize,
    pub y_start: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowDataset {
    pub windows: Vec<Window>,
    pub series_names: Vec<String>,
    pub backcast_len: usize,
    pub forecast_len: usize,
    pub stride: usize,
    pub split: Split,
}

impl WindowDataset {
    /// The backcast of window `idx` as a graph-ready node matrix.
    pub fn node_matrix(&self, idx: usize) -> Result<NodeMatrix> {
        let w = &self.windows[idx];
        NodeMatrix::new(w.x.clone(), self.series_names.clone(), w.x_start)
    }

    /// `floor((span - (L_x + L_y)) / stride) + 1` windows when the span is
    /// long enough.
    pub fn expected_count(span: usize, l_x: usize, l_y: usize, stride: usize) -> usize {
        if span < l_x + l_y {
            0
        } else {
            (span - (l_x + l_y)) / stride + 1
        }
    }

    /// Manifest rows: window_id, x_start, y_start, split.
    pub fn manifest_csv(&self) -> String {
        let mut out = String::from("window_id,x_start,y_start,split\n");
        for (id, w) in self.windows.iter().enumerate() {
            out.push_str(&format!("{},{},{},{}\n", id, w.x_start, w.y_start, self.split));
        }
        out
    }
}

/// Slide (backcast, forecast) pairs over `range` of the frame at the given
/// stride. Window start offsets are absolute frame steps.
pub fn make_windows(
    frame: &TimeSeriesFrame,
    range: &Range<usize>,
    l_x: usize,
    l_y: usize,
    stride: usize,
    split: Split,
) -> Result<WindowDataset> {
    if stride == 0 {
        return Err(TsatError::Parameter {
            name: "stride",
            detail: "must be at least 1".to_string(),
        });
    }
    if range.end > frame.num_steps() {
        return Err(TsatError::Config(format!(
            "range {:?} exceeds {} steps",
            range,
            frame.num_steps()
        )));
    }
    let span = range.len();
    if span < l_x + l_y {
        return Err(TsatError::Config(format!(
            "span of {} steps too short for backcast {} + forecast {}",
            span, l_x, l_y
        )));
    }
    let n = frame.num_series();
    let mut windows = Vec::with_capacity(WindowDataset::expected_count(span, l_x, l_y, stride));
    let mut start = range.start;
    while start + l_x + l_y <= range.end {
        let mut x_data = Vec::with_capacity(n * l_x);
        let mut y_data = Vec::with_capacity(n * l_y);
        for i in 0..n {
            let row = frame.series(i);
            x_data.extend_from_slice(&row[start..start + l_x]);
            y_data.extend_from_slice(&row[start + l_x..start + l_x + l_y]);
        }
        windows.push(Window {
            x: Tensor::new(vec![n, l_x], x_data)?,
            y: Tensor::new(vec![n, l_y], y_data)?,
            x_start: start,
            y_start: start + l_x,
        });
        start += stride;
    }
    Ok(WindowDataset {
        windows,
        series_names: frame.series_names().to_vec(),
        backcast_len: l_x,
        forecast_len: l_y,
        stride,
        split,
    })
}

/// Synthetic generator settings. Groups partition the series indices; each
/// group shares a trend slope and base frequency, members differ by a phase
/// offset and receive lag-coupled leakage from their peers.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_series: usize,
    pub num_steps: usize,
    pub groups: Vec<Vec<usize>>,
    pub noise_std: f64,
    pub seed: u64,
    /// Phase offset (radians) between successive members of a group; zero
    /// makes the members of a noise-free group identical.
    pub phase_spread: f64,
    /// Strength of the lagged peer leakage term.
    pub coupling: f64,
    /// Leakage lag in steps.
    pub lag: usize,
}

impl SynthConfig {
    pub fn new(num_series: usize, num_steps: usize, num_groups: usize, noise_std: f64, seed: u64) -> Self {
        SynthConfig {
            num_series,
            num_steps,
            groups: even_groups(num_series, num_groups),
            noise_std,
            seed,
            phase_spread: 0.7,
            coupling: 0.3,
            lag: 4,
        }
    }
}

/// Split 0..n into `g` contiguous groups as evenly as possible.
pub fn even_groups(n: usize, g: usize) -> Vec<Vec<usize>> {
    let g = g.max(1).min(n.max(1));
    let base = n / g;
    let extra = n % g;
    let mut out = Vec::with_capacity(g);
    let mut next = 0;
    for gi in 0..g {
        let size = base + usize::from(gi < extra);
        out.push((next..next + size).collect());
        next += size;
    }
    out
}

/// Group trend slope: +1, -1, +2, -2, ...
fn group_slope(g: usize) -> f64 {
    let magnitude = 1.0 + (g / 2) as f64;
    if g % 2 == 0 {
        magnitude
    } else {
        -magnitude
    }
}

/// Group base period in steps: 16, 24, 32, ... Short enough that a typical
/// backcast window spans several cycles, so window-scale decompositions
/// recover the oscillation rather than folding it into the residual.
fn group_period(g: usize) -> f64 {
    16.0 * (1.0 + 0.5 * g as f64)
}

/// Seeded synthetic frame of grouped, coupled, noisy sinusoids over linear
/// trends.
pub fn synth_coupled_sinusoids(cfg: &SynthConfig) -> Result<TimeSeriesFrame> {
    if cfg.num_series < 2 {
        return Err(TsatError::Parameter {
            name: "num_series",
            detail: "need at least 2 series".to_string(),
        });
    }
    if cfg.num_steps < 256 {
        return Err(TsatError::Parameter {
            name: "num_steps",
            detail: format!("need at least 256 steps, got {}", cfg.num_steps),
        });
    }
    let mut seen = vec![false; cfg.num_series];
    for group in &cfg.groups {
        for &i in group {
            if i >= cfg.num_series || seen[i] {
                return Err(TsatError::Parameter {
                    name: "groups",
                    detail: format!("groups must partition 0..{}", cfg.num_series),
                });
            }
            seen[i] = true;
        }
    }
    if !seen.iter().all(|&s| s) {
        return Err(TsatError::Parameter {
            name: "groups",
            detail: "every series must belong to a group".to_string(),
        });
    }

    let t_total = cfg.num_steps;
    let mut group_of = vec![0usize; cfg.num_series];
    let mut rank_in_group = vec![0usize; cfg.num_series];
    for (g, group) in cfg.groups.iter().enumerate() {
        for (r, &i) in group.iter().enumerate() {
            group_of[i] = g;
            rank_in_group[i] = r;
        }
    }
    let phase = |i: usize| cfg.phase_spread * rank_in_group[i] as f64;
    let base = |i: usize, t: f64| {
        let g = group_of[i];
        let omega = 2.0 * std::f64::consts::PI / group_period(g);
        group_slope(g) * t / t_total as f64 + (omega * t + phase(i)).sin()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed_stream(cfg.seed, streams::NOISE));
    let normal = Normal::new(0.0, cfg.noise_std.max(0.0)).map_err(|e| TsatError::Parameter {
        name: "noise_std",
        detail: e.to_string(),
    })?;

    let mut data = vec![0.0; cfg.num_series * t_total];
    for i in 0..cfg.num_series {
        let peers: Vec<usize> = cfg.groups[group_of[i]].iter().copied().filter(|&j| j != i).collect();
        for t in 0..t_total {
            let tf = t as f64;
            let mut v = base(i, tf);
            if !peers.is_empty() && cfg.coupling != 0.0 {
                let lagged = tf - cfg.lag as f64;
                let leak: f64 = peers.iter().map(|&j| base(j, lagged)).sum::<f64>() / peers.len() as f64;
                v += cfg.coupling * leak;
            }
            if cfg.noise_std > 0.0 {
                v += normal.sample(&mut rng);
            }
            data[i * t_total + t] = v;
        }
    }
    TimeSeriesFrame::new(
        Tensor::new(vec![cfg.num_series, t_total], data)?,
        (0..cfg.num_series).map(|i| format!("series_{}", i)).collect(),
        None,
    )
}
