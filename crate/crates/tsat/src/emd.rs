//! Empirical mode decomposition: iterative sifting with natural cubic
//! spline envelopes, splitting a series into intrinsic mode functions plus a
//! residual trend. The residual carries the trend used for graph adjacency;
//! the IMFs feed the edge tensor.

use crate::error::{Result, TsatError};

pub const DEFAULT_SD_THRESHOLD: f64 = 0.2;
pub const DEFAULT_MAX_SIFT_ITER: usize = 100;
pub const DEFAULT_K_MAX: usize = 4;

/// Minimum series length for envelope construction.
pub const MIN_SERIES_LEN: usize = 8;

/// A named univariate series.
#[derive(Debug, Clone)]
pub struct Series {
    values: Vec<f64>,
    name: String,
}

impl Series {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        if values.len() < MIN_SERIES_LEN {
            return Err(TsatError::Parameter {
                name: "series length",
                detail: format!("need at least {} samples, got {}", MIN_SERIES_LEN, values.len()),
            });
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(TsatError::Parameter {
                name: "series values",
                detail: format!("non-finite value {}", bad),
            });
        }
        Ok(Series {
            values,
            name: name.into(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Ordered IMFs plus the residual trend; summing them reconstructs the input
/// exactly up to floating-point associativity.
#[derive(Debug, Clone, PartialEq)]
pub struct ImfDecomposition {
    pub imfs: Vec<Vec<f64>>,
    pub residual: Vec<f64>,
    pub sift_iterations: Vec<usize>,
}

impl ImfDecomposition {
    pub fn num_imfs(&self) -> usize {
        self.imfs.len()
    }

    pub fn len(&self) -> usize {
        self.residual.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residual.is_empty()
    }

    /// Σ IMFs + residual.
    pub fn reconstruct(&self) -> Vec<f64> {
        let mut out = self.residual.clone();
        for imf in &self.imfs {
            for (o, v) in out.iter_mut().zip(imf) {
                *o += v;
            }
        }
        out
    }
}

/// Strict local maxima and minima of a signal. A plateau of equal values
/// contributes its midpoint index (rounded down) once; runs touching either
/// boundary are not extrema.
pub fn find_extrema(x: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let n = x.len();
    let mut maxima = Vec::new();
    let mut minima = Vec::new();
    if n < 3 {
        return (maxima, minima);
    }
    let mut start = 0;
    while start < n {
        let mut end = start;
        while end + 1 < n && x[end + 1] == x[start] {
            end += 1;
        }
        if start > 0 && end < n - 1 {
            let v = x[start];
            let (left, right) = (x[start - 1], x[end + 1]);
            if left < v && right < v {
                maxima.push((start + end) / 2);
            } else if left > v && right > v {
                minima.push((start + end) / 2);
            }
        }
        start = end + 1;
    }
    (maxima, minima)
}

/// Envelope through extrema: a natural cubic spline with the boundary-nearest
/// extremum mirrored past each end before fitting, evaluated at every sample
/// point. An extremum sitting exactly on a boundary is its own mirror and
/// adds nothing.
pub fn spline_envelope(extrema_idx: &[usize], extrema_val: &[f64], length: usize) -> Result<Vec<f64>> {
    if extrema_idx.len() != extrema_val.len() {
        return Err(TsatError::dimension(
            "spline_envelope",
            format!("{} indices vs {} values", extrema_idx.len(), extrema_val.len()),
        ));
    }
    let mut xs: Vec<f64> = Vec::with_capacity(extrema_idx.len() + 2);
    let mut ys: Vec<f64> = Vec::with_capacity(extrema_idx.len() + 2);
    if let (Some(&first), Some(&last)) = (extrema_idx.first(), extrema_idx.last()) {
        if first > 0 {
            xs.push(-(first as f64));
            ys.push(extrema_val[0]);
        }
        for (&i, &v) in extrema_idx.iter().zip(extrema_val) {
            xs.push(i as f64);
            ys.push(v);
        }
        if last < length - 1 {
            xs.push(2.0 * (length - 1) as f64 - last as f64);
            ys.push(*extrema_val.last().unwrap());
        }
    }
    if xs.len() < 2 {
        return Err(TsatError::DegenerateSignal(format!(
            "only {} envelope knots after boundary extension (need 2)",
            xs.len()
        )));
    }
    let spline = NaturalCubicSpline::fit(&xs, &ys);
    Ok((0..length).map(|t| spline.eval(t as f64)).collect())
}

/// One sifting pass sequence producing a single IMF candidate.
///
/// Iterates `h ← h − (upper + lower)/2` until the Cauchy criterion
/// `Σ(h_prev−h)² / Σ h_prev² < sd_threshold` or `max_iter` is reached.
pub fn sift(x: &[f64], sd_threshold: f64, max_iter: usize) -> Result<Vec<f64>> {
    sift_counted(x, sd_threshold, max_iter, false).map(|(imf, _)| imf)
}

/// With `refine`, the loop additionally runs until the candidate satisfies
/// the zero-crossing/extrema balance (still capped by `max_iter`); the full
/// decomposition uses this so extracted IMFs are proper IMFs.
pub(crate) fn sift_counted(
    x: &[f64],
    sd_threshold: f64,
    max_iter: usize,
    refine: bool,
) -> Result<(Vec<f64>, usize)> {
    let mut h = x.to_vec();
    let mut iterations = 0;
    for iter in 0..max_iter {
        let (maxima, minima) = find_extrema(&h);
        if maxima.len() < 2 || minima.len() < 2 {
            if iter == 0 {
                return Err(TsatError::DegenerateSignal(format!(
                    "sift needs at least 2 maxima and 2 minima, found {} and {}",
                    maxima.len(),
                    minima.len()
                )));
            }
            // Oscillation exhausted mid-sift; the current candidate stands.
            break;
        }
        let max_vals: Vec<f64> = maxima.iter().map(|&i| h[i]).collect();
        let min_vals: Vec<f64> = minima.iter().map(|&i| h[i]).collect();
        let upper = spline_envelope(&maxima, &max_vals, h.len())?;
        let lower = spline_envelope(&minima, &min_vals, h.len())?;

        let mut sum_diff_sq = 0.0;
        let mut sum_prev_sq = 0.0;
        for i in 0..h.len() {
            let mean = 0.5 * (upper[i] + lower[i]);
            sum_diff_sq += mean * mean;
            sum_prev_sq += h[i] * h[i];
            h[i] -= mean;
        }
        iterations = iter + 1;
        let sd = if sum_prev_sq > 0.0 {
            sum_diff_sq / sum_prev_sq
        } else {
            0.0
        };
        if sd < sd_threshold && (!refine || satisfies_imf_property(&h)) {
            break;
        }
    }
    Ok((h, iterations))
}

/// Full decomposition: extract IMFs from the running residual until it no
/// longer supports envelopes (fewer than 2 maxima or 2 minima) or `k_max`
/// IMFs have been taken. A monotone or otherwise degenerate input yields
/// zero IMFs with the input as residual.
pub fn decompose(x: &Series, k_max: usize) -> Result<ImfDecomposition> {
    decompose_with(x, k_max, DEFAULT_SD_THRESHOLD, DEFAULT_MAX_SIFT_ITER)
}

pub fn decompose_with(
    x: &Series,
    k_max: usize,
    sd_threshold: f64,
    max_sift_iter: usize,
) -> Result<ImfDecomposition> {
    if k_max == 0 {
        return Err(TsatError::Parameter {
            name: "k_max",
            detail: "must be at least 1".to_string(),
        });
    }
    let mut residual = x.values().to_vec();
    let mut imfs = Vec::new();
    let mut sift_iterations = Vec::new();
    while imfs.len() < k_max {
        let (maxima, minima) = find_extrema(&residual);
        if maxima.len() < 2 || minima.len() < 2 {
            break;
        }
        let (imf, iters) = sift_counted(&residual, sd_threshold, max_sift_iter, true)?;
        for (r, v) in residual.iter_mut().zip(&imf) {
            *r -= v;
        }
        imfs.push(imf);
        sift_iterations.push(iters);
    }
    Ok(ImfDecomposition {
        imfs,
        residual,
        sift_iterations,
    })
}

/// Force exactly `k` IMF slots. Missing slots are zero vectors; surplus IMFs
/// are folded into the residual by summation, so reconstruction is unchanged.
pub fn pad_to_k(d: &ImfDecomposition, k: usize) -> Result<ImfDecomposition> {
    if k == 0 {
        return Err(TsatError::Parameter {
            name: "k",
            detail: "must be at least 1".to_string(),
        });
    }
    let len = d.len();
    let mut out = d.clone();
    if out.imfs.len() > k {
        let surplus: Vec<Vec<f64>> = out.imfs.split_off(k);
        out.sift_iterations.truncate(k);
        for imf in surplus {
            for (r, v) in out.residual.iter_mut().zip(&imf) {
                *r += v;
            }
        }
    } else {
        while out.imfs.len() < k {
            out.imfs.push(vec![0.0; len]);
            out.sift_iterations.push(0);
        }
    }
    Ok(out)
}

/// Sign changes of the signal, skipping exact zeros.
pub fn count_zero_crossings(x: &[f64]) -> usize {
    let mut count = 0;
    let mut last_sign = 0i8;
    for &v in x {
        let sign = if v > 0.0 {
            1
        } else if v < 0.0 {
            -1
        } else {
            0
        };
        if sign != 0 {
            if last_sign != 0 && sign != last_sign {
                count += 1;
            }
            last_sign = sign;
        }
    }
    count
}

/// |#zero-crossings − #extrema| ≤ 1 for a proper (non-zero) IMF.
pub fn satisfies_imf_property(x: &[f64]) -> bool {
    if x.iter().all(|&v| v == 0.0) {
        return true;
    }
    let (maxima, minima) = find_extrema(x);
    let extrema = maxima.len() + minima.len();
    let crossings = count_zero_crossings(x);
    (crossings as i64 - extrema as i64).abs() <= 1
}

/// Natural cubic spline over strictly increasing knot positions.
struct NaturalCubicSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    d: Vec<f64>,
}

impl NaturalCubicSpline {
    fn fit(xs: &[f64], ys: &[f64]) -> Self {
        let n = xs.len();
        debug_assert!(n >= 2);
        let mut b = vec![0.0; n];
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        if n > 2 {
            let h: Vec<f64> = (0..n - 1).map(|i| xs[i + 1] - xs[i]).collect();
            let mut alpha = vec![0.0; n];
            for i in 1..n - 1 {
                alpha[i] = 3.0 * ((ys[i + 1] - ys[i]) / h[i] - (ys[i] - ys[i - 1]) / h[i - 1]);
            }
            let mut l = vec![1.0; n];
            let mut mu = vec![0.0; n];
            let mut z = vec![0.0; n];
            for i in 1..n - 1 {
                l[i] = 2.0 * (xs[i + 1] - xs[i - 1]) - h[i - 1] * mu[i - 1];
                mu[i] = h[i] / l[i];
                z[i] = (alpha[i] - h[i - 1] * z[i - 1]) / l[i];
            }
            for j in (0..n - 1).rev() {
                c[j] = z[j] - mu[j] * c[j + 1];
                b[j] = (ys[j + 1] - ys[j]) / h[j] - h[j] * (c[j + 1] + 2.0 * c[j]) / 3.0;
                d[j] = (c[j + 1] - c[j]) / (3.0 * h[j]);
            }
        } else {
            b[0] = (ys[1] - ys[0]) / (xs[1] - xs[0]);
        }
        NaturalCubicSpline {
            xs: xs.to_vec(),
            ys: ys.to_vec(),
            b,
            c,
            d,
        }
    }

    fn eval(&self, t: f64) -> f64 {
        let n = self.xs.len();
        if t <= self.xs[0] {
            let dx = t - self.xs[0];
            return self.ys[0] + self.b[0] * dx + self.c[0] * dx * dx + self.d[0] * dx * dx * dx;
        }
        if t >= self.xs[n - 1] {
            let j = n - 2;
            let dx = t - self.xs[j];
            return self.ys[j] + self.b[j] * dx + self.c[j] * dx * dx + self.d[j] * dx * dx * dx;
        }
        // Rightmost segment whose start is <= t.
        let mut lo = 0;
        let mut hi = n - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.xs[mid] <= t {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let dx = t - self.xs[lo];
        self.ys[lo] + self.b[lo] * dx + self.c[lo] * dx * dx + self.d[lo] * dx * dx * dx
    }
}
