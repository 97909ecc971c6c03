//! Edge-enhanced dynamic graphs built from one rolling window: a node matrix
//! of backcast values, an N×N×K edge tensor of pairwise IMF cosine
//! similarities, and a binary adjacency thresholding the residual-trend
//! correlations.

use crate::emd::{self, ImfDecomposition, Series};
use crate::error::{Result, TsatError};
use crate::par;
use crate::tensor::{cosine_similarity, Tensor};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Sifting knobs threaded through graph construction.
#[derive(Debug, Clone, Copy)]
pub struct SiftParams {
    pub sd_threshold: f64,
    pub max_iter: usize,
}

impl Default for SiftParams {
    fn default() -> Self {
        SiftParams {
            sd_threshold: emd::DEFAULT_SD_THRESHOLD,
            max_iter: emd::DEFAULT_MAX_SIFT_ITER,
        }
    }
}

/// One window of backcast values: row i holds the last L_x observations of
/// series i.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeMatrix {
    x: Tensor,
    series_names: Vec<String>,
    window_start: usize,
}

impl NodeMatrix {
    pub fn new(x: Tensor, series_names: Vec<String>, window_start: usize) -> Result<Self> {
        let (n, l_x) = x.dims2("node_matrix")?;
        if n < 2 {
            return Err(TsatError::Parameter {
                name: "series count",
                detail: format!("need at least 2 series, got {}", n),
            });
        }
        if l_x < emd::MIN_SERIES_LEN {
            return Err(TsatError::Parameter {
                name: "backcast length",
                detail: format!("need at least {} steps, got {}", emd::MIN_SERIES_LEN, l_x),
            });
        }
        if series_names.len() != n {
            return Err(TsatError::dimension(
                "node_matrix",
                format!("{} names for {} rows", series_names.len(), n),
            ));
        }
        x.debug_check_finite("node_matrix");
        Ok(NodeMatrix {
            x,
            series_names,
            window_start,
        })
    }

    pub fn matrix(&self) -> &Tensor {
        &self.x
    }

    pub fn num_series(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn backcast_len(&self) -> usize {
        self.x.shape()[1]
    }

    pub fn series_names(&self) -> &[String] {
        &self.series_names
    }

    pub fn window_start(&self) -> usize {
        self.window_start
    }

    /// Reorder series rows: row i of the result is row perm[i] of self.
    pub fn permuted(&self, perm: &[usize]) -> Result<NodeMatrix> {
        let n = self.num_series();
        if perm.len() != n {
            return Err(TsatError::dimension(
                "permute",
                format!("permutation length {} vs {} series", perm.len(), n),
            ));
        }
        let mut data = Vec::with_capacity(self.x.numel());
        let mut names = Vec::with_capacity(n);
        for &p in perm {
            data.extend_from_slice(self.x.row(p));
            names.push(self.series_names[p].clone());
        }
        NodeMatrix::new(
            Tensor::new(vec![n, self.backcast_len()], data)?,
            names,
            self.window_start,
        )
    }
}

/// Symmetric N×N×K tensor of per-IMF cosine similarities.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeTensor {
    n: usize,
    k: usize,
    data: Vec<f64>,
}

impl EdgeTensor {
    fn zeros(n: usize, k: usize) -> Self {
        EdgeTensor {
            n,
            k,
            data: vec![0.0; n * n * k],
        }
    }

    /// Rebuild from a flat (i·N + j)·K + k buffer, e.g. when deserializing.
    pub fn from_raw(n: usize, k: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n * k {
            return Err(TsatError::dimension(
                "edge_tensor",
                format!("{} values for shape {}x{}x{}", data.len(), n, n, k),
            ));
        }
        Ok(EdgeTensor { n, k, data })
    }

    pub fn num_series(&self) -> usize {
        self.n
    }

    pub fn num_imfs(&self) -> usize {
        self.k
    }

    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.n + j) * self.k + k]
    }

    fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        self.data[(i * self.n + j) * self.k + k] = v;
    }

    /// The N×N similarity matrix of IMF k across all series.
    pub fn imf_matrix(&self, k: usize) -> Tensor {
        let mut data = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            for j in 0..self.n {
                data[i * self.n + j] = self.at(i, j, k);
            }
        }
        Tensor::new(vec![self.n, self.n], data).expect("square")
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }
}

/// Binary connectivity from thresholded residual correlations.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    n: usize,
    a: Vec<u8>,
    threshold: f64,
}

impl Adjacency {
    pub fn num_series(&self) -> usize {
        self.n
    }

    pub fn at(&self, i: usize, j: usize) -> u8 {
        self.a[i * self.n + j]
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Number of 1-entries in row i.
    pub fn degree(&self, i: usize) -> usize {
        self.a[i * self.n..(i + 1) * self.n].iter().map(|&v| v as usize).sum()
    }

    /// The adjacency as a dense 0/1 tensor for the attention mix.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.n, self.n], self.a.iter().map(|&v| v as f64).collect()).expect("square")
    }
}

/// The triple (nodes, edges, adjacency) plus the residual correlations and
/// the padded per-series decompositions it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicGraph {
    pub nodes: NodeMatrix,
    pub edges: EdgeTensor,
    pub adjacency: Adjacency,
    pub residual_correlations: Tensor,
    pub decompositions: Vec<ImfDecomposition>,
}

impl DynamicGraph {
    pub fn num_series(&self) -> usize {
        self.nodes.num_series()
    }

    pub fn num_imfs(&self) -> usize {
        self.edges.num_imfs()
    }

    /// D_imf_k: slice k of the edge tensor.
    pub fn imf_similarity_matrix(&self, k: usize) -> Tensor {
        self.edges.imf_matrix(k)
    }
}

/// Cosine similarity of two same-IMF vectors; 0 if either has norm < 1e-12.
pub fn imf_similarity(f_i: &[f64], f_j: &[f64]) -> Result<f64> {
    cosine_similarity(f_i, f_j, "imf_similarity")
}

/// Uncentered correlation of two residual trends; 0 if either has norm
/// < 1e-12. Deliberately not Pearson: residuals are trends and centering
/// would change what "similar trend" means.
pub fn residual_correlation(r_i: &[f64], r_j: &[f64]) -> Result<f64> {
    cosine_similarity(r_i, r_j, "residual_correlation")
}

/// a_ij = 1 iff |rho_ij| > c, with the diagonal forced to 1.
pub fn build_adjacency(rho: &Tensor, c: f64) -> Result<Adjacency> {
    if !(0.0..=1.0).contains(&c) {
        return Err(TsatError::Parameter {
            name: "threshold",
            detail: format!("must lie in [0, 1], got {}", c),
        });
    }
    let (n, m) = rho.dims2("build_adjacency")?;
    if n != m {
        return Err(TsatError::dimension(
            "build_adjacency",
            format!("correlation matrix must be square, got {}x{}", n, m),
        ));
    }
    let mut a = vec![0u8; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = if i == j || rho.at(i, j).abs() > c { 1 } else { 0 };
        }
    }
    Ok(Adjacency { n, a, threshold: c })
}

/// Decompose every series of the window, pad to a common K, and assemble the
/// edge tensor, residual correlations, and adjacency.
pub fn build_graph(window: &NodeMatrix, k: usize, c: f64, sift: &SiftParams) -> Result<DynamicGraph> {
    if k == 0 {
        return Err(TsatError::Parameter {
            name: "k",
            detail: "must be at least 1".to_string(),
        });
    }
    let n = window.num_series();
    let mut decompositions = Vec::with_capacity(n);
    for i in 0..n {
        let series = Series::new(window.series_names()[i].clone(), window.matrix().row(i).to_vec())?;
        let d = emd::decompose_with(&series, k, sift.sd_threshold, sift.max_iter)?;
        decompositions.push(emd::pad_to_k(&d, k)?);
    }

    let mut edges = EdgeTensor::zeros(n, k);
    for kk in 0..k {
        for i in 0..n {
            let fi = &decompositions[i].imfs[kk];
            let self_sim = if fi.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-12 {
                0.0
            } else {
                1.0
            };
            edges.set(i, i, kk, self_sim);
            for j in (i + 1)..n {
                let e = imf_similarity(fi, &decompositions[j].imfs[kk])?;
                edges.set(i, j, kk, e);
                edges.set(j, i, kk, e);
            }
        }
    }

    let mut rho = Tensor::zeros(vec![n, n]);
    for i in 0..n {
        let ri = &decompositions[i].residual;
        let self_corr = if ri.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-12 {
            0.0
        } else {
            1.0
        };
        rho.data_mut()[i * n + i] = self_corr;
        for j in (i + 1)..n {
            let r = residual_correlation(ri, &decompositions[j].residual)?;
            rho.data_mut()[i * n + j] = r;
            rho.data_mut()[j * n + i] = r;
        }
    }

    let adjacency = build_adjacency(&rho, c)?;
    Ok(DynamicGraph {
        nodes: window.clone(),
        edges,
        adjacency,
        residual_correlations: rho,
        decompositions,
    })
}

/// Build graphs for many windows. Windows are independent, so this fans out
/// over the rayon pool when the `parallel` feature is on; output order always
/// matches input order.
pub fn build_graphs(windows: &[NodeMatrix], k: usize, c: f64, sift: &SiftParams) -> Result<Vec<DynamicGraph>> {
    par::batch_map(windows, |w| build_graph(w, k, c, sift))
        .into_iter()
        .collect()
}

/// Sequential reference for [`build_graphs`].
pub fn build_graphs_seq(windows: &[NodeMatrix], k: usize, c: f64, sift: &SiftParams) -> Result<Vec<DynamicGraph>> {
    par::batch_map_seq(windows, |w| build_graph(w, k, c, sift))
        .into_iter()
        .collect()
}
