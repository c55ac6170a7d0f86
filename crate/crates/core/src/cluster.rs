//! Mean-shift clustering of layers by how much their graphs change from the
//! previous layer.
//!
//! Each layer is a sample. Its features are the similarity values
//! `sim(G_l, G_{l−1})` of every claim (`profile`), or their mean (`mean`).
//! The flat-kernel bandwidth is the average distance to the k-th nearest
//! other sample with `k = max(1, ⌊q·n⌋)`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedsim::LayerSimilaritySeries;
use crate::matrix::Matrix;
use crate::scalar::{euclidean, ordered_sum, Scalar};

pub const DEFAULT_QUANTILE: f64 = 0.25;
pub const DEFAULT_MAX_ITER: usize = 300;
/// Convergence threshold as a fraction of the bandwidth.
pub const DEFAULT_TOL_FACTOR: f64 = 1e-3;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("{0}")]
    Argument(String),
}

fn arg<T>(msg: impl Into<String>) -> Result<T, ClusterError> {
    Err(ClusterError::Argument(msg.into()))
}

/// Rows are layers, columns are claims.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFeatureTable<T> {
    pub layers: Vec<u32>,
    pub claim_ids: Vec<String>,
    /// Cells as observed; `None` where the claim has no value for the layer.
    pub observed: Vec<Vec<Option<T>>>,
    /// Missing cells replaced by the mean of the observed cells of their row.
    pub imputed: Matrix<T>,
}

impl<T: Scalar> LayerFeatureTable<T> {
    pub fn observed_values(&self, row: usize) -> Vec<T> {
        self.observed[row].iter().flatten().copied().collect()
    }

    pub fn row_mean(&self, row: usize) -> T {
        let v = self.observed_values(row);
        ordered_sum(&v) / T::of(v.len() as f64)
    }

    /// Population standard deviation of the observed cells.
    pub fn row_std(&self, row: usize) -> T {
        let v = self.observed_values(row);
        let mean = self.row_mean(row);
        let sq: Vec<T> = v.iter().map(|&x| (x - mean) * (x - mean)).collect();
        (ordered_sum(&sq) / T::of(v.len() as f64)).sqrt()
    }

    pub fn points(&self, mode: FeatureMode) -> Matrix<T> {
        match mode {
            FeatureMode::Profile => self.imputed.clone(),
            FeatureMode::Mean => {
                let means: Vec<T> = (0..self.layers.len()).map(|r| self.row_mean(r)).collect();
                Matrix::from_vec(means.len(), 1, means).expect("one column")
            }
        }
    }
}

pub fn build_feature_table<T: Scalar>(series: &[LayerSimilaritySeries<T>]) -> Result<LayerFeatureTable<T>, ClusterError> {
    if series.is_empty() {
        return arg("no similarity series to cluster");
    }
    let mut rows: BTreeMap<u32, Vec<Option<T>>> = BTreeMap::new();
    for (c, s) in series.iter().enumerate() {
        for (&l, &v) in &s.values {
            rows.entry(l).or_insert_with(|| vec![None; series.len()])[c] = Some(v);
        }
    }
    rows.retain(|_, r| r.iter().any(Option::is_some));
    let layers: Vec<u32> = rows.keys().copied().collect();
    let observed: Vec<Vec<Option<T>>> = rows.into_values().collect();
    let mut data = Vec::with_capacity(layers.len() * series.len());
    for row in &observed {
        let present: Vec<T> = row.iter().flatten().copied().collect();
        let mean = ordered_sum(&present) / T::of(present.len() as f64);
        data.extend(row.iter().map(|v| v.unwrap_or(mean)));
    }
    Ok(LayerFeatureTable {
        imputed: Matrix::from_vec(layers.len(), series.len(), data).expect("full rows"),
        layers,
        claim_ids: series.iter().map(|s| s.claim_id.clone()).collect(),
        observed,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    #[default]
    Profile,
    Mean,
}

impl FromStr for FeatureMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "profile" => Ok(FeatureMode::Profile),
            "mean" => Ok(FeatureMode::Mean),
            other => Err(format!("unknown feature mode {other:?} (profile or mean)")),
        }
    }
}

/// `k = max(1, ⌊q·n⌋)`, capped at `n − 1`.
pub fn neighbour_rank(quantile: f64, n: usize) -> usize {
    ((quantile * n as f64).floor() as usize).clamp(1, n.saturating_sub(1).max(1))
}

/// Mean over samples of the distance to their k-th nearest other sample.
pub fn estimate_bandwidth<T: Scalar>(points: &Matrix<T>, quantile: f64) -> Result<T, ClusterError> {
    let n = points.rows();
    if n < 2 {
        return arg(format!("bandwidth needs at least 2 samples, got {n}"));
    }
    if !(quantile > 0.0 && quantile <= 1.0) {
        return arg(format!("quantile {quantile} outside (0, 1]"));
    }
    check_finite(points)?;
    let k = neighbour_rank(quantile, n);
    let kth: Vec<T> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut d: Vec<T> = (0..n)
                .filter(|&j| j != i)
                .map(|j| euclidean(points.row(i), points.row(j)))
                .collect();
            d.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
            d[k - 1]
        })
        .collect();
    Ok(ordered_sum(&kth) / T::of(n as f64))
}

fn check_finite<T: Scalar>(points: &Matrix<T>) -> Result<(), ClusterError> {
    if points.as_slice().iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        arg("non-finite feature value")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanShiftParams {
    pub max_iter: usize,
    pub tol_factor: f64,
}

impl Default for MeanShiftParams {
    fn default() -> Self {
        Self {
            max_iter: DEFAULT_MAX_ITER,
            tol_factor: DEFAULT_TOL_FACTOR,
        }
    }
}

/// Point-level result. Cluster ids follow the order of each cluster's first
/// member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanShiftResult<T> {
    pub labels: Vec<usize>,
    pub centers: Vec<Vec<T>>,
    pub bandwidth: T,
}

impl<T: Scalar> MeanShiftResult<T> {
    pub fn cluster_count(&self) -> usize {
        self.centers.len()
    }
}

/// Flat-kernel mean shift seeded at every point. Modes within the bandwidth
/// of a better-supported mode are merged into it; points go to the nearest
/// surviving mode. A zero bandwidth puts every point in its own cluster.
pub fn mean_shift<T: Scalar>(
    points: &Matrix<T>,
    bandwidth: T,
    params: MeanShiftParams,
) -> Result<MeanShiftResult<T>, ClusterError> {
    check_finite(points)?;
    if !bandwidth.is_finite() || bandwidth < T::zero() {
        return arg(format!("bandwidth {bandwidth} must be finite and non-negative"));
    }
    let n = points.rows();
    if bandwidth == T::zero() {
        return Ok(MeanShiftResult {
            labels: (0..n).collect(),
            centers: points.iter_rows().map(<[T]>::to_vec).collect(),
            bandwidth,
        });
    }
    let tol = bandwidth * T::of(params.tol_factor);
    let modes: Vec<(Vec<T>, usize)> = (0..n)
        .into_par_iter()
        .map(|seed| shift_seed(points, points.row(seed).to_vec(), bandwidth, tol, params.max_iter))
        .collect();

    // Highest support first; equal support keeps seed order.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| modes[b].1.cmp(&modes[a].1));
    let mut kept: Vec<Vec<T>> = Vec::new();
    for i in order {
        let m = &modes[i].0;
        if kept.iter().all(|c| euclidean(c, m) > bandwidth) {
            kept.push(m.clone());
        }
    }

    let nearest: Vec<usize> = points
        .iter_rows()
        .map(|p| {
            let mut best = 0;
            let mut best_d = T::infinity();
            for (c, center) in kept.iter().enumerate() {
                let d = euclidean(p, center);
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            best
        })
        .collect();

    let mut relabel: BTreeMap<usize, usize> = BTreeMap::new();
    let mut centers = Vec::new();
    let labels = nearest
        .iter()
        .map(|&c| {
            *relabel.entry(c).or_insert_with(|| {
                centers.push(kept[c].clone());
                centers.len() - 1
            })
        })
        .collect();
    Ok(MeanShiftResult {
        labels,
        centers,
        bandwidth,
    })
}

fn shift_seed<T: Scalar>(points: &Matrix<T>, mut mean: Vec<T>, bandwidth: T, tol: T, max_iter: usize) -> (Vec<T>, usize) {
    let mut support = 0;
    for _ in 0..max_iter {
        let members: Vec<&[T]> = points
            .iter_rows()
            .filter(|p| euclidean(p, &mean) <= bandwidth)
            .collect();
        if members.is_empty() {
            break;
        }
        support = members.len();
        let inv = T::one() / T::of(support as f64);
        let mut next = vec![T::zero(); mean.len()];
        for p in &members {
            for (acc, &x) in next.iter_mut().zip(p.iter()) {
                *acc += x;
            }
        }
        next.iter_mut().for_each(|v| *v *= inv);
        let shift = euclidean(&next, &mean);
        mean = next;
        if shift <= tol {
            break;
        }
    }
    (mean, support)
}

/// Layer-level clustering result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment<T> {
    pub labels: BTreeMap<u32, usize>,
    pub centers: Vec<Vec<T>>,
    pub bandwidth: T,
    pub feature: FeatureMode,
}

impl<T: Scalar> ClusterAssignment<T> {
    pub fn cluster_count(&self) -> usize {
        self.centers.len()
    }
}

/// Bandwidth estimation and mean shift over the table's layers. A single
/// layer forms a single cluster.
pub fn cluster_layers<T: Scalar>(
    table: &LayerFeatureTable<T>,
    mode: FeatureMode,
    quantile: f64,
    params: MeanShiftParams,
) -> Result<ClusterAssignment<T>, ClusterError> {
    let points = table.points(mode);
    let result = match points.rows() {
        0 => return arg("feature table has no layers"),
        1 => MeanShiftResult {
            labels: vec![0],
            centers: vec![points.row(0).to_vec()],
            bandwidth: T::zero(),
        },
        _ => {
            let bw = estimate_bandwidth(&points, quantile)?;
            mean_shift(&points, bw, params)?
        }
    };
    Ok(ClusterAssignment {
        labels: table.layers.iter().copied().zip(result.labels).collect(),
        centers: result.centers,
        bandwidth: result.bandwidth,
        feature: mode,
    })
}

/// `layer,cluster_id,mean_similarity,std_similarity` over observed cells.
pub fn cluster_csv<T: Scalar>(table: &LayerFeatureTable<T>, assignment: &ClusterAssignment<T>) -> String {
    let mut out = String::from("layer,cluster_id,mean_similarity,std_similarity\n");
    for (r, l) in table.layers.iter().enumerate() {
        if let Some(c) = assignment.labels.get(l) {
            let _ = writeln!(
                out,
                "{l},{c},{},{}",
                table.row_mean(r).as_f64(),
                table.row_std(r).as_f64()
            );
        }
    }
    out
}
