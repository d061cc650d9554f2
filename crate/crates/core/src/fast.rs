//! FAST connectivity: the long-term |Pearson| filter, top-K% sparsification and
//! filtered instantaneous edge flows.

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{Epoch, ParticipantRecording, WindowSpec};

/// Symmetric connectivity filter with entries in `[0, 1]` and a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterMatrix {
    values: Array2<f64>,
}

impl FilterMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (r, c) = values.dim();
        if r != c || r < 2 {
            return Err(Error::Shape(format!("filter matrix must be square n×n with n ≥ 2, got {r}×{c}")));
        }
        for i in 0..r {
            if values[[i, i]] != 0.0 {
                return Err(Error::Validation(format!("filter diagonal ({i},{i}) is {}", values[[i, i]])));
            }
            for j in 0..r {
                let v = values[[i, j]];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Validation(format!("filter entry ({i},{j}) = {v} outside [0,1]")));
                }
                if v != values[[j, i]] {
                    return Err(Error::Validation(format!("filter not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(FilterMatrix { values })
    }

    pub fn n_nodes(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[[i, j]]
    }

    /// Upper-triangle entries in lexicographic `(i, j)` order.
    pub fn upper_triangle(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        let n = self.n_nodes();
        (0..n).flat_map(move |i| (i + 1..n).map(move |j| ((i, j), self.values[[i, j]])))
    }
}

/// The sparsification mask: retained edges `(i, j)`, `i < j`, in lexicographic order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEdgeSet")]
pub struct EdgeSet {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
    threshold_value: f64,
}

#[derive(Deserialize)]
struct RawEdgeSet {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
    threshold_value: f64,
}

impl TryFrom<RawEdgeSet> for EdgeSet {
    type Error = Error;

    fn try_from(raw: RawEdgeSet) -> Result<Self> {
        EdgeSet::new(raw.n_nodes, raw.edges, raw.threshold_value)
    }
}

impl EdgeSet {
    pub fn new(n_nodes: usize, edges: Vec<(usize, usize)>, threshold_value: f64) -> Result<Self> {
        for w in edges.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::Validation(format!(
                    "edges must be sorted and unique, found {:?} before {:?}",
                    w[0], w[1]
                )));
            }
        }
        if let Some(&(i, j)) = edges.iter().find(|&&(i, j)| i >= j || j >= n_nodes) {
            return Err(Error::Validation(format!(
                "edge ({i},{j}) invalid for {n_nodes} nodes (need i < j < n)"
            )));
        }
        Ok(EdgeSet {
            n_nodes,
            edges,
            threshold_value,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn threshold_value(&self) -> f64 {
        self.threshold_value
    }

    pub fn index_of(&self, i: usize, j: usize) -> Option<usize> {
        self.edges.binary_search(&(i, j)).ok()
    }

    /// Checks that every edge clears the threshold in `filter`.
    pub fn check_against(&self, filter: &FilterMatrix) -> Result<()> {
        if filter.n_nodes() != self.n_nodes {
            return Err(Error::Shape(format!(
                "mask has {} nodes but filter has {}",
                self.n_nodes,
                filter.n_nodes()
            )));
        }
        if let Some(&(i, j)) = self.edges.iter().find(|&&(i, j)| filter.get(i, j) < self.threshold_value) {
            return Err(Error::Validation(format!(
                "mask edge ({i},{j}) has filter value {} below threshold {}",
                filter.get(i, j),
                self.threshold_value
            )));
        }
        Ok(())
    }
}

/// Time × edge matrix of non-negative flows, columns in mask edge order.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeFlowSeries {
    values: Array2<f64>,
}

impl EdgeFlowSeries {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if let Some(((t, e), v)) = values.indexed_iter().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Validation(format!(
                "flow at step {t}, edge {e} is {v}; flows must be finite and non-negative"
            )));
        }
        Ok(EdgeFlowSeries { values })
    }

    pub fn n_steps(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_edges(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn row(&self, t: usize) -> ndarray::ArrayView1<'_, f64> {
        self.values.row(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeFunction {
    /// `C_ij · (x_i(t) − x_j(t))²`
    #[default]
    DirichletEnergy,
    /// `C_ij · |(x_i(t) − x̄_i)(x_j(t) − x̄_j)|`, means taken over the epoch
    InstantaneousCorrelation,
}

/// Per-participant |Pearson| matrix, averaged over the participant's epochs.
pub fn participant_correlation(recording: &ParticipantRecording) -> Result<FilterMatrix> {
    let n = recording.n_channels();
    let mut acc = Array2::<f64>::zeros((n, n));
    for (k, epoch) in recording.epochs.iter().enumerate() {
        acc += &epoch_abs_correlation(epoch, k)?;
    }
    acc /= recording.epochs.len() as f64;
    for i in 0..n {
        acc[[i, i]] = 0.0;
    }
    FilterMatrix::new(acc)
}

fn epoch_abs_correlation(epoch: &Epoch, epoch_index: usize) -> Result<Array2<f64>> {
    let centered = centered(epoch);
    let n = epoch.n_channels();
    let ss: Vec<f64> = centered.axis_iter(Axis(0)).map(|r| r.dot(&r)).collect();
    if let Some(c) = ss.iter().position(|&v| v == 0.0) {
        return Err(Error::DegenerateChannel {
            channel: c,
            epoch: epoch_index,
        });
    }
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let r = centered.row(i).dot(&centered.row(j)) / (ss[i] * ss[j]).sqrt();
            let v = r.abs().min(1.0);
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    Ok(out)
}

fn centered(epoch: &Epoch) -> Array2<f64> {
    let data = epoch.data();
    let means: Array1<f64> = data.mean_axis(Axis(1)).expect("epoch has samples");
    data - &means.insert_axis(Axis(1))
}

/// Elementwise mean of the per-participant matrices.
pub fn fast_filter(correlations: &[FilterMatrix]) -> Result<FilterMatrix> {
    let first = correlations
        .first()
        .ok_or_else(|| Error::InvalidParameter("fast_filter needs at least one matrix".into()))?;
    let mut acc = Array2::<f64>::zeros(first.values.raw_dim());
    for (k, m) in correlations.iter().enumerate() {
        if m.values.dim() != acc.dim() {
            return Err(Error::Shape(format!(
                "matrix {k} is {:?}, expected {:?}",
                m.values.dim(),
                acc.dim()
            )));
        }
        acc += &m.values;
    }
    acc /= correlations.len() as f64;
    // keep exact symmetry and range under rounding
    let n = acc.nrows();
    for i in 0..n {
        acc[[i, i]] = 0.0;
        for j in i + 1..n {
            let v = acc[[i, j]].clamp(0.0, 1.0);
            acc[[i, j]] = v;
            acc[[j, i]] = v;
        }
    }
    FilterMatrix::new(acc)
}

/// Number of pairs retained by `top_percent` out of `n_pairs`.
pub fn retained_count(n_pairs: usize, top_percent: f64) -> usize {
    let raw = n_pairs as f64 * top_percent / 100.0;
    // absorb representation error such as 0.07 * 100 = 7.000000000000001
    let k = (raw - 1e-9 * raw.max(1.0)).ceil() as usize;
    k.clamp(1, n_pairs)
}

/// Keeps the `ceil(m · K / 100)` strongest upper-triangle entries.
///
/// Ties are broken by lexicographic `(i, j)` so exactly that many edges survive.
pub fn percentile_mask(filter: &FilterMatrix, top_percent: f64) -> Result<EdgeSet> {
    if !(top_percent > 0.0 && top_percent <= 100.0) {
        return Err(Error::InvalidParameter(format!(
            "top_percent must be in (0, 100], got {top_percent}"
        )));
    }
    let mut pairs: Vec<((usize, usize), f64)> = filter.upper_triangle().collect();
    let k = retained_count(pairs.len(), top_percent);
    pairs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    pairs.truncate(k);
    let threshold = pairs.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let mut edges: Vec<(usize, usize)> = pairs.into_iter().map(|p| p.0).collect();
    edges.sort_unstable();
    EdgeSet::new(filter.n_nodes(), edges, threshold)
}

/// Filtered instantaneous flows, one row per sample and one column per mask edge.
pub fn masked_flow_series(
    epoch: &Epoch,
    filter: &FilterMatrix,
    mask: &EdgeSet,
    function: NodeFunction,
) -> Result<EdgeFlowSeries> {
    if epoch.n_channels() != filter.n_nodes() || mask.n_nodes() != filter.n_nodes() {
        return Err(Error::Shape(format!(
            "epoch has {} channels, filter {} nodes, mask {} nodes",
            epoch.n_channels(),
            filter.n_nodes(),
            mask.n_nodes()
        )));
    }
    let signal = match function {
        NodeFunction::DirichletEnergy => epoch.data().clone(),
        NodeFunction::InstantaneousCorrelation => centered(epoch),
    };
    let mut out = Array2::zeros((epoch.n_samples(), mask.n_edges()));
    for (e, &(i, j)) in mask.edges().iter().enumerate() {
        let c = filter.get(i, j);
        let (xi, xj) = (signal.row(i), signal.row(j));
        let mut col = out.column_mut(e);
        match function {
            NodeFunction::DirichletEnergy => {
                for (o, (a, b)) in col.iter_mut().zip(xi.iter().zip(xj.iter())) {
                    let d = a - b;
                    *o = c * d * d;
                }
            }
            NodeFunction::InstantaneousCorrelation => {
                for (o, (a, b)) in col.iter_mut().zip(xi.iter().zip(xj.iter())) {
                    *o = c * (a * b).abs();
                }
            }
        }
    }
    Ok(EdgeFlowSeries { values: out })
}

/// Mean of the rows inside each window.
pub fn window_average(series: &EdgeFlowSeries, windows: &WindowSpec) -> Result<EdgeFlowSeries> {
    let mut out = Array2::zeros((windows.n_windows(), series.n_edges()));
    for (k, b) in windows.bounds().iter().enumerate() {
        if b.is_empty() {
            return Err(Error::InvalidParameter(format!("window {k} is empty")));
        }
        if b.end > series.n_steps() {
            return Err(Error::Shape(format!(
                "window {k} ends at {} but the series has {} steps",
                b.end,
                series.n_steps()
            )));
        }
        let mean = series
            .values
            .slice(ndarray::s![b.clone(), ..])
            .mean_axis(Axis(0))
            .expect("non-empty window");
        out.row_mut(k).assign(&mean);
    }
    Ok(EdgeFlowSeries { values: out })
}

/// Where trials are averaged relative to windowing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpochAverageOrder {
    /// Average per-sample flows over epochs, then window.
    BeforeWindowing,
    /// Window each epoch, then average the windowed flows.
    #[default]
    AfterWindowing,
    /// Decompose and summarise each epoch, then average the summaries.
    AfterSummary,
}

/// One participant's windowed flows averaged over their epochs.
pub fn participant_flow(
    recording: &ParticipantRecording,
    filter: &FilterMatrix,
    mask: &EdgeSet,
    function: NodeFunction,
    windows: &WindowSpec,
    order: EpochAverageOrder,
) -> Result<EdgeFlowSeries> {
    let n_epochs = recording.epochs.len() as f64;
    match order {
        EpochAverageOrder::BeforeWindowing => {
            let mut acc = Array2::zeros((recording.n_samples(), mask.n_edges()));
            for epoch in &recording.epochs {
                acc += &masked_flow_series(epoch, filter, mask, function)?.values;
            }
            acc /= n_epochs;
            window_average(&EdgeFlowSeries { values: acc }, windows)
        }
        EpochAverageOrder::AfterWindowing | EpochAverageOrder::AfterSummary => {
            let mut acc = Array2::zeros((windows.n_windows(), mask.n_edges()));
            for epoch in &recording.epochs {
                let flows = masked_flow_series(epoch, filter, mask, function)?;
                acc += &window_average(&flows, windows)?.values;
            }
            acc /= n_epochs;
            Ok(EdgeFlowSeries { values: acc })
        }
    }
}

/// Windowed flows per participant, epoch-averaged after windowing.
pub fn per_epoch_flow(
    recordings: &[ParticipantRecording],
    filter: &FilterMatrix,
    mask: &EdgeSet,
    function: NodeFunction,
    windows: &WindowSpec,
) -> Result<Vec<EdgeFlowSeries>> {
    recordings
        .par_iter()
        .map(|r| participant_flow(r, filter, mask, function, windows, EpochAverageOrder::AfterWindowing))
        .collect()
}
