//! Hodge decomposition of edge flows into gradient, curl and harmonic parts.
//!
//! The gradient part is `B1ᵀ s` with `s` the minimum-norm solution of
//! `Δ0 s = B1 f`; the curl part is `B2 φ` with `φ` the minimum-norm solution of
//! `Δ2 φ = B2ᵀ f`; the harmonic part is what remains. Both systems are solved
//! with Jacobi-preconditioned conjugate gradients.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fast::EdgeFlowSeries;
use crate::simplicial::{boundary_b1, boundary_b2, hodge_laplacian, BoundaryMatrix, CliqueComplex, HodgeLaplacian};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Relative residual at which CG stops. The residual `‖b − A x‖` is measured
    /// against the larger of `‖b‖` and `‖B‖·‖f‖`, where `B` maps the flow `f` to
    /// the right-hand side; a component that is zero up to rounding then counts
    /// as converged instead of chasing noise.
    pub tolerance: f64,
    /// Iteration cap; `None` means ten times the system size.
    pub max_iterations: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: 1e-10,
            max_iterations: None,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "solver tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == Some(0) {
            return Err(Error::InvalidParameter("max_iterations must be positive".into()));
        }
        Ok(())
    }

    fn iteration_cap(&self, dim: usize) -> usize {
        self.max_iterations.unwrap_or(10 * dim.max(1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HodgeComponents {
    pub gradient: Vec<f64>,
    pub curl: Vec<f64>,
    pub harmonic: Vec<f64>,
    /// Node potential `s` with `gradient = B1ᵀ s`.
    pub node_potential: Vec<f64>,
    /// Triangle potential `φ` with `curl = B2 φ`.
    pub triangle_potential: Vec<f64>,
}

impl HodgeComponents {
    pub fn component(&self, kind: ComponentKind) -> &[f64] {
        match kind {
            ComponentKind::Gradient => &self.gradient,
            ComponentKind::Curl => &self.curl,
            ComponentKind::Harmonic => &self.harmonic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ComponentKind {
    Gradient,
    Curl,
    Harmonic,
}

impl ComponentKind {
    pub const ALL: [ComponentKind; 3] = [ComponentKind::Gradient, ComponentKind::Curl, ComponentKind::Harmonic];

    pub fn as_str(self) -> &'static str {
        match self {
            ComponentKind::Gradient => "Gradient",
            ComponentKind::Curl => "Curl",
            ComponentKind::Harmonic => "Harmonic",
        }
    }

    pub fn parse(s: &str) -> Option<ComponentKind> {
        ComponentKind::ALL.into_iter().find(|k| k.as_str().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for ComponentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryMode {
    #[default]
    SignedMean,
    L2Norm,
}

/// Collapses one component to a scalar: the signed mean of its edge values or
/// its Euclidean norm divided by `sqrt(n_edges)`.
pub fn component_summary(components: &HodgeComponents, kind: ComponentKind, mode: SummaryMode) -> f64 {
    let v = components.component(kind);
    if v.is_empty() {
        return 0.0;
    }
    let n = v.len() as f64;
    match mode {
        SummaryMode::SignedMean => v.iter().sum::<f64>() / n,
        SummaryMode::L2Norm => v.iter().map(|x| x * x).sum::<f64>().sqrt() / n.sqrt(),
    }
}

/// Operators for one complex, built once and reused for every flow.
#[derive(Debug, Clone)]
pub struct HodgeSolver {
    b1: BoundaryMatrix,
    b2: BoundaryMatrix,
    lap0: HodgeLaplacian,
    lap2: HodgeLaplacian,
    inv_diag0: Vec<f64>,
    inv_diag2: Vec<f64>,
    /// Lower bounds on `‖B1‖` and `‖B2‖`: square roots of the largest Laplacian diagonal.
    b1_norm: f64,
    b2_norm: f64,
    components: Vec<usize>,
    n_components: usize,
    options: SolverOptions,
}

impl HodgeSolver {
    pub fn new(complex: &CliqueComplex, options: SolverOptions) -> Result<Self> {
        options.validate()?;
        let lap0 = hodge_laplacian(complex, 0)?;
        let lap2 = hodge_laplacian(complex, 2)?;
        let inv = |d: &[f64]| d.iter().map(|&v| if v > 0.0 { 1.0 / v } else { 1.0 }).collect();
        let norm = |d: &[f64]| d.iter().fold(0.0f64, |m, &v| m.max(v)).sqrt();
        let (diag0, diag2) = (lap0.diagonal(), lap2.diagonal());
        let components = complex.component_labels();
        let n_components = components.iter().max().map_or(0, |m| m + 1);
        Ok(HodgeSolver {
            b1: boundary_b1(complex),
            b2: boundary_b2(complex),
            inv_diag0: inv(&diag0),
            inv_diag2: inv(&diag2),
            b1_norm: norm(&diag0),
            b2_norm: norm(&diag2),
            lap0,
            lap2,
            components,
            n_components,
            options,
        })
    }

    pub fn n_edges(&self) -> usize {
        self.b1.n_cols()
    }

    pub fn b1(&self) -> &BoundaryMatrix {
        &self.b1
    }

    pub fn b2(&self) -> &BoundaryMatrix {
        &self.b2
    }

    pub fn decompose(&self, flow: &[f64]) -> Result<HodgeComponents> {
        if flow.len() != self.n_edges() {
            return Err(Error::Shape(format!(
                "flow has {} entries but the complex has {} edges",
                flow.len(),
                self.n_edges()
            )));
        }
        if let Some(k) = flow.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("flow entry {k} is not finite")));
        }

        let flow_norm = dot(flow, flow).sqrt();
        let mut div = self.b1.apply(flow);
        self.remove_component_means(&mut div);
        let mut s = pcg(&self.lap0, &self.inv_diag0, &div, self.b1_norm * flow_norm, &self.options)?;
        self.remove_component_means(&mut s);
        let gradient = self.b1.apply_transpose(&s);

        let (phi, curl) = if self.b2.n_cols() == 0 {
            (Vec::new(), vec![0.0; flow.len()])
        } else {
            let rot = self.b2.apply_transpose(flow);
            let phi = pcg(&self.lap2, &self.inv_diag2, &rot, self.b2_norm * flow_norm, &self.options)?;
            let curl = self.b2.apply(&phi);
            (phi, curl)
        };

        let harmonic = flow
            .iter()
            .zip(gradient.iter().zip(&curl))
            .map(|(f, (g, c))| f - g - c)
            .collect();
        Ok(HodgeComponents {
            gradient,
            curl,
            harmonic,
            node_potential: s,
            triangle_potential: phi,
        })
    }

    /// Projects out ker Δ0 (constants on each connected component).
    fn remove_component_means(&self, v: &mut [f64]) {
        let mut sum = vec![0.0; self.n_components];
        let mut count = vec![0usize; self.n_components];
        for (x, &c) in v.iter().zip(&self.components) {
            sum[c] += x;
            count[c] += 1;
        }
        for (x, &c) in v.iter_mut().zip(&self.components) {
            *x -= sum[c] / count[c] as f64;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned CG from a zero start for a consistent PSD system.
/// `scale` is the largest right-hand side the source flow could have produced.
fn pcg(a: &HodgeLaplacian, inv_diag: &[f64], b: &[f64], scale: f64, opts: &SolverOptions) -> Result<Vec<f64>> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        return Ok(x);
    }
    let reference = b_norm.max(scale);
    let target = opts.tolerance * reference;
    let cap = opts.iteration_cap(n);

    let mut r = b.to_vec();
    let mut ap = vec![0.0; n];
    let mut iterations = 0;
    loop {
        let mut z: Vec<f64> = r.iter().zip(inv_diag).map(|(ri, d)| ri * d).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        while iterations < cap {
            a.apply_into(&p, &mut ap);
            let pap = dot(&p, &ap);
            if pap <= 0.0 {
                // search direction fell into the kernel; no further progress possible
                iterations = cap;
                break;
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            iterations += 1;
            if dot(&r, &r).sqrt() <= target {
                break;
            }
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        // the recurrence drifts from the true residual; confirm before returning
        a.apply_into(&x, &mut ap);
        for i in 0..n {
            r[i] = b[i] - ap[i];
        }
        let true_norm = dot(&r, &r).sqrt();
        if true_norm <= target {
            return Ok(x);
        }
        if iterations >= cap {
            return Err(Error::SolverFailure {
                iterations,
                residual: true_norm / reference,
            });
        }
    }
}

/// Decomposes a single flow over `complex`.
pub fn decompose_flow(flow: &[f64], complex: &CliqueComplex, opts: SolverOptions) -> Result<HodgeComponents> {
    HodgeSolver::new(complex, opts)?.decompose(flow)
}

/// Decomposes every row of `series`, sharing the operators across rows.
pub fn decompose_series(
    series: &EdgeFlowSeries,
    complex: &CliqueComplex,
    opts: SolverOptions,
) -> Result<Vec<HodgeComponents>> {
    if series.n_edges() != complex.n_edges() {
        return Err(Error::Shape(format!(
            "series has {} edges but the complex has {}",
            series.n_edges(),
            complex.n_edges()
        )));
    }
    let solver = HodgeSolver::new(complex, opts)?;
    (0..series.n_steps())
        .map(|w| {
            let row: Vec<f64> = series.row(w).to_vec();
            solver.decompose(&row).map_err(|e| Error::Window {
                window: w,
                source: Box::new(e),
            })
        })
        .collect()
}
