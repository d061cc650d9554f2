#![allow(dead_code)]

use std::path::{Path, PathBuf};

use hodgefast::fast::{percentile_mask, EdgeSet, FilterMatrix};
use hodgefast::hodge::HodgeComponents;
use hodgefast::pipeline::{analyze, Analysis, PipelineConfig};
use hodgefast::signal::validate_cohort;
use hodgefast::simplicial::{boundary_b1, boundary_b2, BoundaryMatrix, CliqueComplex};
use hodgefast::synth::{generate_cohort, SynthConfig};
use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::Rng;

pub fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn synth_config(name: &str) -> SynthConfig {
    let text = std::fs::read_to_string(configs_dir().join(name)).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// The shipped analysis settings; paths inside are irrelevant for in-memory runs.
pub fn pipeline_config() -> PipelineConfig {
    PipelineConfig::load(&configs_dir().join("pipeline.json")).unwrap()
}

pub fn analyze_synth(synth: &SynthConfig) -> Analysis {
    let cohort = validate_cohort(generate_cohort(synth).unwrap()).unwrap();
    analyze(&pipeline_config(), &cohort).unwrap()
}

/// Random symmetric filter in [0, 1]; geometric filters cluster strong pairs so masks hold triangles.
pub fn random_filter(rng: &mut impl Rng, n: usize, geometric: bool) -> FilterMatrix {
    let points: Vec<(f64, f64)> = (0..n).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
    let mut m = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let v = if geometric {
                let d = (points[i].0 - points[j].0).hypot(points[i].1 - points[j].1);
                (-4.0 * d).exp() * (0.9 + 0.1 * rng.random::<f64>())
            } else {
                rng.random::<f64>()
            };
            m[[i, j]] = v;
            m[[j, i]] = v;
        }
    }
    FilterMatrix::new(m).unwrap()
}

pub fn random_mask(rng: &mut impl Rng, n: usize, top_percent: f64, geometric: bool) -> EdgeSet {
    percentile_mask(&random_filter(rng, n, geometric), top_percent).unwrap()
}

/// Erdős–Rényi graph with edge probability `p`.
pub fn random_graph(rng: &mut impl Rng, n: usize, p: f64) -> EdgeSet {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    EdgeSet::new(n, edges, 0.0).unwrap()
}

pub fn random_flow(rng: &mut impl Rng, m: usize) -> Vec<f64> {
    (0..m).map(|_| rng.random_range(-3.0..3.0)).collect()
}

pub fn dense(b: &BoundaryMatrix) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(b.n_rows(), b.n_cols());
    for (r, c, s) in b.triplets() {
        d[(r, c)] = f64::from(s);
    }
    d
}

/// Orthogonal projections `A A⁺ f` onto the column spaces of `B1ᵀ` (gradient)
/// and `B2` (curl); the harmonic part is the remainder.
///
/// The projector is `Σ v vᵀ` over eigenvectors of `A Aᵀ` with nonzero
/// eigenvalue, which spans the same space as `A` and is exactly `A A⁺`.
pub fn oracle_components(complex: &CliqueComplex, f: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let b1 = dense(&boundary_b1(complex));
    let b2 = dense(&boundary_b2(complex));
    let f = DVector::from_column_slice(f);
    let project = |a: DMatrix<f64>| -> DVector<f64> {
        if a.ncols() == 0 || a.nrows() == 0 {
            return DVector::zeros(f.len());
        }
        let eig = (&a * a.transpose()).symmetric_eigen();
        let tol = 1e-9 * eig.eigenvalues.amax().max(1.0);
        let mut out = DVector::zeros(f.len());
        for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
            if lambda > tol {
                let v = eig.eigenvectors.column(k);
                out += v * v.dot(&f);
            }
        }
        out
    };
    let g = project(b1.transpose());
    let c = project(b2);
    let h = &f - &g - &c;
    (g.as_slice().to_vec(), c.as_slice().to_vec(), h.as_slice().to_vec())
}

/// Numerical rank, counted as the nonzero eigenvalues of `M Mᵀ`.
pub fn dense_rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let eig = (m * m.transpose()).symmetric_eigen();
    let tol = 1e-9 * eig.eigenvalues.amax().max(1.0);
    eig.eigenvalues.iter().filter(|&&l| l > tol).count()
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn reconstruction_error(f: &[f64], c: &HodgeComponents) -> f64 {
    (0..f.len())
        .map(|e| (c.gradient[e] + c.curl[e] + c.harmonic[e] - f[e]).abs())
        .fold(0.0, f64::max)
}
