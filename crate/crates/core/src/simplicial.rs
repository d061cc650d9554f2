//! Clique complex of the mask graph, signed boundary operators and Hodge Laplacians.
//!
//! Every simplex is oriented by ascending node index. With that convention
//! `B1` maps edge `(i, j)` to `v_j − v_i` and `B2` maps triangle `(i, j, k)` to
//! `(i,j) − (i,k) + (j,k)`, so `B1 · B2 = 0` holds exactly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fast::EdgeSet;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawComplex")]
pub struct CliqueComplex {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
    triangles: Vec<(usize, usize, usize)>,
}

#[derive(Deserialize)]
struct RawComplex {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
    triangles: Vec<(usize, usize, usize)>,
}

impl TryFrom<RawComplex> for CliqueComplex {
    type Error = Error;

    fn try_from(raw: RawComplex) -> Result<Self> {
        CliqueComplex::new(raw.n_nodes, raw.edges, raw.triangles)
    }
}

impl CliqueComplex {
    /// Builds a complex from explicit simplices, checking closure under faces.
    pub fn new(
        n_nodes: usize,
        edges: Vec<(usize, usize)>,
        triangles: Vec<(usize, usize, usize)>,
    ) -> Result<Self> {
        // reuse EdgeSet's ordering and range checks
        let edges = EdgeSet::new(n_nodes, edges, 0.0)?.edges().to_vec();
        for w in triangles.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::Validation(format!(
                    "triangles must be sorted and unique, found {:?} before {:?}",
                    w[0], w[1]
                )));
            }
        }
        for &(i, j, k) in &triangles {
            if !(i < j && j < k) {
                return Err(Error::Validation(format!("triangle ({i},{j},{k}) is not ascending")));
            }
            for face in [(i, j), (i, k), (j, k)] {
                if edges.binary_search(&face).is_err() {
                    return Err(Error::Validation(format!(
                        "triangle ({i},{j},{k}) is missing edge {face:?}"
                    )));
                }
            }
        }
        Ok(CliqueComplex {
            n_nodes,
            edges,
            triangles,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn triangles(&self) -> &[(usize, usize, usize)] {
        &self.triangles
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn edge_index(&self, i: usize, j: usize) -> Option<usize> {
        self.edges.binary_search(&(i, j)).ok()
    }

    /// Connected components of the 1-skeleton, as a component label per node.
    pub fn component_labels(&self) -> Vec<usize> {
        let mut parent: Vec<usize> = (0..self.n_nodes).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for &(i, j) in &self.edges {
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        let mut labels = vec![usize::MAX; self.n_nodes];
        let mut next = 0;
        for v in 0..self.n_nodes {
            let root = find(&mut parent, v);
            if labels[root] == usize::MAX {
                labels[root] = next;
                next += 1;
            }
            labels[v] = labels[root];
        }
        labels
    }

    pub fn n_components(&self) -> usize {
        self.component_labels().into_iter().max().map_or(0, |m| m + 1)
    }

    /// First Betti number: `|E| − rank B1 − rank B2`.
    pub fn betti_1(&self) -> usize {
        let rank_b1 = self.n_nodes - self.n_components();
        let rank_b2 = boundary_b2(self).rank();
        self.n_edges() - rank_b1 - rank_b2
    }
}

/// Triangles are all 3-cliques of the mask graph, found by intersecting
/// sorted forward-adjacency lists.
pub fn build_clique_complex(mask: &EdgeSet) -> CliqueComplex {
    let n = mask.n_nodes();
    let mut forward: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(i, j) in mask.edges() {
        forward[i].push(j);
    }
    let mut triangles = Vec::new();
    for i in 0..n {
        let fi = &forward[i];
        for (a, &j) in fi.iter().enumerate() {
            let (mut p, mut q) = (a + 1, 0);
            let fj = &forward[j];
            while p < fi.len() && q < fj.len() {
                match fi[p].cmp(&fj[q]) {
                    std::cmp::Ordering::Less => p += 1,
                    std::cmp::Ordering::Greater => q += 1,
                    std::cmp::Ordering::Equal => {
                        triangles.push((i, j, fi[p]));
                        p += 1;
                        q += 1;
                    }
                }
            }
        }
    }
    CliqueComplex {
        n_nodes: n,
        edges: mask.edges().to_vec(),
        triangles,
    }
}

/// Sparse signed incidence matrix in compressed-column form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryMatrix {
    dim: usize,
    n_rows: usize,
    n_cols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    signs: Vec<i8>,
}

impl BoundaryMatrix {
    fn from_columns(dim: usize, n_rows: usize, columns: impl Iterator<Item = Vec<(usize, i8)>>) -> Self {
        let mut col_ptr = vec![0];
        let mut row_idx = Vec::new();
        let mut signs = Vec::new();
        for mut col in columns {
            col.sort_unstable_by_key(|e| e.0);
            for (r, s) in col {
                row_idx.push(r);
                signs.push(s);
            }
            col_ptr.push(row_idx.len());
        }
        BoundaryMatrix {
            dim,
            n_rows,
            n_cols: col_ptr.len() - 1,
            col_ptr,
            row_idx,
            signs,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    /// Nonzeros of column `c` as `(row, sign)`, rows ascending.
    pub fn column(&self, c: usize) -> impl Iterator<Item = (usize, i8)> + '_ {
        let r = self.col_ptr[c]..self.col_ptr[c + 1];
        self.row_idx[r.clone()].iter().copied().zip(self.signs[r].iter().copied())
    }

    /// `(row, col, sign)` triplets in column-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, i8)> + '_ {
        (0..self.n_cols).flat_map(move |c| self.column(c).map(move |(r, s)| (r, c, s)))
    }

    /// `B · x`
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_cols, "apply: length mismatch");
        let mut y = vec![0.0; self.n_rows];
        for (c, &xc) in x.iter().enumerate() {
            for (r, s) in self.column(c) {
                y[r] += f64::from(s) * xc;
            }
        }
        y
    }

    /// `Bᵀ · y`
    pub fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.n_rows, "apply_transpose: length mismatch");
        (0..self.n_cols)
            .map(|c| self.column(c).map(|(r, s)| f64::from(s) * y[r]).sum())
            .collect()
    }

    pub fn transpose(&self) -> BoundaryMatrix {
        let mut cols: Vec<Vec<(usize, i8)>> = vec![Vec::new(); self.n_rows];
        for (r, c, s) in self.triplets() {
            cols[r].push((c, s));
        }
        BoundaryMatrix::from_columns(self.dim, self.n_cols, cols.into_iter())
    }

    /// Exact integer product `self · rhs`, nonzero entries only.
    pub fn compose(&self, rhs: &BoundaryMatrix) -> Vec<(usize, usize, i64)> {
        assert_eq!(self.n_cols, rhs.n_rows, "compose: inner dimension mismatch");
        let mut out = Vec::new();
        for c in 0..rhs.n_cols {
            let mut acc: BTreeMap<usize, i64> = BTreeMap::new();
            for (k, s) in rhs.column(c) {
                for (r, t) in self.column(k) {
                    *acc.entry(r).or_default() += i64::from(s) * i64::from(t);
                }
            }
            out.extend(acc.into_iter().filter(|e| e.1 != 0).map(|(r, v)| (r, c, v)));
        }
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<i64>> {
        let mut m = vec![vec![0i64; self.n_cols]; self.n_rows];
        for (r, c, s) in self.triplets() {
            m[r][c] = i64::from(s);
        }
        m
    }

    /// Rank over the rationals, computed exactly modulo the prime 2⁶¹ − 1.
    pub fn rank(&self) -> usize {
        const P: u64 = (1 << 61) - 1;
        let mulmod = |a: u64, b: u64| ((a as u128 * b as u128) % P as u128) as u64;
        let powmod = |mut b: u64, mut e: u64| {
            let mut r = 1u64;
            while e > 0 {
                if e & 1 == 1 {
                    r = mulmod(r, b);
                }
                b = mulmod(b, b);
                e >>= 1;
            }
            r
        };
        // eliminate column vectors (the smaller side is fine either way)
        let mut rows: Vec<Vec<u64>> = (0..self.n_cols)
            .map(|c| {
                let mut v = vec![0u64; self.n_rows];
                for (r, s) in self.column(c) {
                    v[r] = if s > 0 { 1 } else { P - 1 };
                }
                v
            })
            .collect();
        let mut rank = 0;
        for col in 0..self.n_rows {
            let Some(pivot) = (rank..rows.len()).find(|&r| rows[r][col] != 0) else {
                continue;
            };
            rows.swap(rank, pivot);
            let inv = powmod(rows[rank][col], P - 2);
            let pivot_row = rows[rank].clone();
            for row in rows.iter_mut().skip(rank + 1) {
                if row[col] == 0 {
                    continue;
                }
                let f = mulmod(row[col], inv);
                for (x, &p) in row.iter_mut().zip(&pivot_row).skip(col) {
                    *x = (*x + P - mulmod(f, p)) % P;
                }
            }
            rank += 1;
            if rank == rows.len() {
                break;
            }
        }
        rank
    }
}

/// Node × edge incidence: column `(i, j)` has −1 at row `i` and +1 at row `j`.
pub fn boundary_b1(complex: &CliqueComplex) -> BoundaryMatrix {
    BoundaryMatrix::from_columns(
        1,
        complex.n_nodes,
        complex.edges.iter().map(|&(i, j)| vec![(i, -1), (j, 1)]),
    )
}

/// Edge × triangle incidence: column `(i, j, k)` is `+(i,j) − (i,k) + (j,k)`.
pub fn boundary_b2(complex: &CliqueComplex) -> BoundaryMatrix {
    let idx = |a, b| complex.edge_index(a, b).expect("complex is closed under faces");
    BoundaryMatrix::from_columns(
        2,
        complex.n_edges(),
        complex
            .triangles
            .iter()
            .map(|&(i, j, k)| vec![(idx(i, j), 1), (idx(i, k), -1), (idx(j, k), 1)]),
    )
}

/// Sparse symmetric matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct HodgeLaplacian {
    order: usize,
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl HodgeLaplacian {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.apply_into(x, &mut y);
        y
    }

    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n, "apply: length mismatch");
        for (i, yi) in y.iter_mut().enumerate() {
            let r = self.row_ptr[i]..self.row_ptr[i + 1];
            *yi = self.col_idx[r.clone()]
                .iter()
                .zip(&self.values[r])
                .map(|(&c, v)| v * x[c])
                .sum();
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| (0..self.n).map(|j| self.get(i, j)).collect()).collect()
    }
}

/// Sum of `v vᵀ` over the columns `v` of `groups`.
fn gram(groups: &BoundaryMatrix, acc: &mut [BTreeMap<usize, i64>]) {
    for c in 0..groups.n_cols() {
        let col: Vec<(usize, i8)> = groups.column(c).collect();
        for &(r, s) in &col {
            for &(q, t) in &col {
                *acc[r].entry(q).or_default() += i64::from(s) * i64::from(t);
            }
        }
    }
}

fn laplacian_from_rows(order: usize, rows: Vec<BTreeMap<usize, i64>>) -> HodgeLaplacian {
    let n = rows.len();
    let mut row_ptr = vec![0];
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    for row in rows {
        for (c, v) in row.into_iter().filter(|e| e.1 != 0) {
            col_idx.push(c);
            values.push(v as f64);
        }
        row_ptr.push(col_idx.len());
    }
    HodgeLaplacian {
        order,
        n,
        row_ptr,
        col_idx,
        values,
    }
}

/// `Δ0 = B1 B1ᵀ`, `Δ1 = B1ᵀ B1 + B2 B2ᵀ`, `Δ2 = B2ᵀ B2`.
pub fn hodge_laplacian(complex: &CliqueComplex, p: usize) -> Result<HodgeLaplacian> {
    let b1 = boundary_b1(complex);
    let b2 = boundary_b2(complex);
    let rows = match p {
        0 => {
            let mut acc = vec![BTreeMap::new(); complex.n_nodes()];
            gram(&b1, &mut acc);
            acc
        }
        1 => {
            let mut acc = vec![BTreeMap::new(); complex.n_edges()];
            gram(&b1.transpose(), &mut acc);
            gram(&b2, &mut acc);
            acc
        }
        2 => {
            let mut acc = vec![BTreeMap::new(); complex.n_triangles()];
            gram(&b2.transpose(), &mut acc);
            acc
        }
        _ => {
            return Err(Error::InvalidParameter(format!(
                "Hodge Laplacian order must be 0, 1 or 2, got {p}"
            )))
        }
    };
    Ok(laplacian_from_rows(p, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn complex(n: usize, edges: &[(usize, usize)]) -> CliqueComplex {
        build_clique_complex(&EdgeSet::new(n, edges.to_vec(), 0.0).unwrap())
    }

    fn k3() -> CliqueComplex {
        complex(3, &[(0, 1), (0, 2), (1, 2)])
    }

    #[test]
    fn triangle_enumeration_examples() {
        let c = complex(4, &[(0, 1), (0, 2), (1, 2), (2, 3)]);
        assert_eq!(c.triangles(), &[(0, 1, 2)]);
        assert!(complex(5, &[]).triangles().is_empty());
        let k4 = complex(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
        assert_eq!(k4.triangles(), &[(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)]);
    }

    #[test]
    fn b1_of_k3() {
        let b1 = boundary_b1(&k3());
        assert_eq!(b1.to_dense(), vec![vec![-1, -1, 0], vec![1, 0, -1], vec![0, 1, 1]]);
        let single = boundary_b1(&complex(2, &[(0, 1)]));
        assert_eq!(single.to_dense(), vec![vec![-1], vec![1]]);
        for c in 0..b1.n_cols() {
            assert_eq!(b1.column(c).map(|(_, s)| i64::from(s)).sum::<i64>(), 0);
        }
    }

    #[test]
    fn b2_of_k3() {
        let c = k3();
        let b2 = boundary_b2(&c);
        assert_eq!(b2.to_dense(), vec![vec![1], vec![-1], vec![1]]);
        assert!(boundary_b1(&c).compose(&b2).is_empty());
        let tree = complex(4, &[(0, 1), (1, 2), (2, 3)]);
        assert_eq!(boundary_b2(&tree).n_cols(), 0);
    }

    #[test]
    fn laplacians_of_k3() {
        let c = k3();
        let l0 = hodge_laplacian(&c, 0).unwrap().to_dense();
        let expected = vec![vec![2.0, -1.0, -1.0], vec![-1.0, 2.0, -1.0], vec![-1.0, -1.0, 2.0]];
        assert_eq!(l0, expected);
        assert_eq!(hodge_laplacian(&c, 2).unwrap().to_dense(), vec![vec![3.0]]);
        // every pair of K3 edges shares a node; the B2 term cancels off-diagonals
        let l1 = hodge_laplacian(&c, 1).unwrap().to_dense();
        assert_eq!(l1, vec![vec![3.0, 0.0, 0.0], vec![0.0, 3.0, 0.0], vec![0.0, 0.0, 3.0]]);
        assert!(hodge_laplacian(&c, 3).is_err());
    }

    #[test]
    fn l1_without_triangles_is_lower_part() {
        let c = complex(4, &[(0, 1), (0, 3), (1, 2), (2, 3)]);
        let l1 = hodge_laplacian(&c, 1).unwrap().to_dense();
        let b1 = boundary_b1(&c).to_dense();
        for a in 0..4 {
            for b in 0..4 {
                let v: i64 = (0..4).map(|r| b1[r][a] * b1[r][b]).sum();
                assert_eq!(l1[a][b], v as f64);
            }
        }
    }

    #[test]
    fn betti_numbers() {
        assert_eq!(k3().betti_1(), 0);
        assert_eq!(complex(4, &[(0, 1), (0, 3), (1, 2), (2, 3)]).betti_1(), 1);
        // K4's four triangles are dependent: rank B2 = 3, so β1 = 6 − 3 − 3 = 0
        let k4 = complex(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
        assert_eq!(boundary_b2(&k4).rank(), 3);
        assert_eq!(k4.betti_1(), 0);
        assert_eq!(complex(6, &[(0, 1), (2, 3)]).n_components(), 4);
    }

    #[test]
    fn complex_new_checks_faces() {
        assert!(CliqueComplex::new(3, vec![(0, 1), (1, 2)], vec![(0, 1, 2)]).is_err());
        assert!(CliqueComplex::new(3, vec![(0, 1), (0, 2), (1, 2)], vec![(0, 1, 2)]).is_ok());
        let json = serde_json::to_string(&k3()).unwrap();
        assert_eq!(serde_json::from_str::<CliqueComplex>(&json).unwrap(), k3());
    }

    #[test]
    fn transpose_round_trip() {
        let c = complex(5, &[(0, 1), (0, 2), (1, 2), (1, 3), (2, 3), (3, 4)]);
        let b2 = boundary_b2(&c);
        assert_eq!(b2.transpose().transpose(), b2);
        let x = [0.5, -1.0];
        let y = [1.0, 2.0, -3.0, 0.25, 4.0, 7.0];
        let bx = b2.apply(&x);
        let bty = b2.apply_transpose(&y);
        let lhs: f64 = bx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = bty.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
