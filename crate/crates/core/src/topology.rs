//! Network graphs, Lazy-Metropolis mixing matrices and their spectra.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Row-sum tolerance for a stochastic matrix.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Tolerance on reported eigenvalues.
pub const EIGEN_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("a network needs at least 2 nodes, got {0}")]
    TooSmall(usize),
    #[error("grid topology needs a perfect-square node count, got {0}")]
    NonSquareGrid(usize),
    #[error("custom edge list does not connect all {0} nodes")]
    DisconnectedCustom(usize),
    #[error("edge ({0}, {1}) is invalid for a graph on {2} nodes")]
    InvalidEdge(usize, usize, usize),
    #[error("custom topology requires an edge list")]
    MissingEdges,
    #[error("matrix is not square: {rows} rows, row {row} has {len} entries")]
    NotSquare { rows: usize, row: usize, len: usize },
    #[error("matrix is not symmetric at ({0}, {1})")]
    NotSymmetric(usize, usize),
    #[error("row {row} sums to {sum}, expected 1")]
    NotStochastic { row: usize, sum: f64 },
    #[error("negative weight {value} at ({row}, {col})")]
    NegativeWeight { row: usize, col: usize, value: f64 },
    #[error("diagonal weight at node {0} must be positive")]
    ZeroDiagonal(usize),
    #[error("eigenvalue {0} lies outside (-1, 1]")]
    SpectrumOutOfRange(f64),
    #[error("largest eigenvalue is {0}, expected 1")]
    LeadingEigenvalue(f64),
    #[error("gamma must lie in (0, 1), got {0}")]
    GammaOutOfRange(f64),
    #[error("unknown topology kind `{0}`")]
    UnknownKind(String),
    #[error("topology file: {0}")]
    Io(#[from] std::io::Error),
    #[error("topology file: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, TopologyError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    Ring,
    Grid,
    Exponential,
    Complete,
    Path,
    Custom,
}

impl GraphKind {
    pub const ALL: [GraphKind; 6] = [
        GraphKind::Ring,
        GraphKind::Grid,
        GraphKind::Exponential,
        GraphKind::Complete,
        GraphKind::Path,
        GraphKind::Custom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GraphKind::Ring => "ring",
            GraphKind::Grid => "grid",
            GraphKind::Exponential => "exponential",
            GraphKind::Complete => "complete",
            GraphKind::Path => "path",
            GraphKind::Custom => "custom",
        }
    }
}

impl fmt::Display for GraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GraphKind {
    type Err = TopologyError;

    fn from_str(s: &str) -> Result<Self> {
        GraphKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| TopologyError::UnknownKind(s.to_string()))
    }
}

/// Connected undirected graph without self-loops.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n: usize,
    kind: GraphKind,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds one of the generated topologies. `Custom` needs [`Graph::custom`].
    pub fn build(kind: GraphKind, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(TopologyError::TooSmall(n));
        }
        let mut edges = BTreeSet::new();
        let mut add = |i: usize, j: usize| {
            if i != j {
                edges.insert((i.min(j), i.max(j)));
            }
        };
        match kind {
            GraphKind::Ring => (0..n).for_each(|i| add(i, (i + 1) % n)),
            GraphKind::Path => (0..n - 1).for_each(|i| add(i, i + 1)),
            GraphKind::Complete => {
                for i in 0..n {
                    for j in i + 1..n {
                        add(i, j);
                    }
                }
            }
            GraphKind::Grid => {
                let side = perfect_square_root(n).ok_or(TopologyError::NonSquareGrid(n))?;
                for r in 0..side {
                    for c in 0..side {
                        let i = r * side + c;
                        if c + 1 < side {
                            add(i, i + 1);
                        }
                        if r + 1 < side {
                            add(i, i + side);
                        }
                    }
                }
            }
            GraphKind::Exponential => {
                let mut hop = 1;
                while hop < n {
                    for i in 0..n {
                        add(i, (i + hop) % n);
                        add(i, (i + n - hop) % n);
                    }
                    hop *= 2;
                }
            }
            GraphKind::Custom => return Err(TopologyError::MissingEdges),
        }
        Ok(Self::from_edge_set(n, kind, edges))
    }

    /// Graph from an explicit undirected edge list. Duplicates and both
    /// orientations of a pair are merged.
    pub fn custom(n: usize, edge_list: &[(usize, usize)]) -> Result<Self> {
        if n < 2 {
            return Err(TopologyError::TooSmall(n));
        }
        let mut edges = BTreeSet::new();
        for &(i, j) in edge_list {
            if i == j || i >= n || j >= n {
                return Err(TopologyError::InvalidEdge(i, j, n));
            }
            edges.insert((i.min(j), i.max(j)));
        }
        let g = Self::from_edge_set(n, GraphKind::Custom, edges);
        if !g.is_connected() {
            return Err(TopologyError::DisconnectedCustom(n));
        }
        Ok(g)
    }

    fn from_edge_set(n: usize, kind: GraphKind, edges: BTreeSet<(usize, usize)>) -> Self {
        let mut neighbors = vec![Vec::new(); n];
        for &(i, j) in &edges {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for row in &mut neighbors {
            row.sort_unstable();
        }
        Graph {
            n,
            kind,
            edges: edges.into_iter().collect(),
            neighbors,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    /// Edges as `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = queue.pop_front() {
            for &j in &self.neighbors[i] {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    queue.push_back(j);
                }
            }
        }
        count == self.n
    }

    /// Same graph with node `i` renamed to `perm[i]`.
    pub fn relabel(&self, perm: &[usize]) -> Graph {
        assert_eq!(perm.len(), self.n, "permutation length");
        let edges = self
            .edges
            .iter()
            .map(|&(i, j)| (perm[i].min(perm[j]), perm[i].max(perm[j])))
            .collect();
        Self::from_edge_set(self.n, self.kind, edges)
    }
}

fn perfect_square_root(n: usize) -> Option<usize> {
    let r = (n as f64).sqrt().round() as usize;
    (r * r == n).then_some(r)
}

/// Which degree enters the Lazy-Metropolis weight `1 / (2 max{deg i, deg j})`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegreeCount {
    /// Number of neighbors, `|N_i|`.
    #[default]
    Open,
    /// Neighbors plus the node itself, `|N_i| + 1`.
    Closed,
}

/// Symmetric doubly-stochastic weight matrix with its cached spectrum.
#[derive(Clone, Debug)]
pub struct MixingMatrix {
    weights: DMatrix<f64>,
    /// Nonzero entries of each row, `(column, weight)`, diagonal included.
    rows: Vec<Vec<(usize, f64)>>,
    eigenvalues: Vec<f64>,
}

impl MixingMatrix {
    /// Lazy-Metropolis weights counting open-neighborhood degrees.
    pub fn lazy_metropolis(g: &Graph) -> Self {
        Self::lazy_metropolis_with(g, DegreeCount::Open)
    }

    pub fn lazy_metropolis_with(g: &Graph, degree: DegreeCount) -> Self {
        let n = g.n();
        let deg = |i: usize| match degree {
            DegreeCount::Open => g.degree(i),
            DegreeCount::Closed => g.degree(i) + 1,
        };
        let mut w = DMatrix::zeros(n, n);
        for &(i, j) in g.edges() {
            let v = 1.0 / (2.0 * deg(i).max(deg(j)) as f64);
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
        for i in 0..n {
            // neighbor weights summed in column order, matching row_sum()
            let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
            w[(i, i)] = 1.0 - off;
        }
        Self::from_matrix_unchecked(w)
    }

    /// Mixing matrix of a single isolated agent or of decoupled agents.
    pub fn identity(n: usize) -> Self {
        Self::from_matrix_unchecked(DMatrix::identity(n, n))
    }

    /// Validates a user-supplied dense matrix against the mixing-matrix
    /// invariants: symmetric, nonnegative, row-stochastic, positive diagonal,
    /// connected support, spectrum in (-1, 1] with leading eigenvalue 1.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        for (r, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(TopologyError::NotSquare { rows: n, row: r, len: row.len() });
            }
        }
        let w = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        let m = Self::from_matrix_unchecked(w);
        m.validate()?;
        Ok(m)
    }

    fn from_matrix_unchecked(weights: DMatrix<f64>) -> Self {
        let n = weights.nrows();
        let rows = (0..n)
            .map(|i| (0..n).filter(|&j| weights[(i, j)] != 0.0).map(|j| (j, weights[(i, j)])).collect())
            .collect();
        let eigenvalues = sorted_eigenvalues(&weights);
        MixingMatrix { weights, rows, eigenvalues }
    }

    /// Checks every mixing-matrix invariant.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let w = &self.weights;
        for i in 0..n {
            for j in 0..n {
                if w[(i, j)] != w[(j, i)] {
                    return Err(TopologyError::NotSymmetric(i, j));
                }
                if w[(i, j)] < 0.0 {
                    return Err(TopologyError::NegativeWeight { row: i, col: j, value: w[(i, j)] });
                }
            }
            if w[(i, i)] <= 0.0 {
                return Err(TopologyError::ZeroDiagonal(i));
            }
            let sum = self.row_sum(i);
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(TopologyError::NotStochastic { row: i, sum });
            }
        }
        if n >= 2 {
            let edges: Vec<(usize, usize)> = (0..n)
                .flat_map(|i| (i + 1..n).filter(move |&j| w[(i, j)] > 0.0).map(move |j| (i, j)))
                .collect();
            if Graph::custom(n, &edges).is_err() {
                return Err(TopologyError::DisconnectedCustom(n));
            }
        }
        let top = self.eigenvalues[0];
        if (top - 1.0).abs() > EIGEN_TOL {
            return Err(TopologyError::LeadingEigenvalue(top));
        }
        if let Some(&bad) = self.eigenvalues.iter().find(|&&l| l <= -1.0 || l > 1.0 + EIGEN_TOL) {
            return Err(TopologyError::SpectrumOutOfRange(bad));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// Nonzero `(j, w_ij)` entries of row `i`, including `j = i`.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        (0..self.n()).map(|j| self.weights[(i, j)]).sum()
    }

    /// Eigenvalues sorted in decreasing order.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Second-largest eigenvalue; 0 for a single agent.
    pub fn lambda2(&self) -> f64 {
        self.eigenvalues.get(1).copied().unwrap_or(0.0)
    }

    pub fn spectral_gap(&self) -> f64 {
        1.0 - self.lambda2()
    }

    pub fn tilde(&self, gamma: f64) -> Result<TildeMatrix> {
        TildeMatrix::new(self, gamma)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n()).map(|i| (0..self.n()).map(|j| self.weights[(i, j)]).collect()).collect()
    }
}

/// Spectral gap `1 - λ₂` of a mixing matrix.
pub fn spectral_gap(w: &MixingMatrix) -> f64 {
    w.spectral_gap()
}

/// Damped mixing matrix `I - (γ/2)(I - W)`.
#[derive(Clone, Debug)]
pub struct TildeMatrix {
    weights: DMatrix<f64>,
    gamma: f64,
    eigenvalues: Vec<f64>,
}

impl TildeMatrix {
    pub fn new(w: &MixingMatrix, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(TopologyError::GammaOutOfRange(gamma));
        }
        let n = w.n();
        let identity = DMatrix::<f64>::identity(n, n);
        let weights = &identity - (&identity - w.matrix()) * (gamma / 2.0);
        let eigenvalues = sorted_eigenvalues(&weights);
        Ok(TildeMatrix { weights, gamma, eigenvalues })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `1 - (γ/2)(1 - λ)` for each eigenvalue of the source matrix.
    pub fn mapped_spectrum(w: &MixingMatrix, gamma: f64) -> Vec<f64> {
        w.eigenvalues().iter().map(|&l| 1.0 - gamma / 2.0 * (1.0 - l)).collect()
    }
}

fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// On-disk layout for a topology: node count, kind, edge list and optional
/// dense weight rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopologyFile {
    pub n: usize,
    pub kind: GraphKind,
    pub edges: Vec<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree: Option<DegreeCount>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<Vec<f64>>>,
}

impl TopologyFile {
    pub fn from_graph(g: &Graph, w: Option<&MixingMatrix>, degree: Option<DegreeCount>) -> Self {
        TopologyFile {
            n: g.n(),
            kind: g.kind(),
            edges: g.edges().to_vec(),
            degree,
            weights: w.map(MixingMatrix::to_rows),
        }
    }

    pub fn graph(&self) -> Result<Graph> {
        let g = Graph::custom(self.n, &self.edges)?;
        Ok(Graph { kind: self.kind, ..g })
    }

    /// Supplied weights are validated; otherwise Lazy-Metropolis weights are built.
    pub fn mixing(&self) -> Result<MixingMatrix> {
        match &self.weights {
            Some(rows) => MixingMatrix::from_rows(rows),
            None => Ok(MixingMatrix::lazy_metropolis_with(&self.graph()?, self.degree.unwrap_or_default())),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_of_four() {
        let g = Graph::build(GraphKind::Ring, 4).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (0, 3), (1, 2), (2, 3)]);
    }

    #[test]
    fn exponential_sixteen_has_degree_seven() {
        // offsets ±1, ±2, ±4, ±8 mod 16 with +8 ≡ -8
        let mut expected = BTreeSet::new();
        for off in [1usize, 2, 4, 8] {
            expected.insert(off % 16);
            expected.insert((16 - off) % 16);
        }
        assert_eq!(expected.len(), 7);
        let g = Graph::build(GraphKind::Exponential, 16).unwrap();
        for i in 0..16 {
            assert_eq!(g.degree(i), 7);
            let offsets: BTreeSet<usize> = g.neighbors(i).iter().map(|&j| (j + 16 - i) % 16).collect();
            assert_eq!(offsets, expected);
        }
    }

    #[test]
    fn grid_requires_square() {
        assert!(matches!(Graph::build(GraphKind::Grid, 15), Err(TopologyError::NonSquareGrid(15))));
        let g = Graph::build(GraphKind::Grid, 9).unwrap();
        assert_eq!(g.edges().len(), 12);
        assert_eq!(g.degree(4), 4);
        assert_eq!(g.degree(0), 2);
    }

    #[test]
    fn too_small_and_custom_errors() {
        assert!(matches!(Graph::build(GraphKind::Ring, 1), Err(TopologyError::TooSmall(1))));
        assert!(matches!(Graph::build(GraphKind::Custom, 4), Err(TopologyError::MissingEdges)));
        assert!(matches!(
            Graph::custom(4, &[(0, 1), (2, 3)]),
            Err(TopologyError::DisconnectedCustom(4))
        ));
        assert!(matches!(Graph::custom(3, &[(0, 0)]), Err(TopologyError::InvalidEdge(0, 0, 3))));
        let g = Graph::custom(3, &[(0, 1), (2, 1), (1, 0)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
    }

    #[test]
    fn path_of_two() {
        let w = MixingMatrix::lazy_metropolis(&Graph::build(GraphKind::Path, 2).unwrap());
        assert_eq!(w.to_rows(), vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
        assert!((w.spectral_gap() - 1.0).abs() < EIGEN_TOL);
    }

    #[test]
    fn complete_of_three() {
        let w = MixingMatrix::lazy_metropolis(&Graph::build(GraphKind::Complete, 3).unwrap());
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 0.5 } else { 0.25 };
                assert_eq!(w.weight(i, j), expected);
            }
        }
    }

    #[test]
    fn tilde_of_path_two() {
        let w = MixingMatrix::lazy_metropolis(&Graph::build(GraphKind::Path, 2).unwrap());
        let t = w.tilde(0.5).unwrap();
        // I - (1/4)(I - W) with W = 1/2 everywhere
        assert_eq!(t.matrix()[(0, 0)], 0.875);
        assert_eq!(t.matrix()[(0, 1)], 0.125);
        assert!((t.eigenvalues()[0] - 1.0).abs() < EIGEN_TOL);
        assert!((t.eigenvalues()[1] - 0.75).abs() < EIGEN_TOL);
    }

    #[test]
    fn tilde_of_identity_is_identity() {
        let w = MixingMatrix::identity(4);
        for gamma in [0.1, 0.5, 0.9] {
            let t = w.tilde(gamma).unwrap();
            assert_eq!(t.matrix(), &DMatrix::<f64>::identity(4, 4));
        }
    }

    #[test]
    fn gamma_range() {
        let w = MixingMatrix::identity(2);
        for gamma in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(matches!(w.tilde(gamma), Err(TopologyError::GammaOutOfRange(_))));
        }
    }

    #[test]
    fn corrupted_row_is_rejected() {
        let mut rows = MixingMatrix::lazy_metropolis(&Graph::build(GraphKind::Ring, 5).unwrap()).to_rows();
        rows[2][2] += 0.01;
        assert!(matches!(MixingMatrix::from_rows(&rows), Err(TopologyError::NotStochastic { row: 2, .. })));
    }

    #[test]
    fn file_round_trip() {
        let g = Graph::build(GraphKind::Exponential, 8).unwrap();
        let w = MixingMatrix::lazy_metropolis(&g);
        let file = TopologyFile::from_graph(&g, Some(&w), None);
        let json = serde_json::to_string(&file).unwrap();
        let back: TopologyFile = serde_json::from_str(&json).unwrap();
        assert_eq!(back.graph().unwrap(), g);
        assert_eq!(back.mixing().unwrap().to_rows(), w.to_rows());
    }
}
