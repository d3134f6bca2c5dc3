//! Weighted cluster graphs and the symmetric-matrix toolkit built on `I + A²`.
//!
//! Node numbers on every public surface are 1-based, matching the node
//! labels used in the protocol descriptions. Storage is a dense 0-based
//! [`DMatrix`].

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;
use thiserror::Error;

/// Absolute tolerance for structural zero/one decisions.
pub const STRUCTURAL_TOL: f64 = 1e-9;

const EIGEN_EPS: f64 = 1e-15;
const EIGEN_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("weight matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("graph must have at least one node")]
    Empty,
    #[error("weight ({i},{j}) is not finite")]
    NonFinite { i: usize, j: usize },
    #[error("weights are not symmetric: A({i},{j}) = {upper} but A({j},{i}) = {lower}")]
    NotSymmetric { i: usize, j: usize, upper: f64, lower: f64 },
    #[error("diagonal weight A({i},{i}) = {value} must be zero")]
    NonzeroDiagonal { i: usize, value: f64 },
    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue})")]
    NotPositiveDefinite { min_eigenvalue: f64 },
    #[error("symmetric eigendecomposition did not converge")]
    EigendecompositionFailure,
    #[error("malformed graph text: {0}")]
    Parse(String),
}

/// The canonical resource graphs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GraphKind {
    /// Twelve-node graph shared by Alice (1, 7, 8, 11), Bob (2, 5, 9, 12)
    /// and Charlie (3, 4, 6, 10).
    Twelve,
    /// Three-node weighted graph with edge weights `g12`, `g13`, `g23`.
    Three { g12: f64, g13: f64, g23: f64 },
    /// Single unweighted edge.
    Two,
}

/// Edge list of the twelve-node graph, 1-based, as `(i, j, weight)`.
const TWELVE_EDGES: [(usize, usize, f64); 15] = [
    (1, 2, 1.0),
    (1, 3, 1.0),
    (1, 7, 1.0),
    (2, 3, 1.0),
    (2, 5, 1.0),
    (3, 6, 1.0),
    (4, 8, 1.0),
    (5, 8, 1.0),
    (6, 9, 1.0),
    (7, 10, 1.0),
    (8, 9, -1.0),
    (8, 10, -1.0),
    (9, 10, -1.0),
    (9, 11, 1.0),
    (10, 12, 1.0),
];

/// A validated weighted graph: symmetric weights with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterGraph {
    weights: DMatrix<f64>,
}

impl ClusterGraph {
    /// Validates `weights` and wraps it without modification.
    pub fn new(weights: DMatrix<f64>) -> Result<Self, GraphError> {
        let (rows, cols) = weights.shape();
        if rows != cols {
            return Err(GraphError::NotSquare { rows, cols });
        }
        if rows == 0 {
            return Err(GraphError::Empty);
        }
        for i in 0..rows {
            for j in 0..cols {
                if !weights[(i, j)].is_finite() {
                    return Err(GraphError::NonFinite { i: i + 1, j: j + 1 });
                }
            }
        }
        for i in 0..rows {
            if weights[(i, i)] != 0.0 {
                return Err(GraphError::NonzeroDiagonal {
                    i: i + 1,
                    value: weights[(i, i)],
                });
            }
            for j in (i + 1)..cols {
                if weights[(i, j)] != weights[(j, i)] {
                    return Err(GraphError::NotSymmetric {
                        i: i + 1,
                        j: j + 1,
                        upper: weights[(i, j)],
                        lower: weights[(j, i)],
                    });
                }
            }
        }
        Ok(Self { weights })
    }

    /// Builds a graph from row-major nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, GraphError> {
        let n = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(GraphError::NotSquare {
                rows: n,
                cols: bad.len(),
            });
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    /// Graph with `n` nodes and no edges.
    pub fn edgeless(n: usize) -> Result<Self, GraphError> {
        Self::new(DMatrix::zeros(n, n))
    }

    pub fn canonical(kind: GraphKind) -> Self {
        let weights = match kind {
            GraphKind::Twelve => {
                let mut a = DMatrix::zeros(12, 12);
                for &(i, j, w) in &TWELVE_EDGES {
                    a[(i - 1, j - 1)] = w;
                    a[(j - 1, i - 1)] = w;
                }
                a
            }
            GraphKind::Three { g12, g13, g23 } => {
                DMatrix::from_row_slice(3, 3, &[0.0, g12, g13, g12, 0.0, g23, g13, g23, 0.0])
            }
            GraphKind::Two => DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
        };
        Self::new(weights).expect("canonical graphs are valid for finite weights")
    }

    pub fn node_count(&self) -> usize {
        self.weights.nrows()
    }

    /// Weight between 1-based nodes `i` and `j`.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[(i - 1, j - 1)]
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// 1-based neighbours of `node` with their weights.
    pub fn neighbours(&self, node: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let row = node - 1;
        (0..self.node_count()).filter_map(move |j| {
            let w = self.weights[(row, j)];
            (w != 0.0).then_some((j + 1, w))
        })
    }

    /// Distinct nonzero edge weights in row-major upper-triangle order.
    pub fn edge_weights(&self) -> Vec<f64> {
        let n = self.node_count();
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let w = self.weights[(i, j)];
                if w != 0.0 && !out.contains(&w) {
                    out.push(w);
                }
            }
        }
        out
    }

    /// Parses the plain-text matrix format: first line `n`, then `n` rows of
    /// `n` whitespace-separated reals. Blank lines and `#` comments are ignored.
    pub fn from_text(text: &str) -> Result<Self, GraphError> {
        let mut lines = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty());
        let header = lines
            .next()
            .ok_or_else(|| GraphError::Parse("missing node count".into()))?;
        let n: usize = header
            .parse()
            .map_err(|_| GraphError::Parse(format!("invalid node count `{header}`")))?;
        let mut rows = Vec::with_capacity(n);
        for (r, line) in lines.enumerate() {
            if r >= n {
                return Err(GraphError::Parse(format!(
                    "expected {n} rows, found extra row `{line}`"
                )));
            }
            let row = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>()
                        .map_err(|_| GraphError::Parse(format!("row {}: invalid number `{tok}`", r + 1)))
                })
                .collect::<Result<Vec<_>, _>>()?;
            if row.len() != n {
                return Err(GraphError::Parse(format!(
                    "row {} has {} entries, expected {n}",
                    r + 1,
                    row.len()
                )));
            }
            rows.push(row);
        }
        if rows.len() != n {
            return Err(GraphError::Parse(format!("expected {n} rows, found {}", rows.len())));
        }
        Self::from_rows(&rows)
    }

    /// Inverse of [`ClusterGraph::from_text`]. Values are written with
    /// round-trip precision.
    pub fn to_text(&self) -> String {
        let n = self.node_count();
        let mut out = format!("{n}\n");
        for i in 0..n {
            let row: Vec<String> = (0..n).map(|j| format!("{}", self.weights[(i, j)])).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out
    }

    /// Nested rows, for serialization.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        matrix_rows(&self.weights)
    }
}

impl Serialize for ClusterGraph {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_rows().serialize(serializer)
    }
}

/// `I + A²`, its inverse and its inverse square root.
#[derive(Debug, Clone, PartialEq)]
pub struct GramKit {
    pub gram: DMatrix<f64>,
    pub gram_inverse: DMatrix<f64>,
    pub gram_inv_sqrt: DMatrix<f64>,
}

impl GramKit {
    pub fn new(graph: &ClusterGraph) -> Result<Self, GraphError> {
        let n = graph.node_count();
        let a = graph.weights();
        let gram = symmetrize(&(DMatrix::identity(n, n) + a * a));
        let eig = eigen(&gram)?;
        // Eigenvalues of I + A² are bounded below by one.
        let gram_inverse = spectral_map(&eig, |l| 1.0 / l);
        let gram_inv_sqrt = spectral_map(&eig, |l| 1.0 / l.sqrt());
        Ok(Self {
            gram,
            gram_inverse,
            gram_inv_sqrt,
        })
    }

    /// Smallest eigenvalue of the Gram matrix.
    pub fn min_eigenvalue(&self) -> Result<f64, GraphError> {
        Ok(eigen(&self.gram)?.eigenvalues.min())
    }
}

/// Principal square root of a symmetric positive-definite matrix.
pub fn symmetric_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>, GraphError> {
    let eig = positive_eigen(m)?;
    Ok(spectral_map(&eig, f64::sqrt))
}

/// Inverse principal square root of a symmetric positive-definite matrix.
pub fn symmetric_inv_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>, GraphError> {
    let eig = positive_eigen(m)?;
    Ok(spectral_map(&eig, |l| 1.0 / l.sqrt()))
}

fn positive_eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>, GraphError> {
    let (rows, cols) = m.shape();
    if rows != cols {
        return Err(GraphError::NotSquare { rows, cols });
    }
    if rows == 0 {
        return Err(GraphError::Empty);
    }
    let scale = m.amax().max(1.0);
    for i in 0..rows {
        for j in (i + 1)..cols {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                return Err(GraphError::NotSymmetric {
                    i: i + 1,
                    j: j + 1,
                    upper: m[(i, j)],
                    lower: m[(j, i)],
                });
            }
        }
    }
    let eig = eigen(&symmetrize(m))?;
    let min_eigenvalue = eig.eigenvalues.min();
    if min_eigenvalue <= 0.0 {
        return Err(GraphError::NotPositiveDefinite { min_eigenvalue });
    }
    Ok(eig)
}

fn eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>, GraphError> {
    SymmetricEigen::try_new(m.clone(), EIGEN_EPS, EIGEN_MAX_ITER).ok_or(GraphError::EigendecompositionFailure)
}

fn spectral_map(eig: &SymmetricEigen<f64, nalgebra::Dyn>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let v = &eig.eigenvectors;
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f));
    symmetrize(&(v * d * v.transpose()))
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn residual(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).amax()
    }

    #[test]
    fn twelve_node_entries() {
        let g = ClusterGraph::canonical(GraphKind::Twelve);
        assert_eq!(g.node_count(), 12);
        assert_eq!(g.weight(8, 9), -1.0);
        assert_eq!(g.weight(9, 10), -1.0);
        assert_eq!(g.weight(8, 10), -1.0);
        assert_eq!(g.weight(1, 2), 1.0);
        assert_eq!(g.weight(4, 8), 1.0);
        assert_eq!(g.weight(1, 4), 0.0);
        // row sums of |A| give node degrees
        let degrees: Vec<usize> = (1..=12).map(|i| g.neighbours(i).count()).collect();
        assert_eq!(degrees, vec![3, 3, 3, 1, 2, 2, 2, 4, 4, 4, 1, 1]);
    }

    #[test]
    fn three_and_two_node_graphs() {
        let g = ClusterGraph::canonical(GraphKind::Three {
            g12: 1.0,
            g13: 1.0,
            g23: 0.0,
        });
        assert_eq!(
            g.to_rows(),
            vec![vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]]
        );
        let two = ClusterGraph::canonical(GraphKind::Two);
        assert_eq!(two.to_rows(), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn validation_errors() {
        let diag = ClusterGraph::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.5]]);
        assert!(matches!(diag, Err(GraphError::NonzeroDiagonal { i: 2, .. })));
        let asym = ClusterGraph::from_rows(&[vec![0.0, 1.0], vec![2.0, 0.0]]);
        assert!(matches!(asym, Err(GraphError::NotSymmetric { i: 1, j: 2, .. })));
        let ragged = ClusterGraph::from_rows(&[vec![0.0, 1.0], vec![1.0]]);
        assert!(matches!(ragged, Err(GraphError::NotSquare { .. })));
        assert!(matches!(ClusterGraph::from_rows(&[]), Err(GraphError::Empty)));
        let nan = ClusterGraph::from_rows(&[vec![0.0, f64::NAN], vec![f64::NAN, 0.0]]);
        assert!(matches!(nan, Err(GraphError::NonFinite { .. })));
    }

    #[test]
    fn gram_of_two_node_graph() {
        let kit = GramKit::new(&ClusterGraph::canonical(GraphKind::Two)).unwrap();
        assert!(residual(&kit.gram, &(DMatrix::identity(2, 2) * 2.0)) < 1e-12);
        assert!(residual(&kit.gram_inverse, &(DMatrix::identity(2, 2) * 0.5)) < 1e-12);
    }

    #[test]
    fn gram_of_three_node_graph() {
        let kit = GramKit::new(&ClusterGraph::canonical(GraphKind::Three {
            g12: 1.0,
            g13: 1.0,
            g23: 0.0,
        }))
        .unwrap();
        let gram = DMatrix::from_row_slice(3, 3, &[3.0, 0.0, 0.0, 0.0, 2.0, 1.0, 0.0, 1.0, 2.0]);
        // hand inversion: block diag(1/3, [[2,1],[1,2]]^-1 = [[2,-1],[-1,2]]/3)
        let inverse = DMatrix::from_row_slice(
            3,
            3,
            &[
                1.0 / 3.0,
                0.0,
                0.0,
                0.0,
                2.0 / 3.0,
                -1.0 / 3.0,
                0.0,
                -1.0 / 3.0,
                2.0 / 3.0,
            ],
        );
        assert!(residual(&kit.gram, &gram) < 1e-12);
        assert!(residual(&kit.gram_inverse, &inverse) < 1e-12);
    }

    #[test]
    fn twelve_node_gram_kit_residuals() {
        let kit = GramKit::new(&ClusterGraph::canonical(GraphKind::Twelve)).unwrap();
        let id = DMatrix::identity(12, 12);
        assert!(residual(&(&kit.gram_inverse * &kit.gram), &id) < 1e-9);
        assert!(residual(&(&kit.gram_inv_sqrt * &kit.gram_inv_sqrt * &kit.gram), &id) < 1e-9);
        for m in [&kit.gram, &kit.gram_inverse, &kit.gram_inv_sqrt] {
            assert!(residual(m, &m.transpose()) < 1e-12);
        }
        let commutator = &kit.gram_inv_sqrt * &kit.gram - &kit.gram * &kit.gram_inv_sqrt;
        assert!(commutator.amax() < 1e-9);
        assert!(kit.min_eigenvalue().unwrap() >= 1.0 - 1e-12);
    }

    #[test]
    fn sqrt_of_scalar_matrices() {
        let id = DMatrix::<f64>::identity(4, 4);
        assert!(residual(&symmetric_sqrt(&id).unwrap(), &id) < 1e-12);
        let s = symmetric_sqrt(&(&id * 2.0)).unwrap();
        assert!(residual(&s, &(&id * 2f64.sqrt())) < 1e-12);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            symmetric_sqrt(&bad),
            Err(GraphError::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn text_round_trip() {
        let g = ClusterGraph::canonical(GraphKind::Three {
            g12: 0.7,
            g13: 1.0 / 3.0,
            g23: -2.5,
        });
        let back = ClusterGraph::from_text(&g.to_text()).unwrap();
        assert_eq!(g, back);
        let parsed = ClusterGraph::from_text("# two nodes\n2\n0 1\n1 0\n").unwrap();
        assert_eq!(parsed, ClusterGraph::canonical(GraphKind::Two));
        assert!(matches!(ClusterGraph::from_text("2\n0 1\n"), Err(GraphError::Parse(_))));
        assert!(matches!(
            ClusterGraph::from_text("2\n0 x\n1 0\n"),
            Err(GraphError::Parse(_))
        ));
    }

    fn spd(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
        proptest::collection::vec(-2.0f64..2.0, n * n).prop_map(move |v| {
            let m = DMatrix::from_vec(n, n, v);
            m.transpose() * &m + DMatrix::identity(n, n)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]

        #[test]
        fn sqrt_squares_back(m in (1usize..7).prop_flat_map(spd)) {
            let s = symmetric_sqrt(&m).unwrap();
            prop_assert!(residual(&(&s * &s), &m) < 1e-9);
            prop_assert!(residual(&s, &s.transpose()) < 1e-12);
        }

        #[test]
        fn random_graph_gram_bounds(
            n in 1usize..8,
            w in proptest::collection::vec(-3.0f64..3.0, 28),
        ) {
            let mut a = DMatrix::zeros(n, n);
            let mut k = 0;
            for i in 0..n {
                for j in (i + 1)..n {
                    a[(i, j)] = w[k];
                    a[(j, i)] = w[k];
                    k += 1;
                }
            }
            let kit = GramKit::new(&ClusterGraph::new(a).unwrap()).unwrap();
            prop_assert!(kit.min_eigenvalue().unwrap() >= 1.0 - 1e-9);
            let id = DMatrix::identity(n, n);
            prop_assert!(residual(&(&kit.gram_inverse * &kit.gram), &id) < 1e-9);
        }
    }

    #[test]
    fn canonical_graphs_validate() {
        for kind in [
            GraphKind::Twelve,
            GraphKind::Two,
            GraphKind::Three {
                g12: 0.3,
                g13: 2.0,
                g23: 1.1,
            },
        ] {
            let g = ClusterGraph::canonical(kind);
            assert!(ClusterGraph::new(g.weights().clone()).is_ok());
        }
        assert_abs_diff_eq!(ClusterGraph::canonical(GraphKind::Two).weight(1, 2), 1.0);
    }
}
