//! Gaussian covariance-matrix simulation, used as an independent numeric
//! check of the symbolic engine.
//!
//! Phase-space ordering is `(x₁..x_n, y₁..y_n)` and `[x̂, ŷ] = i/2`, so the
//! vacuum has variance 1/4 in every quadrature and the symplectic form is
//! `Ω = ½·[[0, I], [−I, 0]]`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use thiserror::Error;

use crate::graph::{symmetrize, ClusterGraph, GramKit, GraphError};
use crate::protocol::{
    phase_schedule, run_with_schedule, OutputQuadrature, ProtocolError, Scenario, TeleportationReport,
};
use crate::symbolic::{InputTag, ModeLabel, Quadrature};

/// Variance of either vacuum quadrature.
pub const VACUUM_VARIANCE: f64 = 0.25;
pub const SYMMETRY_TOL: f64 = 1e-12;
pub const SYMPLECTIC_TOL: f64 = 1e-9;
pub const UNCERTAINTY_TOL: f64 = 1e-9;
/// Homodyne marginals with smaller variance are rejected.
pub const DEGENERATE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CovsimError {
    #[error("covariance is {rows}×{cols}, expected {expected}×{expected}")]
    BadShape { expected: usize, rows: usize, cols: usize },
    #[error("mean has length {found}, expected {expected}")]
    MeanLength { expected: usize, found: usize },
    #[error("state contains a non-finite entry")]
    NonFinite,
    #[error("covariance is not symmetric at ({i}, {j})")]
    NotSymmetric { i: usize, j: usize },
    #[error("covariance violates the uncertainty relation (min eigenvalue {min_eigenvalue:e})")]
    Unphysical { min_eigenvalue: f64 },
    #[error("mode {mode} has det {det:e} below 1/16")]
    ModeUncertainty { mode: usize, det: f64 },
    #[error("matrix is not symplectic (deviation {deviation:e})")]
    NotSymplectic { deviation: f64 },
    #[error("operation acts on {op} modes, state has {state}")]
    DimensionMismatch { state: usize, op: usize },
    #[error("mode index {0} out of range")]
    UnknownMode(usize),
    #[error("homodyne marginal variance {0:e} is degenerate")]
    DegenerateMarginal(f64),
    #[error("gain matrix is {rows}×{cols}, expected {expected_rows}×{outcomes}")]
    GainShape {
        rows: usize,
        cols: usize,
        expected_rows: usize,
        outcomes: usize,
    },
    #[error("mode {0} is not present in the simulated state")]
    MissingMode(ModeLabel),
    #[error("eigendecomposition failed")]
    Eigen,
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// `Ω = ½·[[0, I], [−I, 0]]` for `n` modes.
pub fn symplectic_form(n: usize) -> DMatrix<f64> {
    let mut omega = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        omega[(i, n + i)] = 0.5;
        omega[(n + i, i)] = -0.5;
    }
    omega
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianState {
    /// Validates shape, symmetry and the uncertainty relation
    /// `Σ + (i/2)Ω ⪰ 0`, plus `det Σ_k ≥ 1/16` for every single-mode block.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self, CovsimError> {
        let dim = cov.nrows();
        if !dim.is_multiple_of(2) || cov.ncols() != dim || dim == 0 {
            return Err(CovsimError::BadShape {
                expected: dim.max(2) + dim % 2,
                rows: cov.nrows(),
                cols: cov.ncols(),
            });
        }
        if mean.len() != dim {
            return Err(CovsimError::MeanLength {
                expected: dim,
                found: mean.len(),
            });
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(CovsimError::NonFinite);
        }
        let scale = cov.amax().max(1.0);
        for i in 0..dim {
            for j in (i + 1)..dim {
                if (cov[(i, j)] - cov[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(CovsimError::NotSymmetric { i, j });
                }
            }
        }
        let cov = symmetrize(&cov);
        let n = dim / 2;
        // Real form of the Hermitian matrix Σ + iK with K = Ω/2.
        let k = symplectic_form(n) * 0.5;
        let mut real = DMatrix::zeros(2 * dim, 2 * dim);
        real.view_mut((0, 0), (dim, dim)).copy_from(&cov);
        real.view_mut((dim, dim), (dim, dim)).copy_from(&cov);
        real.view_mut((0, dim), (dim, dim)).copy_from(&(-&k));
        real.view_mut((dim, 0), (dim, dim)).copy_from(&k);
        let eig = SymmetricEigen::try_new(symmetrize(&real), 1e-14, 10_000).ok_or(CovsimError::Eigen)?;
        let min_eigenvalue = eig.eigenvalues.min();
        if min_eigenvalue < -UNCERTAINTY_TOL * scale {
            return Err(CovsimError::Unphysical { min_eigenvalue });
        }
        for mode in 0..n {
            let det = cov[(mode, mode)] * cov[(n + mode, n + mode)] - cov[(mode, n + mode)].powi(2);
            if det < 1.0 / 16.0 - UNCERTAINTY_TOL * scale {
                return Err(CovsimError::ModeUncertainty { mode, det });
            }
        }
        Ok(Self { mean, cov })
    }

    pub fn vacuum(n: usize) -> Self {
        Self {
            mean: DVector::zeros(2 * n),
            cov: DMatrix::identity(2 * n, 2 * n) * VACUUM_VARIANCE,
        }
    }

    /// Single-mode state with the given quadrature means, squeezed by
    /// `s_db` in y (anti-squeezed in x).
    pub fn single_mode(x_mean: f64, y_mean: f64, s_db: f64) -> Result<Self, CovsimError> {
        let mut state = squeezed_vacuum(&[s_db])?;
        state.mean = DVector::from_vec(vec![x_mean, y_mean]);
        if !(x_mean.is_finite() && y_mean.is_finite()) {
            return Err(CovsimError::NonFinite);
        }
        Ok(state)
    }

    pub fn mode_count(&self) -> usize {
        self.mean.len() / 2
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Phase-space index of quadrature `q` of mode `mode` (0-based).
    pub fn index(&self, mode: usize, q: Quadrature) -> usize {
        match q {
            Quadrature::X => mode,
            Quadrature::Y => self.mode_count() + mode,
        }
    }

    /// Variance of the linear functional `wᵀq`.
    pub fn variance_of(&self, w: &DVector<f64>) -> f64 {
        (w.transpose() * &self.cov * w)[(0, 0)]
    }
}

/// Independent modes squeezed in y by `s_db[k]` dB.
pub fn squeezed_vacuum(s_db: &[f64]) -> Result<GaussianState, CovsimError> {
    if s_db.iter().any(|s| !s.is_finite()) {
        return Err(CovsimError::NonFinite);
    }
    let n = s_db.len();
    let mut cov = DMatrix::zeros(2 * n, 2 * n);
    for (k, &s) in s_db.iter().enumerate() {
        cov[(k, k)] = 10f64.powf(s / 10.0) * VACUUM_VARIANCE;
        cov[(n + k, n + k)] = 10f64.powf(-s / 10.0) * VACUUM_VARIANCE;
    }
    Ok(GaussianState {
        mean: DVector::zeros(2 * n),
        cov,
    })
}

/// Tensor product of independent states, modes in argument order.
pub fn product(states: &[&GaussianState]) -> GaussianState {
    let n: usize = states.iter().map(|s| s.mode_count()).sum();
    let mut mean = DVector::zeros(2 * n);
    let mut cov = DMatrix::zeros(2 * n, 2 * n);
    let mut offset = 0;
    for s in states {
        let m = s.mode_count();
        let place = |i: usize| if i < m { offset + i } else { n + offset + i - m };
        for i in 0..2 * m {
            mean[place(i)] = s.mean[i];
            for j in 0..2 * m {
                cov[(place(i), place(j))] = s.cov[(i, j)];
            }
        }
        offset += m;
    }
    GaussianState { mean, cov }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticOp {
    matrix: DMatrix<f64>,
}

impl SymplecticOp {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self, CovsimError> {
        let dim = matrix.nrows();
        if dim == 0 || !dim.is_multiple_of(2) || matrix.ncols() != dim {
            return Err(CovsimError::BadShape {
                expected: dim.max(2) + dim % 2,
                rows: matrix.nrows(),
                cols: matrix.ncols(),
            });
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(CovsimError::NonFinite);
        }
        let op = Self { matrix };
        let deviation = op.symplectic_deviation();
        if deviation > SYMPLECTIC_TOL {
            return Err(CovsimError::NotSymplectic { deviation });
        }
        Ok(op)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            matrix: DMatrix::identity(2 * n, 2 * n),
        }
    }

    /// Cluster-state generator `[[C, −AC], [AC, C]]` with `C = (I+A²)^(−1/2)`.
    pub fn bogoliubov(graph: &ClusterGraph) -> Result<Self, CovsimError> {
        let n = graph.node_count();
        let c = GramKit::new(graph)?.gram_inv_sqrt;
        let ac = graph.weights() * &c;
        let mut s = DMatrix::zeros(2 * n, 2 * n);
        s.view_mut((0, 0), (n, n)).copy_from(&c);
        s.view_mut((0, n), (n, n)).copy_from(&(-&ac));
        s.view_mut((n, 0), (n, n)).copy_from(&ac);
        s.view_mut((n, n), (n, n)).copy_from(&c);
        Self::new(s)
    }

    /// Symmetric beam splitter on modes `a`, `b` of `n`:
    /// `a ← (a + b)/√2`, `b ← (a − b)/√2`, identically on both quadratures.
    pub fn beam_splitter(n: usize, a: usize, b: usize) -> Result<Self, CovsimError> {
        if a >= n {
            return Err(CovsimError::UnknownMode(a));
        }
        if b >= n || b == a {
            return Err(CovsimError::UnknownMode(b));
        }
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let mut s = DMatrix::identity(2 * n, 2 * n);
        for off in [0, n] {
            let (ia, ib) = (off + a, off + b);
            s[(ia, ia)] = r;
            s[(ia, ib)] = r;
            s[(ib, ia)] = r;
            s[(ib, ib)] = -r;
        }
        Ok(Self { matrix: s })
    }

    /// `self ⊕ other`, with `other`'s modes placed after `self`'s.
    pub fn direct_sum(&self, other: &SymplecticOp) -> SymplecticOp {
        let (n1, n2) = (self.mode_count(), other.mode_count());
        let n = n1 + n2;
        let mut s = DMatrix::zeros(2 * n, 2 * n);
        let place1 = |i: usize| if i < n1 { i } else { n + i - n1 };
        let place2 = |i: usize| if i < n2 { n1 + i } else { n + n1 + i - n2 };
        for i in 0..2 * n1 {
            for j in 0..2 * n1 {
                s[(place1(i), place1(j))] = self.matrix[(i, j)];
            }
        }
        for i in 0..2 * n2 {
            for j in 0..2 * n2 {
                s[(place2(i), place2(j))] = other.matrix[(i, j)];
            }
        }
        SymplecticOp { matrix: s }
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &SymplecticOp) -> Result<SymplecticOp, CovsimError> {
        if next.mode_count() != self.mode_count() {
            return Err(CovsimError::DimensionMismatch {
                state: self.mode_count(),
                op: next.mode_count(),
            });
        }
        Ok(SymplecticOp {
            matrix: &next.matrix * &self.matrix,
        })
    }

    pub fn mode_count(&self) -> usize {
        self.matrix.nrows() / 2
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Max-entry deviation of `SΩSᵀ` from `Ω`.
    pub fn symplectic_deviation(&self) -> f64 {
        let omega = symplectic_form(self.mode_count());
        (&self.matrix * &omega * self.matrix.transpose() - omega).amax()
    }
}

pub fn apply_symplectic(state: &GaussianState, op: &SymplecticOp) -> Result<GaussianState, CovsimError> {
    if op.mode_count() != state.mode_count() {
        return Err(CovsimError::DimensionMismatch {
            state: state.mode_count(),
            op: op.mode_count(),
        });
    }
    let s = &op.matrix;
    Ok(GaussianState {
        mean: s * &state.mean,
        cov: symmetrize(&(s * &state.cov * s.transpose())),
    })
}

/// How the homodyne result is obtained.
pub enum Outcome<'a> {
    /// Condition on a given photocurrent.
    Value(f64),
    /// Draw the photocurrent from its marginal distribution.
    Sample(&'a mut dyn RngCore),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HomodyneRecord {
    pub theta: f64,
    pub outcome: f64,
    pub marginal_mean: f64,
    pub marginal_variance: f64,
}

/// Measures `cos θ·x + sin θ·y` of `mode` and returns the conditional state
/// of the remaining modes.
pub fn measure_homodyne(
    state: &GaussianState,
    mode: usize,
    theta: f64,
    outcome: Outcome<'_>,
) -> Result<(GaussianState, HomodyneRecord), CovsimError> {
    let n = state.mode_count();
    if mode >= n {
        return Err(CovsimError::UnknownMode(mode));
    }
    let mut c = DVector::zeros(2 * n);
    c[mode] = theta.cos();
    c[n + mode] = theta.sin();
    let sigma_c = &state.cov * &c;
    let marginal_variance = c.dot(&sigma_c);
    if marginal_variance.is_nan() || marginal_variance < DEGENERATE_TOL {
        return Err(CovsimError::DegenerateMarginal(marginal_variance));
    }
    let marginal_mean = c.dot(&state.mean);
    let value = match outcome {
        Outcome::Value(v) => v,
        Outcome::Sample(rng) => Normal::new(marginal_mean, marginal_variance.sqrt())
            .map_err(|_| CovsimError::DegenerateMarginal(marginal_variance))?
            .sample(rng),
    };
    let cov = &state.cov - &sigma_c * sigma_c.transpose() / marginal_variance;
    let mean = &state.mean + &sigma_c * ((value - marginal_mean) / marginal_variance);
    let keep: Vec<usize> = (0..2 * n).filter(|&i| i != mode && i != n + mode).collect();
    let cov = symmetrize(&cov.select_rows(&keep).select_columns(&keep));
    let mean = mean.select_rows(&keep);
    Ok((
        GaussianState { mean, cov },
        HomodyneRecord {
            theta,
            outcome: value,
            marginal_mean,
            marginal_variance,
        },
    ))
}

/// Shifts the mean by `gains · outcomes`; the covariance is untouched.
pub fn displace(state: &GaussianState, gains: &DMatrix<f64>, outcomes: &[f64]) -> Result<GaussianState, CovsimError> {
    let dim = state.mean.len();
    if gains.nrows() != dim || gains.ncols() != outcomes.len() {
        return Err(CovsimError::GainShape {
            rows: gains.nrows(),
            cols: gains.ncols(),
            expected_rows: dim,
            outcomes: outcomes.len(),
        });
    }
    if gains.iter().chain(outcomes).any(|v| !v.is_finite()) {
        return Err(CovsimError::NonFinite);
    }
    Ok(GaussianState {
        mean: &state.mean + gains * DVector::from_column_slice(outcomes),
        cov: state.cov.clone(),
    })
}

/// Cluster state of `graph` built from oscillators squeezed by `s_db`.
pub fn cluster_state(graph: &ClusterGraph, s_db: f64) -> Result<GaussianState, CovsimError> {
    let vac = squeezed_vacuum(&vec![s_db; graph.node_count()])?;
    apply_symplectic(&vac, &SymplecticOp::bogoliubov(graph)?)
}

/// `var(Y_i − Σ_j A_ij X_j)` for every node of `state`.
pub fn nullifier_variances(state: &GaussianState, graph: &ClusterGraph) -> Result<Vec<f64>, CovsimError> {
    let n = graph.node_count();
    if state.mode_count() != n {
        return Err(CovsimError::DimensionMismatch {
            state: state.mode_count(),
            op: n,
        });
    }
    Ok((0..n)
        .map(|i| {
            let mut w = DVector::zeros(2 * n);
            w[n + i] = 1.0;
            for j in 0..n {
                w[j] -= graph.weights()[(i, j)];
            }
            state.variance_of(&w)
        })
        .collect())
}

/// Result of one simulated run. Vectors follow `quadratures`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationOutcome {
    pub quadratures: Vec<OutputQuadrature>,
    /// Variance of each corrected output over all measurement outcomes.
    pub channel_variances: Vec<f64>,
    /// The same quantity evaluated directly as `var(o − Σ g_k m_k)` on the
    /// state before any measurement.
    pub direct_variances: Vec<f64>,
    /// Conditional variance given the photocurrents, before feedforward.
    pub conditional_variances: Vec<f64>,
    /// Output means after feedforward for the sampled outcomes.
    pub output_means: Vec<f64>,
    /// Mean of the input quadrature each output should reproduce.
    pub input_means: Vec<f64>,
    pub measurements: Vec<(ModeLabel, HomodyneRecord)>,
    #[serde(skip)]
    pub conditional_cov: DMatrix<f64>,
}

/// Runs `scenario` on `graph` with its standard schedule and the symbolic
/// report's feedforward, sampling outcomes from a generator seeded by `seed`.
/// Inputs not listed in `inputs` are vacuum.
pub fn simulate_scenario(
    graph: &ClusterGraph,
    scenario: Scenario,
    s_db: f64,
    inputs: &[(InputTag, GaussianState)],
    seed: u64,
) -> Result<SimulationOutcome, CovsimError> {
    let schedule = phase_schedule(scenario, graph)?;
    let setup = scenario.setup()?;
    let report = run_with_schedule(graph, &setup, &schedule)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_report(graph, &setup.attachments, &report, s_db, inputs, &mut rng)
}

/// Simulates an already computed single-cluster report.
pub fn simulate_report(
    graph: &ClusterGraph,
    attachments: &[(InputTag, usize)],
    report: &TeleportationReport,
    s_db: f64,
    inputs: &[(InputTag, GaussianState)],
    rng: &mut dyn RngCore,
) -> Result<SimulationOutcome, CovsimError> {
    let mut state = cluster_state(graph, s_db)?;
    let mut labels: Vec<ModeLabel> = (1..=graph.node_count()).map(ModeLabel::Node).collect();
    let mut input_means = Vec::new();
    for &(tag, node) in attachments {
        let input = inputs
            .iter()
            .find(|(t, _)| *t == tag)
            .map(|(_, s)| s.clone())
            .unwrap_or_else(|| GaussianState::vacuum(1));
        if input.mode_count() != 1 {
            return Err(CovsimError::DimensionMismatch {
                state: 1,
                op: input.mode_count(),
            });
        }
        input_means.push((tag, input.mean[0], input.mean[1]));
        state = product(&[&state, &input]);
        labels.push(ModeLabel::Input(tag));
        let a = labels.len() - 1;
        let b = position(&labels, ModeLabel::Node(node))?;
        state = apply_symplectic(&state, &SymplecticOp::beam_splitter(labels.len(), a, b)?)?;
        labels[b] = ModeLabel::Partner(tag);
    }

    let dim = state.mean.len();
    let selector = |labels: &[ModeLabel], mode: ModeLabel, theta: f64| -> Result<DVector<f64>, CovsimError> {
        let i = position(labels, mode)?;
        let mut c = DVector::zeros(2 * labels.len());
        c[i] = theta.cos();
        c[labels.len() + i] = theta.sin();
        Ok(c)
    };

    let measured: Vec<(ModeLabel, f64)> = report.measured.iter().map(|m| (m.mode, m.theta)).collect();
    let rows = report.quadratures.len();
    let k = measured.len();
    let mut m_sel = DMatrix::zeros(k, dim);
    for (r, &(mode, theta)) in measured.iter().enumerate() {
        m_sel.set_row(r, &selector(&labels, mode, theta)?.transpose());
    }
    let mut o_sel = DMatrix::zeros(rows, dim);
    let mut gains = DMatrix::zeros(rows, k);
    for (r, q) in report.quadratures.iter().enumerate() {
        let i = position(&labels, ModeLabel::Node(q.node))?;
        o_sel[(
            r,
            if q.quadrature == Quadrature::X {
                i
            } else {
                labels.len() + i
            },
        )] = 1.0;
        for g in &report.feedforward[r] {
            let col = measured
                .iter()
                .position(|&(m, _)| m == g.mode)
                .ok_or(CovsimError::MissingMode(g.mode))?;
            gains[(r, col)] = g.gain;
        }
    }

    // Route 1: corrected output as a single linear functional.
    let corrected = &o_sel - &gains * &m_sel;
    let direct_variances: Vec<f64> = (0..rows)
        .map(|r| state.variance_of(&corrected.row(r).transpose()))
        .collect();

    // Route 2: sequential conditioning, then feedforward.
    let sigma_mm = symmetrize(&(&m_sel * &state.cov * m_sel.transpose()));
    let sigma_om = &o_sel * &state.cov * m_sel.transpose();
    let regression = if k == 0 {
        DMatrix::zeros(rows, 0)
    } else {
        let inv = sigma_mm
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .or_else(|| sigma_mm.clone().pseudo_inverse(1e-14).ok())
            .ok_or(CovsimError::Eigen)?;
        &sigma_om * inv
    };
    let mut cur = state;
    let mut cur_labels = labels;
    let mut records = Vec::new();
    for &(mode, theta) in &measured {
        let idx = position(&cur_labels, mode)?;
        let (next, record) = measure_homodyne(&cur, idx, theta, Outcome::Sample(&mut *rng))?;
        cur = next;
        cur_labels.remove(idx);
        records.push((mode, record));
    }
    let outcomes: Vec<f64> = records.iter().map(|(_, r)| r.outcome).collect();
    let out_idx: Vec<usize> = report
        .quadratures
        .iter()
        .map(|q| {
            position(&cur_labels, ModeLabel::Node(q.node)).map(|i| match q.quadrature {
                Quadrature::X => i,
                Quadrature::Y => cur_labels.len() + i,
            })
        })
        .collect::<Result<_, _>>()?;
    let mut feed = DMatrix::zeros(2 * cur_labels.len(), k);
    for (r, &i) in out_idx.iter().enumerate() {
        for c in 0..k {
            feed[(i, c)] -= gains[(r, c)];
        }
    }
    let corrected_state = displace(&cur, &feed, &outcomes)?;
    let residual = &regression - &gains;
    let spread = &residual * &sigma_mm * residual.transpose();
    let conditional_cov = cur.cov.select_rows(&out_idx).select_columns(&out_idx);
    let conditional_variances: Vec<f64> = (0..rows).map(|r| conditional_cov[(r, r)]).collect();
    let channel_variances = (0..rows).map(|r| conditional_variances[r] + spread[(r, r)]).collect();
    let output_means = out_idx.iter().map(|&i| corrected_state.mean[i]).collect();
    let input_means = report
        .quadratures
        .iter()
        .map(|q| {
            input_means
                .iter()
                .find(|(t, _, _)| *t == q.tag)
                .map_or(0.0, |&(_, x, y)| if q.quadrature == Quadrature::X { x } else { y })
        })
        .collect();
    Ok(SimulationOutcome {
        quadratures: report.quadratures.clone(),
        channel_variances,
        direct_variances,
        conditional_variances,
        output_means,
        input_means,
        measurements: records,
        conditional_cov,
    })
}

fn position(labels: &[ModeLabel], mode: ModeLabel) -> Result<usize, CovsimError> {
    labels
        .iter()
        .position(|&l| l == mode)
        .ok_or(CovsimError::MissingMode(mode))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::variance_from_db;
    use crate::graph::GraphKind;
    use crate::protocol::{run_protocol, ThreeNodeTarget};
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn two() -> ClusterGraph {
        ClusterGraph::canonical(GraphKind::Two)
    }

    #[test]
    fn squeezed_vacuum_variances() {
        let s = squeezed_vacuum(&[0.0]).unwrap();
        assert_eq!(s.cov(), &(DMatrix::identity(2, 2) * 0.25));
        let s = squeezed_vacuum(&[10.0, 10.0]).unwrap();
        assert!((s.cov()[(2, 2)] - 0.025).abs() < 1e-15);
        assert!((s.cov()[(0, 0)] - 2.5).abs() < 1e-12);
        assert!(s.mean().iter().all(|&m| m == 0.0));
        assert!(GaussianState::new(s.mean().clone(), s.cov().clone()).is_ok());
        assert_eq!(squeezed_vacuum(&[f64::NAN]), Err(CovsimError::NonFinite));
    }

    #[test]
    fn state_validation() {
        let bad = DMatrix::identity(2, 2) * 0.2;
        assert!(matches!(
            GaussianState::new(DVector::zeros(2), bad),
            Err(CovsimError::Unphysical { .. }) | Err(CovsimError::ModeUncertainty { .. })
        ));
        let mut asym = DMatrix::identity(2, 2) * 0.3;
        asym[(0, 1)] = 0.01;
        assert!(matches!(
            GaussianState::new(DVector::zeros(2), asym),
            Err(CovsimError::NotSymmetric { .. })
        ));
        assert!(matches!(
            GaussianState::new(DVector::zeros(3), DMatrix::identity(2, 2)),
            Err(CovsimError::MeanLength { .. })
        ));
        // an x-squeezed, y-antisqueezed pure state sits on the boundary
        let mut ok = DMatrix::zeros(2, 2);
        ok[(0, 0)] = 0.025;
        ok[(1, 1)] = 2.5;
        assert!(GaussianState::new(DVector::zeros(2), ok).is_ok());
    }

    #[test]
    fn symplectic_constructors() {
        assert!(SymplecticOp::new(DMatrix::identity(4, 4) * 2.0).is_err());
        let bs = SymplecticOp::beam_splitter(3, 0, 2).unwrap();
        assert!(bs.symplectic_deviation() < 1e-15);
        assert!(SymplecticOp::beam_splitter(2, 1, 1).is_err());
        let g = ClusterGraph::canonical(GraphKind::Twelve);
        let b = SymplecticOp::bogoliubov(&g).unwrap();
        assert!(b.symplectic_deviation() < 1e-12);
        let sum = b.direct_sum(&SymplecticOp::bogoliubov(&two()).unwrap());
        assert_eq!(sum.mode_count(), 14);
        assert!(sum.symplectic_deviation() < 1e-12);
        let composed = sum.then(&SymplecticOp::beam_splitter(14, 3, 12).unwrap()).unwrap();
        assert!(composed.symplectic_deviation() < 1e-9);
        assert!(b.then(&SymplecticOp::identity(2)).is_err());
    }

    #[test]
    fn beam_splitter_keeps_vacuum() {
        let vac = GaussianState::vacuum(2);
        let out = apply_symplectic(&vac, &SymplecticOp::beam_splitter(2, 0, 1).unwrap()).unwrap();
        assert!((out.cov() - vac.cov()).amax() < 1e-15);
        let same = apply_symplectic(&vac, &SymplecticOp::identity(2)).unwrap();
        assert_eq!(same, vac);
    }

    #[test]
    fn product_then_measure_leaves_other_mode() {
        let a = GaussianState::single_mode(1.0, -2.0, 3.0).unwrap();
        let b = GaussianState::vacuum(1);
        let joint = product(&[&b, &a]);
        for theta in [0.0, 0.4, FRAC_PI_2] {
            let (rest, _) = measure_homodyne(&joint, 0, theta, Outcome::Value(0.7)).unwrap();
            assert_eq!(rest, a);
        }
    }

    #[test]
    fn conditioning_on_a_two_node_cluster() {
        let state = cluster_state(&two(), 10.0).unwrap();
        let before = state.cov()[(3, 3)];
        // node 1's x is correlated with node 2's y
        let (after, rec) = measure_homodyne(&state, 0, 0.0, Outcome::Value(0.0)).unwrap();
        assert!(after.cov()[(1, 1)] < before - 1e-6);
        assert!((rec.marginal_variance - state.cov()[(0, 0)]).abs() < 1e-12);
        // node 1's y is uncorrelated with node 2's y
        let (after, _) = measure_homodyne(&state, 0, FRAC_PI_2, Outcome::Value(0.0)).unwrap();
        assert!((after.cov()[(1, 1)] - before).abs() < 1e-12);
    }

    #[test]
    fn conditional_covariance_ignores_outcome() {
        let state = cluster_state(&ClusterGraph::canonical(GraphKind::Twelve), 10.0).unwrap();
        let covs: Vec<_> = [-1.0, 0.0, 3.0]
            .iter()
            .map(|&m| {
                measure_homodyne(&state, 4, 0.3, Outcome::Value(m))
                    .unwrap()
                    .0
                    .cov()
                    .clone()
            })
            .collect();
        assert_eq!(covs[0], covs[1]);
        assert_eq!(covs[1], covs[2]);
    }

    #[test]
    fn degenerate_marginal() {
        let mut cov = DMatrix::zeros(2, 2);
        cov[(0, 0)] = 0.0;
        cov[(1, 1)] = 1.0;
        let state = GaussianState {
            mean: DVector::zeros(2),
            cov,
        };
        assert!(matches!(
            measure_homodyne(&state, 0, 0.0, Outcome::Value(0.0)),
            Err(CovsimError::DegenerateMarginal(_))
        ));
        assert_eq!(
            measure_homodyne(&state, 3, 0.0, Outcome::Value(0.0)),
            Err(CovsimError::UnknownMode(3))
        );
    }

    #[test]
    fn displacement_moves_only_the_mean() {
        let state = cluster_state(&two(), 5.0).unwrap();
        let zero = displace(&state, &DMatrix::zeros(4, 2), &[1.0, 2.0]).unwrap();
        assert_eq!(zero, state);
        let gains = DMatrix::from_row_slice(4, 1, &[1.0, 0.0, -2.0, 0.5]);
        let moved = displace(&state, &gains, &[2.0]).unwrap();
        assert_eq!(moved.cov(), state.cov());
        assert_eq!(moved.mean()[2], -4.0);
        assert!(displace(&state, &gains, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn nullifiers_certify_clusters() {
        for kind in [
            GraphKind::Twelve,
            GraphKind::Three {
                g12: 1.2,
                g13: 0.8,
                g23: 0.3,
            },
            GraphKind::Two,
        ] {
            let g = ClusterGraph::canonical(kind);
            let gram = GramKit::new(&g).unwrap().gram;
            let v = variance_from_db(7.0);
            let state = cluster_state(&g, 7.0).unwrap();
            for (i, var) in nullifier_variances(&state, &g).unwrap().into_iter().enumerate() {
                assert!((var - gram[(i, i)] * v).abs() < 1e-9, "{kind:?} node {i}");
            }
        }
    }

    fn check_against_symbolic(graph: &ClusterGraph, scenario: Scenario, s: f64) {
        let report = run_protocol(graph, scenario).unwrap();
        let sim = simulate_scenario(graph, scenario, s, &[], 7).unwrap();
        let v = variance_from_db(s);
        for (r, coef) in report.variances.iter().enumerate() {
            let want = VACUUM_VARIANCE + coef * v;
            assert!((sim.channel_variances[r] - want).abs() < 1e-6, "{scenario} row {r}");
            assert!((sim.direct_variances[r] - want).abs() < 1e-6, "{scenario} row {r}");
            assert!(sim.conditional_variances[r] <= sim.channel_variances[r] + 1e-12);
        }
    }

    #[test]
    fn reference_examples() {
        let twelve = ClusterGraph::canonical(GraphKind::Twelve);
        let sim = simulate_scenario(&twelve, Scenario::CycleBca, 10.0, &[], 1).unwrap();
        let report = run_protocol(&twelve, Scenario::CycleBca).unwrap();
        for (r, coef) in report.variances.iter().enumerate() {
            assert!((sim.channel_variances[r] - (0.25 + coef * 0.025)).abs() < 1e-9);
        }
        let three = ClusterGraph::canonical(GraphKind::Three {
            g12: 1.0,
            g13: 1.0,
            g23: 0.0,
        });
        let sim = simulate_scenario(&three, Scenario::SingleHop3(ThreeNodeTarget::A3), 10.0, &[], 1).unwrap();
        assert!((sim.channel_variances[0] - (0.25 + 3.0 * 0.025)).abs() < 1e-9);
        assert!((sim.channel_variances[1] - (0.25 + 2.0 * 0.025)).abs() < 1e-9);
        let sim = simulate_scenario(&twelve, Scenario::CycleCab, 60.0, &[], 1).unwrap();
        assert!(sim.channel_variances.iter().all(|v| (v - 0.25).abs() < 1e-4));
    }

    #[test]
    fn every_scenario_agrees_with_symbolic_engine() {
        let twelve = ClusterGraph::canonical(GraphKind::Twelve);
        let three = ClusterGraph::canonical(GraphKind::Three {
            g12: 1.3,
            g13: 0.7,
            g23: 0.4,
        });
        let pair = two();
        for scenario in Scenario::all() {
            let g = match scenario.required_nodes() {
                12 => &twelve,
                3 => &three,
                _ => &pair,
            };
            check_against_symbolic(g, scenario, 8.0);
        }
    }

    #[test]
    fn feedforward_restores_input_mean() {
        let twelve = ClusterGraph::canonical(GraphKind::Twelve);
        let inputs = [
            (InputTag::A, GaussianState::single_mode(1.5, -0.5, 0.0).unwrap()),
            (InputTag::B, GaussianState::single_mode(-2.0, 0.25, 0.0).unwrap()),
            (InputTag::C, GaussianState::single_mode(0.0, 3.0, 0.0).unwrap()),
        ];
        let runs = 200;
        let mut sums = [0.0; 6];
        let mut last = None;
        for seed in 0..runs {
            let sim = simulate_scenario(&twelve, Scenario::CycleBca, 6.0, &inputs, seed).unwrap();
            for (acc, m) in sums.iter_mut().zip(&sim.output_means) {
                *acc += m;
            }
            last = Some(sim);
        }
        let sim = last.unwrap();
        for (r, sum) in sums.iter().enumerate() {
            let mean = sum / runs as f64;
            let sigma = sim.channel_variances[r].sqrt();
            assert!(
                (mean - sim.input_means[r]).abs() < 3.0 * sigma / (runs as f64).sqrt(),
                "row {r}: {mean} vs {}",
                sim.input_means[r]
            );
        }
    }

    #[test]
    fn outcome_sets_do_not_change_variances() {
        let twelve = ClusterGraph::canonical(GraphKind::Twelve);
        let base = simulate_scenario(&twelve, Scenario::MergeToCharlie, 4.0, &[], 0).unwrap();
        for seed in 1..20 {
            let sim = simulate_scenario(&twelve, Scenario::MergeToCharlie, 4.0, &[], seed).unwrap();
            assert_eq!(sim.conditional_cov, base.conditional_cov);
            assert_eq!(sim.channel_variances, base.channel_variances);
            assert_ne!(sim.measurements[0].1.outcome, base.measurements[0].1.outcome);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn random_compositions_stay_symplectic(
            weights in proptest::collection::vec(-2.0f64..2.0, 3),
            pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..6),
        ) {
            let g = ClusterGraph::from_rows(&[
                vec![0.0, weights[0], weights[1]],
                vec![weights[0], 0.0, weights[2]],
                vec![weights[1], weights[2], 0.0],
            ]).unwrap();
            let mut op = SymplecticOp::bogoliubov(&g).unwrap().direct_sum(&SymplecticOp::identity(1));
            for (a, b) in pairs {
                if a != b {
                    op = op.then(&SymplecticOp::beam_splitter(4, a, b).unwrap()).unwrap();
                }
            }
            prop_assert!(op.symplectic_deviation() < SYMPLECTIC_TOL);
            let state = apply_symplectic(&squeezed_vacuum(&[5.0; 4]).unwrap(), &op).unwrap();
            prop_assert!(GaussianState::new(state.mean().clone(), state.cov().clone()).is_ok());
        }

        #[test]
        fn homodyne_outcome_independence(theta in 0.0f64..6.3, m1 in -5.0f64..5.0, m2 in -5.0f64..5.0) {
            let state = cluster_state(&ClusterGraph::canonical(GraphKind::Three { g12: 1.0, g13: 1.0, g23: 0.5 }), 6.0).unwrap();
            let (a, _) = measure_homodyne(&state, 1, theta, Outcome::Value(m1)).unwrap();
            let (b, _) = measure_homodyne(&state, 1, theta, Outcome::Value(m2)).unwrap();
            prop_assert_eq!(a.cov(), b.cov());
        }
    }
}
