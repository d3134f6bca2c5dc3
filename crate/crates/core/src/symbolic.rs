//! Exact-structure linear algebra over quadrature operators.
//!
//! Every quadrature in the protocol is a real linear combination of a small
//! set of basis labels: the input quadratures of each participant, the
//! resource quadratures `x_r,i` / `y_r,i` of the cluster, and the homodyne
//! photocurrents. Measuring a mode adds one linear equation; solving the
//! equations for the anti-squeezed `x_r,i` and substituting into an output
//! quadrature splits it into an input part, a classical (feedforward) part
//! and a residual error over the squeezed `y_r,i`.
//!
//! The local-oscillator amplitude is normalized to one, so a photocurrent
//! label stands for the measured quadrature itself.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::graph::{ClusterGraph, STRUCTURAL_TOL};

/// Coefficients below this magnitude are dropped from expressions.
pub const PRUNE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SymbolicError {
    #[error("node {0} does not exist")]
    UnknownNode(usize),
    #[error("mode {0} is not part of the system")]
    UnknownMode(ModeLabel),
    #[error("node {0} was already measured or consumed by a beam splitter")]
    NodeAlreadyMeasured(usize),
    #[error("input tag `{0}` is already attached")]
    DuplicateInputTag(InputTag),
    #[error("mode {0} was already measured")]
    ModeAlreadyMeasured(ModeLabel),
    #[error("measurement of mode {0} leaves the anti-squeezed quadratures undetermined")]
    SingularSystem(ModeLabel),
}

/// Identifies a participant's input state (`a`, `b`, `c`, ...).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InputTag(char);

impl InputTag {
    pub const A: InputTag = InputTag('a');
    pub const B: InputTag = InputTag('b');
    pub const C: InputTag = InputTag('c');

    pub fn new(tag: char) -> Self {
        Self(tag.to_ascii_lowercase())
    }

    pub fn as_char(self) -> char {
        self.0
    }
}

impl fmt::Display for InputTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Serialize for InputTag {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Quadrature {
    X,
    Y,
}

impl fmt::Display for Quadrature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Quadrature::X => "X",
            Quadrature::Y => "Y",
        })
    }
}

/// A physical mode of the protocol.
///
/// Attaching input `t` to a node with a beam splitter replaces that node by
/// two modes: `Input(t)` carries `(input + node)/√2` and `Partner(t)`
/// carries `(input − node)/√2`. These are the `T_in` and `T_1` modes of the
/// protocol descriptions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModeLabel {
    Node(usize),
    Input(InputTag),
    Partner(InputTag),
}

impl fmt::Display for ModeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModeLabel::Node(i) => write!(f, "{i}"),
            ModeLabel::Input(t) => write!(f, "{}_in", t.0.to_ascii_uppercase()),
            ModeLabel::Partner(t) => write!(f, "{}_1", t.0.to_ascii_uppercase()),
        }
    }
}

impl Serialize for ModeLabel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Symbolic basis of quadrature expressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BasisLabel {
    InputX(InputTag),
    InputY(InputTag),
    /// Anti-squeezed resource quadrature `x_r,i` (1-based node).
    ResX(usize),
    /// Squeezed resource quadrature `y_r,i` (1-based node).
    ResY(usize),
    /// Photocurrent of the k-th measurement (0-based, in measurement order).
    Photocurrent(usize),
}

impl fmt::Display for BasisLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BasisLabel::InputX(t) => write!(f, "x_{t}"),
            BasisLabel::InputY(t) => write!(f, "y_{t}"),
            BasisLabel::ResX(i) => write!(f, "x_r{i}"),
            BasisLabel::ResY(i) => write!(f, "y_r{i}"),
            BasisLabel::Photocurrent(k) => write!(f, "i#{k}"),
        }
    }
}

impl Serialize for BasisLabel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Sparse real linear combination of basis labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuadExpr {
    terms: BTreeMap<BasisLabel, f64>,
}

impl QuadExpr {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn term(label: BasisLabel, coeff: f64) -> Self {
        let mut e = Self::zero();
        e.add_term(label, coeff);
        e
    }

    pub fn coeff(&self, label: BasisLabel) -> f64 {
        self.terms.get(&label).copied().unwrap_or(0.0)
    }

    pub fn add_term(&mut self, label: BasisLabel, coeff: f64) {
        let entry = self.terms.entry(label).or_insert(0.0);
        *entry += coeff;
        if entry.abs() < PRUNE_TOL {
            self.terms.remove(&label);
        }
    }

    /// `self += factor * other`.
    pub fn add_scaled(&mut self, other: &QuadExpr, factor: f64) {
        for (&label, &c) in &other.terms {
            self.add_term(label, factor * c);
        }
    }

    pub fn scaled(&self, factor: f64) -> QuadExpr {
        let mut out = QuadExpr::zero();
        out.add_scaled(self, factor);
        out
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (BasisLabel, f64)> + '_ {
        self.terms.iter().map(|(&l, &c)| (l, c))
    }

    /// Largest absolute coefficient, zero for the empty expression.
    pub fn max_abs(&self) -> f64 {
        self.terms.values().fold(0.0, |m, c| m.max(c.abs()))
    }

    pub fn contains_photocurrent(&self) -> bool {
        self.terms.keys().any(|l| matches!(l, BasisLabel::Photocurrent(_)))
    }
}

impl Add for &QuadExpr {
    type Output = QuadExpr;
    fn add(self, rhs: &QuadExpr) -> QuadExpr {
        let mut out = self.clone();
        out.add_scaled(rhs, 1.0);
        out
    }
}

impl Sub for &QuadExpr {
    type Output = QuadExpr;
    fn sub(self, rhs: &QuadExpr) -> QuadExpr {
        let mut out = self.clone();
        out.add_scaled(rhs, -1.0);
        out
    }
}

impl Mul<f64> for &QuadExpr {
    type Output = QuadExpr;
    fn mul(self, rhs: f64) -> QuadExpr {
        self.scaled(rhs)
    }
}

impl Neg for &QuadExpr {
    type Output = QuadExpr;
    fn neg(self) -> QuadExpr {
        self.scaled(-1.0)
    }
}

impl fmt::Display for QuadExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        for (n, (label, c)) in self.terms.iter().enumerate() {
            match (n, *c < 0.0) {
                (0, true) => f.write_str("-")?,
                (0, false) => {}
                (_, true) => f.write_str(" - ")?,
                (_, false) => f.write_str(" + ")?,
            }
            let mag = c.abs();
            if (mag - 1.0).abs() < PRUNE_TOL {
                write!(f, "{label}")?;
            } else {
                write!(f, "{mag}*{label}")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeState {
    Live,
    /// Node mode replaced by the two outputs of an input beam splitter.
    Consumed,
    Measured,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mode {
    pub label: ModeLabel,
    pub x: QuadExpr,
    pub y: QuadExpr,
    pub state: ModeState,
}

impl Mode {
    pub fn quadrature(&self, q: Quadrature) -> &QuadExpr {
        match q {
            Quadrature::X => &self.x,
            Quadrature::Y => &self.y,
        }
    }
}

/// One homodyne measurement: `cos θ·X + sin θ·Y = i_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub mode: ModeLabel,
    pub theta: f64,
    pub lhs: QuadExpr,
    pub photocurrent: usize,
}

/// Mode expressions plus the measurement equations accumulated so far.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSystem {
    node_count: usize,
    modes: Vec<Mode>,
    measurements: Vec<Measurement>,
    inputs: BTreeSet<InputTag>,
}

impl ModeSystem {
    /// Cluster-mode expressions `X_i = x_r,i − Σ_j A_ij y_r,j`,
    /// `Y_i = y_r,i + Σ_j A_ij x_r,j`.
    pub fn cluster(graph: &ClusterGraph) -> Self {
        let n = graph.node_count();
        let modes = (1..=n)
            .map(|i| {
                let mut x = QuadExpr::term(BasisLabel::ResX(i), 1.0);
                let mut y = QuadExpr::term(BasisLabel::ResY(i), 1.0);
                for (j, w) in graph.neighbours(i) {
                    x.add_term(BasisLabel::ResY(j), -w);
                    y.add_term(BasisLabel::ResX(j), w);
                }
                Mode {
                    label: ModeLabel::Node(i),
                    x,
                    y,
                    state: ModeState::Live,
                }
            })
            .collect();
        Self {
            node_count: n,
            modes,
            measurements: Vec::new(),
            inputs: BTreeSet::new(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn measurements(&self) -> &[Measurement] {
        &self.measurements
    }

    pub fn mode(&self, label: ModeLabel) -> Option<&Mode> {
        self.modes.iter().find(|m| m.label == label)
    }

    fn mode_index(&self, label: ModeLabel) -> Result<usize, SymbolicError> {
        self.modes
            .iter()
            .position(|m| m.label == label)
            .ok_or(SymbolicError::UnknownMode(label))
    }

    /// Mixes input `tag` with cluster `node` on a symmetric beam splitter.
    ///
    /// The node mode is consumed and two new modes are appended:
    /// `Input(tag) = (input + node)/√2` and `Partner(tag) = (input − node)/√2`.
    pub fn attach_input(&mut self, tag: InputTag, node: usize) -> Result<(), SymbolicError> {
        if node == 0 || node > self.node_count {
            return Err(SymbolicError::UnknownNode(node));
        }
        if self.inputs.contains(&tag) {
            return Err(SymbolicError::DuplicateInputTag(tag));
        }
        let idx = self.mode_index(ModeLabel::Node(node))?;
        if self.modes[idx].state != ModeState::Live {
            return Err(SymbolicError::NodeAlreadyMeasured(node));
        }
        let input_x = QuadExpr::term(BasisLabel::InputX(tag), 1.0);
        let input_y = QuadExpr::term(BasisLabel::InputY(tag), 1.0);
        let (sum, diff) = beam_split((&input_x, &input_y), (&self.modes[idx].x, &self.modes[idx].y));
        self.modes[idx].state = ModeState::Consumed;
        self.inputs.insert(tag);
        self.modes.push(Mode {
            label: ModeLabel::Input(tag),
            x: sum.0,
            y: sum.1,
            state: ModeState::Live,
        });
        self.modes.push(Mode {
            label: ModeLabel::Partner(tag),
            x: diff.0,
            y: diff.1,
            state: ModeState::Live,
        });
        Ok(())
    }

    /// Homodyne-measures `mode` at local-oscillator phase `theta`, appending
    /// the equation `cos θ·X + sin θ·Y = i_k`. Returns the photocurrent index k.
    pub fn measure(&mut self, mode: ModeLabel, theta: f64) -> Result<usize, SymbolicError> {
        let idx = self.mode_index(mode)?;
        match self.modes[idx].state {
            ModeState::Live => {}
            ModeState::Measured => return Err(SymbolicError::ModeAlreadyMeasured(mode)),
            ModeState::Consumed => match mode {
                ModeLabel::Node(i) => return Err(SymbolicError::NodeAlreadyMeasured(i)),
                _ => return Err(SymbolicError::ModeAlreadyMeasured(mode)),
            },
        }
        let m = &self.modes[idx];
        let mut lhs = m.x.scaled(theta.cos());
        lhs.add_scaled(&m.y, theta.sin());
        let k = self.measurements.len();
        self.measurements.push(Measurement {
            mode,
            theta,
            lhs,
            photocurrent: k,
        });
        self.modes[idx].state = ModeState::Measured;
        Ok(k)
    }

    /// Solves the measurement equations for the anti-squeezed quadratures.
    ///
    /// Gauss–Jordan elimination over the `ResX` columns, picking the largest
    /// `ResX` coefficient of each equation as its pivot. An equation whose
    /// `ResX` part vanishes after elimination makes the system singular.
    /// `ResX` labels that never become pivots stay free and may remain in
    /// substituted expressions.
    pub fn solve(&self) -> Result<SubstitutionMap, SymbolicError> {
        let mut rows: Vec<QuadExpr> = self
            .measurements
            .iter()
            .map(|m| {
                let mut r = m.lhs.clone();
                r.add_term(BasisLabel::Photocurrent(m.photocurrent), -1.0);
                r
            })
            .collect();
        let mut pivots: Vec<(usize, usize)> = Vec::with_capacity(rows.len());
        for r in 0..rows.len() {
            let pivot = rows[r]
                .iter()
                .filter_map(|(l, c)| match l {
                    BasisLabel::ResX(i) => Some((i, c)),
                    _ => None,
                })
                .fold(None::<(usize, f64)>, |best, (i, c)| match best {
                    Some((_, bc)) if bc.abs() >= c.abs() => best,
                    _ => Some((i, c)),
                });
            let (col, coeff) = match pivot {
                Some((i, c)) if c.abs() >= STRUCTURAL_TOL => (i, c),
                _ => return Err(SymbolicError::SingularSystem(self.measurements[r].mode)),
            };
            let normalized = rows[r].scaled(1.0 / coeff);
            for (other, row) in rows.iter_mut().enumerate() {
                if other == r {
                    continue;
                }
                let c = row.coeff(BasisLabel::ResX(col));
                if c != 0.0 {
                    row.add_scaled(&normalized, -c);
                    // exact cancellation of the pivot column
                    row.terms.remove(&BasisLabel::ResX(col));
                }
            }
            rows[r] = normalized;
            rows[r].terms.insert(BasisLabel::ResX(col), 1.0);
            pivots.push((r, col));
        }
        let map = pivots
            .into_iter()
            .map(|(r, col)| {
                let mut rest = rows[r].clone();
                rest.terms.remove(&BasisLabel::ResX(col));
                (col, rest.scaled(-1.0))
            })
            .collect();
        Ok(SubstitutionMap { map })
    }
}

type Pair<'a> = (&'a QuadExpr, &'a QuadExpr);

fn beam_split(first: Pair<'_>, second: Pair<'_>) -> ((QuadExpr, QuadExpr), (QuadExpr, QuadExpr)) {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let mix = |a: &QuadExpr, b: &QuadExpr, sign: f64| {
        let mut out = a.scaled(r);
        out.add_scaled(b, sign * r);
        out
    };
    (
        (mix(first.0, second.0, 1.0), mix(first.1, second.1, 1.0)),
        (mix(first.0, second.0, -1.0), mix(first.1, second.1, -1.0)),
    )
}

/// Solution `x_r,i ↦ expression` of the measurement equations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SubstitutionMap {
    map: BTreeMap<usize, QuadExpr>,
}

impl SubstitutionMap {
    pub fn get(&self, node: usize) -> Option<&QuadExpr> {
        self.map.get(&node)
    }

    pub fn solved_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.map.keys().copied()
    }

    pub fn apply(&self, expr: &QuadExpr) -> QuadExpr {
        let mut out = expr.clone();
        for (label, c) in expr.iter() {
            if let BasisLabel::ResX(i) = label {
                if let Some(sol) = self.map.get(&i) {
                    out.terms.remove(&label);
                    out.add_scaled(sol, c);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Classification {
    Clean { tag: InputTag, quadrature: Quadrature },
    NotTeleporting { reason: String },
}

/// Decomposition of a substituted output quadrature.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TeleportationTerm {
    pub classification: Classification,
    /// Input labels with their coefficients.
    pub inputs: Vec<(BasisLabel, f64)>,
    /// Feedforward gain per photocurrent index.
    pub gains: BTreeMap<usize, f64>,
    /// Error coefficient per 1-based node (`y_r,i`).
    pub error: BTreeMap<usize, f64>,
    /// Anti-squeezed labels left after substitution.
    pub residual: BTreeMap<usize, f64>,
}

impl TeleportationTerm {
    pub fn is_clean(&self) -> bool {
        matches!(self.classification, Classification::Clean { .. })
    }

    /// Dense error row over nodes `1..=n`.
    pub fn error_row(&self, n: usize) -> Vec<f64> {
        (1..=n).map(|i| self.error.get(&i).copied().unwrap_or(0.0)).collect()
    }
}

/// Substitutes the measurement solution into `expr` and splits the result
/// into input, feedforward and error parts.
pub fn classify_output(expr: &QuadExpr, substitution: &SubstitutionMap) -> TeleportationTerm {
    let resolved = substitution.apply(expr);
    let mut inputs = Vec::new();
    let mut gains = BTreeMap::new();
    let mut error = BTreeMap::new();
    let mut residual = BTreeMap::new();
    for (label, c) in resolved.iter() {
        match label {
            BasisLabel::InputX(_) | BasisLabel::InputY(_) => inputs.push((label, c)),
            BasisLabel::Photocurrent(k) => {
                gains.insert(k, c);
            }
            BasisLabel::ResY(i) => {
                error.insert(i, c);
            }
            BasisLabel::ResX(i) => {
                residual.insert(i, c);
            }
        }
    }
    let classification = classify(&inputs, &residual);
    TeleportationTerm {
        classification,
        inputs,
        gains,
        error,
        residual,
    }
}

fn classify(inputs: &[(BasisLabel, f64)], residual: &BTreeMap<usize, f64>) -> Classification {
    if !residual.is_empty() {
        let nodes: Vec<String> = residual.keys().map(|i| format!("x_r{i}")).collect();
        return Classification::NotTeleporting {
            reason: format!("anti-squeezed quadratures remain: {}", nodes.join(", ")),
        };
    }
    match inputs {
        [] => Classification::NotTeleporting {
            reason: "no input quadrature present".into(),
        },
        [(label, c)] => {
            let (tag, quadrature) = match *label {
                BasisLabel::InputX(t) => (t, Quadrature::X),
                BasisLabel::InputY(t) => (t, Quadrature::Y),
                _ => unreachable!("inputs only hold input labels"),
            };
            if (c - 1.0).abs() < STRUCTURAL_TOL {
                Classification::Clean { tag, quadrature }
            } else if (c + 1.0).abs() < STRUCTURAL_TOL {
                Classification::NotTeleporting {
                    reason: format!("{label} arrives with coefficient -1 (needs an extra π phase)"),
                }
            } else {
                Classification::NotTeleporting {
                    reason: format!("{label} arrives with coefficient {c}"),
                }
            }
        }
        _ => {
            let labels: Vec<String> = inputs.iter().map(|(l, c)| format!("{c}*{l}")).collect();
            Classification::NotTeleporting {
                reason: format!("several input quadratures mix: {}", labels.join(", ")),
            }
        }
    }
}
