//! Teleportation scenarios, their homodyne phase schedules, and end-to-end
//! symbolic runs producing routing, feedforward gains, error matrices and
//! error-variance coefficients.

use std::collections::BTreeSet;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::graph::{matrix_rows, ClusterGraph, GramKit, GraphError, STRUCTURAL_TOL};
use crate::symbolic::{classify_output, Classification, InputTag, ModeLabel, ModeSystem, Quadrature, SymbolicError};

/// Upper bound on schedules visited by [`find_phase_schedule`].
pub const MAX_SEARCH_SCHEDULES: u128 = 5_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("scenario {scenario} needs a {expected}-node graph, got {found} nodes")]
    IncompatibleGraph {
        scenario: String,
        expected: usize,
        found: usize,
    },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("mode {0} appears twice in the phase schedule")]
    DuplicateMode(ModeLabel),
    #[error("output node {0} cannot be measured")]
    OutputMeasured(usize),
    #[error("protocol broken: {0}")]
    ProtocolBroken(String),
    #[error("error matrix has {found} columns, graph has {expected} nodes")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("no candidate phase schedule teleports every output")]
    NotFound,
    #[error("schedule search would visit {0} schedules")]
    SearchTooLarge(u128),
    #[error("resource label {0} appears in more than one report")]
    LabelCollision(ResourceLabel),
    #[error("cannot compose an empty list of reports")]
    EmptyComposite,
    #[error(transparent)]
    Symbolic(#[from] SymbolicError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Participant {
    Alice,
    Bob,
    Charlie,
}

impl Participant {
    pub fn tag(self) -> InputTag {
        match self {
            Participant::Alice => InputTag::A,
            Participant::Bob => InputTag::B,
            Participant::Charlie => InputTag::C,
        }
    }

    fn from_char(c: char) -> Option<Self> {
        match c.to_ascii_lowercase() {
            'a' => Some(Participant::Alice),
            'b' => Some(Participant::Bob),
            'c' => Some(Participant::Charlie),
            _ => None,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Output node of the three-node single-hop protocol (input enters node 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ThreeNodeTarget {
    A2,
    A3,
}

impl ThreeNodeTarget {
    pub fn node(self) -> usize {
        match self {
            ThreeNodeTarget::A2 => 2,
            ThreeNodeTarget::A3 => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    /// Bob → Alice, Alice → Charlie, Charlie → Bob on the twelve-node graph.
    CycleBca,
    /// Alice → Bob, Bob → Charlie, Charlie → Alice on the twelve-node graph.
    CycleCab,
    /// Exchange between two participants on the twelve-node graph.
    Pairwise(Participant, Participant),
    /// Alice and Bob both send to Charlie on the twelve-node graph.
    MergeToCharlie,
    /// Single hop on the weighted three-node graph.
    SingleHop3(ThreeNodeTarget),
    /// One-directional teleportation on the two-node graph.
    OneDirectional2,
}

impl Scenario {
    pub fn required_nodes(&self) -> usize {
        match self {
            Scenario::CycleBca | Scenario::CycleCab | Scenario::Pairwise(..) | Scenario::MergeToCharlie => 12,
            Scenario::SingleHop3(_) => 3,
            Scenario::OneDirectional2 => 2,
        }
    }

    pub fn all() -> Vec<Scenario> {
        use Participant::*;
        vec![
            Scenario::CycleBca,
            Scenario::CycleCab,
            Scenario::Pairwise(Alice, Bob),
            Scenario::Pairwise(Bob, Charlie),
            Scenario::Pairwise(Charlie, Alice),
            Scenario::MergeToCharlie,
            Scenario::SingleHop3(ThreeNodeTarget::A2),
            Scenario::SingleHop3(ThreeNodeTarget::A3),
            Scenario::OneDirectional2,
        ]
    }

    /// Input attachments and ordered output nodes.
    pub fn setup(&self) -> Result<ProtocolSetup, ProtocolError> {
        use InputTag as T;
        let setup = match self {
            Scenario::CycleBca => ProtocolSetup::new(&[(T::A, 1), (T::B, 2), (T::C, 3)], &[8, 9, 10]),
            Scenario::CycleCab => ProtocolSetup::new(&[(T::A, 1), (T::B, 2), (T::C, 3)], &[11, 12, 4]),
            Scenario::Pairwise(p, q) => {
                let shift = pair_rotation(*p, *q)?;
                let base = ProtocolSetup::new(&[(T::A, 1), (T::B, 2)], &[8, 12]);
                ProtocolSetup {
                    attachments: base
                        .attachments
                        .iter()
                        .map(|&(t, n)| (rotate_tag(t, shift), rotate_node(n, shift)))
                        .collect(),
                    outputs: base.outputs.iter().map(|&n| rotate_node(n, shift)).collect(),
                }
            }
            Scenario::MergeToCharlie => ProtocolSetup::new(&[(T::A, 1), (T::B, 2)], &[10, 4]),
            Scenario::SingleHop3(target) => ProtocolSetup::new(&[(T::A, 1)], &[target.node()]),
            Scenario::OneDirectional2 => ProtocolSetup::new(&[(T::A, 1)], &[2]),
        };
        Ok(setup)
    }

    fn check_graph(&self, graph: &ClusterGraph) -> Result<(), ProtocolError> {
        let expected = self.required_nodes();
        if graph.node_count() != expected {
            return Err(ProtocolError::IncompatibleGraph {
                scenario: self.to_string(),
                expected,
                found: graph.node_count(),
            });
        }
        Ok(())
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::CycleBca => f.write_str("bca"),
            Scenario::CycleCab => f.write_str("cab"),
            Scenario::Pairwise(p, q) => write!(f, "pairwise:{}{}", p.tag(), q.tag()),
            Scenario::MergeToCharlie => f.write_str("merge"),
            Scenario::SingleHop3(ThreeNodeTarget::A2) => f.write_str("single-hop:a2"),
            Scenario::SingleHop3(ThreeNodeTarget::A3) => f.write_str("single-hop:a3"),
            Scenario::OneDirectional2 => f.write_str("one-directional"),
        }
    }
}

impl FromStr for Scenario {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        let scenario = match lower.as_str() {
            "bca" | "cycle-bca" => Scenario::CycleBca,
            "cab" | "cycle-cab" => Scenario::CycleCab,
            "merge" | "merge-to-charlie" => Scenario::MergeToCharlie,
            "single-hop:a2" | "single-hop-a2" => Scenario::SingleHop3(ThreeNodeTarget::A2),
            "single-hop:a3" | "single-hop-a3" => Scenario::SingleHop3(ThreeNodeTarget::A3),
            "one-directional" | "two" => Scenario::OneDirectional2,
            other => {
                let pair = other
                    .strip_prefix("pairwise:")
                    .or_else(|| other.strip_prefix("pairwise-"))
                    .ok_or_else(|| ProtocolError::InvalidScenario(format!("unknown scenario `{s}`")))?;
                let mut chars = pair.chars();
                let parsed = match (chars.next(), chars.next(), chars.next()) {
                    (Some(p), Some(q), None) => Participant::from_char(p).zip(Participant::from_char(q)),
                    _ => None,
                };
                let (p, q) = parsed.ok_or_else(|| {
                    ProtocolError::InvalidScenario(format!("pairwise needs two of a/b/c, got `{pair}`"))
                })?;
                pair_rotation(p, q)?;
                Scenario::Pairwise(p, q)
            }
        };
        Ok(scenario)
    }
}

/// Cyclic relabelling Alice→Bob→Charlie→Alice is an automorphism of the
/// twelve-node graph; this is its action on node numbers.
const TWELVE_ROTATION: [usize; 12] = [2, 3, 1, 11, 6, 7, 5, 9, 10, 8, 12, 4];

fn rotate_node(node: usize, times: usize) -> usize {
    (0..times).fold(node, |n, _| TWELVE_ROTATION[n - 1])
}

fn rotate_tag(tag: InputTag, times: usize) -> InputTag {
    let tags = [InputTag::A, InputTag::B, InputTag::C];
    let idx = tags.iter().position(|&t| t == tag).expect("participant tag");
    tags[(idx + times) % 3]
}

fn rotate_mode(mode: ModeLabel, times: usize) -> ModeLabel {
    match mode {
        ModeLabel::Node(n) => ModeLabel::Node(rotate_node(n, times)),
        ModeLabel::Input(t) => ModeLabel::Input(rotate_tag(t, times)),
        ModeLabel::Partner(t) => ModeLabel::Partner(rotate_tag(t, times)),
    }
}

/// Number of rotations taking the Alice–Bob exchange to the pair `{p, q}`.
fn pair_rotation(p: Participant, q: Participant) -> Result<usize, ProtocolError> {
    if p == q {
        return Err(ProtocolError::InvalidScenario(
            "pairwise exchange needs two distinct participants".into(),
        ));
    }
    let (lo, hi) = if p.index() < q.index() { (p, q) } else { (q, p) };
    Ok(match (lo, hi) {
        (Participant::Alice, Participant::Bob) => 0,
        (Participant::Bob, Participant::Charlie) => 1,
        _ => 2,
    })
}

/// Which inputs enter which nodes, and which nodes hold the outputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolSetup {
    pub attachments: Vec<(InputTag, usize)>,
    pub outputs: Vec<usize>,
}

impl ProtocolSetup {
    pub fn new(attachments: &[(InputTag, usize)], outputs: &[usize]) -> Self {
        Self {
            attachments: attachments.to_vec(),
            outputs: outputs.to_vec(),
        }
    }

    /// Modes that a full schedule measures: both beam-splitter outputs of
    /// every attachment, then every remaining non-output node.
    pub fn measurable_modes(&self, node_count: usize) -> Vec<ModeLabel> {
        let attached: BTreeSet<usize> = self.attachments.iter().map(|&(_, n)| n).collect();
        let mut modes: Vec<ModeLabel> = self
            .attachments
            .iter()
            .flat_map(|&(t, _)| [ModeLabel::Input(t), ModeLabel::Partner(t)])
            .collect();
        modes.extend(
            (1..=node_count)
                .filter(|n| !attached.contains(n) && !self.outputs.contains(n))
                .map(ModeLabel::Node),
        );
        modes
    }
}

/// Local-oscillator phase per measured mode, in measurement order.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSchedule {
    entries: Vec<(ModeLabel, f64)>,
}

impl PhaseSchedule {
    pub fn new(entries: Vec<(ModeLabel, f64)>) -> Result<Self, ProtocolError> {
        let mut seen = BTreeSet::new();
        for &(mode, _) in &entries {
            if !seen.insert(mode) {
                return Err(ProtocolError::DuplicateMode(mode));
            }
        }
        Ok(Self { entries })
    }

    pub fn get(&self, mode: ModeLabel) -> Option<f64> {
        self.entries.iter().find(|(m, _)| *m == mode).map(|&(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ModeLabel, f64)> + '_ {
        self.entries.iter().copied()
    }

    pub fn modes(&self) -> impl Iterator<Item = ModeLabel> + '_ {
        self.entries.iter().map(|&(m, _)| m)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Copy with additional entries appended.
    pub fn extended(&self, extra: &[(ModeLabel, f64)]) -> Result<Self, ProtocolError> {
        let mut entries = self.entries.clone();
        entries.extend_from_slice(extra);
        Self::new(entries)
    }
}

impl Serialize for PhaseSchedule {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = s.serialize_map(Some(self.entries.len()))?;
        for (mode, theta) in &self.entries {
            map.serialize_entry(&mode.to_string(), theta)?;
        }
        map.end()
    }
}

/// The standard local-oscillator phases for `scenario`.
///
/// For the three-node graph the phases follow the weights:
/// `tan θ_in = −1/g`, `tan θ_1 = 1/g` with `g` the weight between node 1
/// and the target, and the remaining node measured at θ = 0. The two-node
/// schedule is obtained by [`find_phase_schedule`].
pub fn phase_schedule(scenario: Scenario, graph: &ClusterGraph) -> Result<PhaseSchedule, ProtocolError> {
    use InputTag as T;
    use ModeLabel::{Input, Node, Partner};
    scenario.check_graph(graph)?;
    let q = FRAC_PI_4;
    let h = FRAC_PI_2;
    let entries = match scenario {
        Scenario::CycleBca => vec![
            (Input(T::A), 0.0),
            (Input(T::B), 0.0),
            (Input(T::C), 0.0),
            (Partner(T::A), h),
            (Partner(T::B), h),
            (Partner(T::C), h),
            (Node(5), h),
            (Node(6), h),
            (Node(7), h),
            (Node(4), 0.0),
            (Node(11), 0.0),
            (Node(12), 0.0),
        ],
        Scenario::CycleCab => vec![
            (Input(T::A), q),
            (Input(T::B), q),
            (Input(T::C), q),
            (Partner(T::A), 3.0 * q),
            (Partner(T::B), 3.0 * q),
            (Partner(T::C), 3.0 * q),
            (Node(5), h),
            (Node(6), h),
            (Node(7), h),
            (Node(8), h),
            (Node(9), h),
            (Node(10), h),
        ],
        Scenario::Pairwise(p, r) => {
            let shift = pair_rotation(p, r)?;
            [
                (Input(T::A), q),
                (Input(T::B), 0.0),
                (Partner(T::A), 3.0 * q),
                (Partner(T::B), h),
                (Node(5), h),
                (Node(6), h),
                (Node(7), h),
                (Node(10), h),
                (Node(4), 0.0),
            ]
            .into_iter()
            .map(|(m, t)| (rotate_mode(m, shift), t))
            .collect()
        }
        Scenario::MergeToCharlie => vec![
            (Input(T::A), PI),
            (Input(T::B), q),
            (Partner(T::A), h),
            (Node(3), h),
            (Node(5), h),
            (Node(6), h),
            (Node(7), h),
            (Node(8), h),
            (Partner(T::B), 3.0 * q),
            (Node(9), 0.0),
            (Node(11), 0.0),
            (Node(12), 0.0),
        ],
        Scenario::SingleHop3(target) => {
            let (g, other) = match target {
                ThreeNodeTarget::A3 => (graph.weight(1, 3), 2),
                ThreeNodeTarget::A2 => (graph.weight(1, 2), 3),
            };
            vec![
                (Input(T::A), (-1.0f64).atan2(g)),
                (Partner(T::A), 1.0f64.atan2(g)),
                (Node(other), 0.0),
            ]
        }
        Scenario::OneDirectional2 => {
            return find_phase_schedule(graph, &scenario.setup()?, None);
        }
    };
    PhaseSchedule::new(entries)
}

/// A resource quadrature `y_r,node` of cluster `cluster`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ResourceLabel {
    pub cluster: usize,
    pub node: usize,
}

impl fmt::Display for ResourceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}:y_r{}", self.cluster, self.node)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Route {
    pub cluster: usize,
    pub node: usize,
    pub tag: InputTag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OutputQuadrature {
    pub cluster: usize,
    pub node: usize,
    pub quadrature: Quadrature,
    pub tag: InputTag,
}

impl fmt::Display for OutputQuadrature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}<-{}", self.quadrature, self.node, self.tag)
    }
}

/// Coefficient of one photocurrent in an output quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Gain {
    pub cluster: usize,
    pub mode: ModeLabel,
    pub gain: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeasuredMode {
    pub cluster: usize,
    pub mode: ModeLabel,
    pub theta: f64,
}

/// Outcome of a successful symbolic teleportation run.
///
/// Rows of `error_matrix`, entries of `feedforward` and `variances` follow
/// `quadratures`: all X outputs first, then all Y outputs, each in the
/// scenario's output order. Columns of `error_matrix` follow `columns`.
/// Each variance is the coefficient `c` of the added noise `c·⟨δy_s²⟩`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TeleportationReport {
    pub label: String,
    pub routing: Vec<Route>,
    pub quadratures: Vec<OutputQuadrature>,
    pub feedforward: Vec<Vec<Gain>>,
    pub columns: Vec<ResourceLabel>,
    #[serde(serialize_with = "serialize_matrix")]
    pub error_matrix: DMatrix<f64>,
    pub variances: Vec<f64>,
    pub measured: Vec<MeasuredMode>,
}

fn serialize_matrix<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    matrix_rows(m).serialize(s)
}

impl TeleportationReport {
    /// Moves every label of the report into cluster `id`.
    pub fn in_cluster(mut self, id: usize) -> Self {
        self.routing.iter_mut().for_each(|r| r.cluster = id);
        self.quadratures.iter_mut().for_each(|q| q.cluster = id);
        self.feedforward.iter_mut().flatten().for_each(|g| g.cluster = id);
        self.columns.iter_mut().for_each(|c| c.cluster = id);
        self.measured.iter_mut().for_each(|m| m.cluster = id);
        self
    }

    /// Input tag delivered to `node` (cluster 0 or any cluster when unique).
    pub fn routed_tag(&self, node: usize) -> Option<InputTag> {
        self.routing.iter().find(|r| r.node == node).map(|r| r.tag)
    }

    /// Variance coefficient of a given output quadrature.
    pub fn variance_of(&self, node: usize, quadrature: Quadrature) -> Option<f64> {
        self.quadratures
            .iter()
            .position(|q| q.node == node && q.quadrature == quadrature)
            .map(|i| self.variances[i])
    }

    /// Feedforward gains of a given output quadrature.
    pub fn gains_of(&self, node: usize, quadrature: Quadrature) -> Option<&[Gain]> {
        self.quadratures
            .iter()
            .position(|q| q.node == node && q.quadrature == quadrature)
            .map(|i| self.feedforward[i].as_slice())
    }

    pub fn total_variance(&self) -> f64 {
        self.variances.iter().sum()
    }
}

/// `diag(E · (I + A²)⁻¹ · Eᵀ)`: variance coefficients of the error rows when
/// the squeezed oscillators are independent with equal variance.
pub fn error_variances(error_matrix: &DMatrix<f64>, graph: &ClusterGraph) -> Result<Vec<f64>, ProtocolError> {
    let kit = GramKit::new(graph)?;
    error_variances_with(error_matrix, &kit.gram_inverse)
}

/// `diag(E · cov · Eᵀ)` for an explicit `y_r` covariance (in units of ⟨δy_s²⟩).
pub fn error_variances_with(error_matrix: &DMatrix<f64>, cov: &DMatrix<f64>) -> Result<Vec<f64>, ProtocolError> {
    if error_matrix.ncols() != cov.nrows() {
        return Err(ProtocolError::DimensionMismatch {
            expected: cov.nrows(),
            found: error_matrix.ncols(),
        });
    }
    let weighted = error_matrix * cov;
    Ok((0..error_matrix.nrows())
        .map(|r| weighted.row(r).dot(&error_matrix.row(r)).max(0.0))
        .collect())
}

/// Runs `scenario` on `graph` with its standard phase schedule.
pub fn run_protocol(graph: &ClusterGraph, scenario: Scenario) -> Result<TeleportationReport, ProtocolError> {
    let schedule = phase_schedule(scenario, graph)?;
    let mut report = run_with_schedule(graph, &scenario.setup()?, &schedule)?;
    report.label = scenario.to_string();
    Ok(report)
}

/// Runs an arbitrary setup and schedule. Modes absent from the schedule
/// stay unmeasured.
pub fn run_with_schedule(
    graph: &ClusterGraph,
    setup: &ProtocolSetup,
    schedule: &PhaseSchedule,
) -> Result<TeleportationReport, ProtocolError> {
    let attached = attach_all(graph, setup)?;
    let kit = GramKit::new(graph)?;
    run_attached(attached, setup, schedule, &kit.gram_inverse)
}

fn attach_all(graph: &ClusterGraph, setup: &ProtocolSetup) -> Result<ModeSystem, ProtocolError> {
    let mut system = ModeSystem::cluster(graph);
    for &(tag, node) in &setup.attachments {
        system.attach_input(tag, node)?;
    }
    for &out in &setup.outputs {
        if system.mode(ModeLabel::Node(out)).is_none() || out == 0 {
            return Err(SymbolicError::UnknownNode(out).into());
        }
    }
    Ok(system)
}

fn run_attached(
    mut system: ModeSystem,
    setup: &ProtocolSetup,
    schedule: &PhaseSchedule,
    gram_inverse: &DMatrix<f64>,
) -> Result<TeleportationReport, ProtocolError> {
    let n = system.node_count();
    for (mode, theta) in schedule.iter() {
        if let ModeLabel::Node(node) = mode {
            if setup.outputs.contains(&node) {
                return Err(ProtocolError::OutputMeasured(node));
            }
        }
        system.measure(mode, theta)?;
    }
    let substitution = system.solve().map_err(|e| match e {
        SymbolicError::SingularSystem(mode) => {
            ProtocolError::ProtocolBroken(format!("measurement equations are singular at mode {mode}"))
        }
        other => other.into(),
    })?;
    let photocurrent_modes: Vec<ModeLabel> = system.measurements().iter().map(|m| m.mode).collect();

    let mut quadratures = Vec::new();
    let mut feedforward = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut routing = Vec::new();
    for quadrature in [Quadrature::X, Quadrature::Y] {
        for &node in &setup.outputs {
            let mode = system
                .mode(ModeLabel::Node(node))
                .ok_or(SymbolicError::UnknownNode(node))?;
            let term = classify_output(mode.quadrature(quadrature), &substitution);
            let tag = match term.classification {
                Classification::Clean { tag, quadrature: q } if q == quadrature => tag,
                Classification::Clean { tag, quadrature: q } => {
                    return Err(ProtocolError::ProtocolBroken(format!(
                        "{quadrature}{node} carries the {q} quadrature of input {tag}"
                    )))
                }
                Classification::NotTeleporting { reason } => {
                    return Err(ProtocolError::ProtocolBroken(format!("{quadrature}{node}: {reason}")))
                }
            };
            match quadrature {
                Quadrature::X => routing.push(Route { cluster: 0, node, tag }),
                Quadrature::Y => {
                    let routed = routing.iter().find(|r| r.node == node).map(|r| r.tag);
                    if routed != Some(tag) {
                        return Err(ProtocolError::ProtocolBroken(format!(
                            "node {node} receives X from {} but Y from {tag}",
                            routed.map_or("nothing".to_string(), |t| t.to_string())
                        )));
                    }
                }
            }
            quadratures.push(OutputQuadrature {
                cluster: 0,
                node,
                quadrature,
                tag,
            });
            feedforward.push(
                term.gains
                    .iter()
                    .map(|(&k, &gain)| Gain {
                        cluster: 0,
                        mode: photocurrent_modes[k],
                        gain,
                    })
                    .collect(),
            );
            rows.push(term.error_row(n));
        }
    }
    let error_matrix = DMatrix::from_fn(rows.len(), n, |r, c| rows[r][c]);
    let variances = error_variances_with(&error_matrix, gram_inverse)?;
    Ok(TeleportationReport {
        label: String::new(),
        routing,
        quadratures,
        feedforward,
        columns: (1..=n).map(|node| ResourceLabel { cluster: 0, node }).collect(),
        error_matrix,
        variances,
        measured: schedule
            .iter()
            .map(|(mode, theta)| MeasuredMode {
                cluster: 0,
                mode,
                theta,
            })
            .collect(),
    })
}

/// Default search phases: multiples of π/4 plus `±arctan(w)` and
/// `±arctan(1/w)` for every distinct nonzero weight `w`, reduced to
/// `[0, 2π)` and deduplicated in first-seen order.
pub fn default_candidates(graph: &ClusterGraph) -> Vec<f64> {
    let mut raw: Vec<f64> = (0..8).map(|k| k as f64 * FRAC_PI_4).collect();
    for w in graph.edge_weights() {
        let t = w.atan();
        let c = (1.0 / w).atan();
        raw.extend([t, -t, c, -c]);
    }
    let mut out: Vec<f64> = Vec::new();
    for theta in raw {
        let reduced = theta.rem_euclid(TAU);
        let reduced = if (TAU - reduced).abs() < 1e-12 { 0.0 } else { reduced };
        if !out.iter().any(|&o| (o - reduced).abs() < 1e-12) {
            out.push(reduced);
        }
    }
    out
}

/// Exhaustive schedule search over `candidates` (default:
/// [`default_candidates`]) for the modes of
/// [`ProtocolSetup::measurable_modes`].
///
/// Schedules are visited in lexicographic order of candidate indices, the
/// first measured mode being the most significant. Returns the first
/// schedule whose run succeeds with minimal total variance.
pub fn find_phase_schedule(
    graph: &ClusterGraph,
    setup: &ProtocolSetup,
    candidates: Option<&[f64]>,
) -> Result<PhaseSchedule, ProtocolError> {
    let owned;
    let candidates = match candidates {
        Some(c) => c,
        None => {
            owned = default_candidates(graph);
            &owned
        }
    };
    let modes = setup.measurable_modes(graph.node_count());
    if candidates.is_empty() {
        return Err(ProtocolError::NotFound);
    }
    let total = (candidates.len() as u128)
        .checked_pow(modes.len() as u32)
        .unwrap_or(u128::MAX);
    if total > MAX_SEARCH_SCHEDULES {
        return Err(ProtocolError::SearchTooLarge(total));
    }
    let attached = attach_all(graph, setup)?;
    let gram_inverse = GramKit::new(graph)?.gram_inverse;

    let mut best: Option<(f64, PhaseSchedule)> = None;
    let mut digits = vec![0usize; modes.len()];
    loop {
        let schedule = PhaseSchedule::new(modes.iter().zip(&digits).map(|(&m, &d)| (m, candidates[d])).collect())?;
        if let Ok(report) = run_attached(attached.clone(), setup, &schedule, &gram_inverse) {
            let total = report.total_variance();
            if best.as_ref().is_none_or(|(b, _)| total < b - STRUCTURAL_TOL) {
                best = Some((total, schedule));
            }
        }
        // odometer increment, last mode fastest
        let mut pos = digits.len();
        loop {
            if pos == 0 {
                return best.map(|(_, s)| s).ok_or(ProtocolError::NotFound);
            }
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] < candidates.len() {
                break;
            }
            digits[pos] = 0;
        }
    }
}

/// Concatenates independent reports: X rows of every report first, then Y
/// rows, with a block-diagonal error matrix over the union of resource
/// labels.
pub fn composite_report(reports: &[TeleportationReport]) -> Result<TeleportationReport, ProtocolError> {
    let first = reports.first().ok_or(ProtocolError::EmptyComposite)?;
    if reports.len() == 1 {
        return Ok(first.clone());
    }
    let mut columns = Vec::new();
    let mut seen = BTreeSet::new();
    for r in reports {
        for &c in &r.columns {
            if !seen.insert(c) {
                return Err(ProtocolError::LabelCollision(c));
            }
            columns.push(c);
        }
    }
    // (report index, row index) in composite order
    let mut order = Vec::new();
    for quadrature in [Quadrature::X, Quadrature::Y] {
        for (ri, r) in reports.iter().enumerate() {
            for (row, q) in r.quadratures.iter().enumerate() {
                if q.quadrature == quadrature {
                    order.push((ri, row));
                }
            }
        }
    }
    let offsets: Vec<usize> = reports
        .iter()
        .scan(0, |acc, r| {
            let off = *acc;
            *acc += r.columns.len();
            Some(off)
        })
        .collect();
    let mut error_matrix = DMatrix::zeros(order.len(), columns.len());
    for (out_row, &(ri, row)) in order.iter().enumerate() {
        let src = &reports[ri].error_matrix;
        for c in 0..src.ncols() {
            error_matrix[(out_row, offsets[ri] + c)] = src[(row, c)];
        }
    }
    Ok(TeleportationReport {
        label: reports.iter().map(|r| r.label.as_str()).collect::<Vec<_>>().join("+"),
        routing: reports.iter().flat_map(|r| r.routing.iter().copied()).collect(),
        quadratures: order.iter().map(|&(ri, row)| reports[ri].quadratures[row]).collect(),
        feedforward: order
            .iter()
            .map(|&(ri, row)| reports[ri].feedforward[row].clone())
            .collect(),
        columns,
        error_matrix,
        variances: order.iter().map(|&(ri, row)| reports[ri].variances[row]).collect(),
        measured: reports.iter().flat_map(|r| r.measured.iter().copied()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphKind;
    use proptest::prelude::*;
    use std::f64::consts::SQRT_2;

    fn twelve() -> ClusterGraph {
        ClusterGraph::canonical(GraphKind::Twelve)
    }

    fn three(g12: f64, g13: f64, g23: f64) -> ClusterGraph {
        ClusterGraph::canonical(GraphKind::Three { g12, g13, g23 })
    }

    fn assert_close(got: &[f64], want: &[f64], tol: f64) {
        assert_eq!(got.len(), want.len(), "{got:?} vs {want:?}");
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < tol, "{got:?} vs {want:?}");
        }
    }

    #[test]
    fn rotation_is_a_graph_automorphism() {
        let g = twelve();
        for i in 1..=12 {
            for j in 1..=12 {
                assert_eq!(g.weight(i, j), g.weight(rotate_node(i, 1), rotate_node(j, 1)));
            }
            assert_eq!(rotate_node(i, 3), i);
        }
    }

    #[test]
    fn bca_schedule_matches_reference_phases() {
        let s = phase_schedule(Scenario::CycleBca, &twelve()).unwrap();
        assert_eq!(s.len(), 12);
        assert_eq!(s.get(ModeLabel::Input(InputTag::B)), Some(0.0));
        assert_eq!(s.get(ModeLabel::Partner(InputTag::C)), Some(FRAC_PI_2));
        assert_eq!(s.get(ModeLabel::Node(6)), Some(FRAC_PI_2));
        assert_eq!(s.get(ModeLabel::Node(11)), Some(0.0));
        assert_eq!(s.get(ModeLabel::Node(8)), None);
    }

    #[test]
    fn three_node_schedule_at_unit_weight() {
        let s = phase_schedule(Scenario::SingleHop3(ThreeNodeTarget::A3), &three(1.0, 1.0, 0.0)).unwrap();
        assert!((s.get(ModeLabel::Input(InputTag::A)).unwrap() + FRAC_PI_4).abs() < 1e-15);
        assert!((s.get(ModeLabel::Partner(InputTag::A)).unwrap() - FRAC_PI_4).abs() < 1e-15);
        assert_eq!(s.get(ModeLabel::Node(2)), Some(0.0));
    }

    #[test]
    fn merge_schedule() {
        let s = phase_schedule(Scenario::MergeToCharlie, &twelve()).unwrap();
        assert_eq!(s.get(ModeLabel::Input(InputTag::A)), Some(PI));
        assert_eq!(s.get(ModeLabel::Input(InputTag::B)), Some(FRAC_PI_4));
        for n in [9, 11, 12] {
            assert_eq!(s.get(ModeLabel::Node(n)), Some(0.0));
        }
        assert_eq!(s.get(ModeLabel::Node(3)), Some(FRAC_PI_2));
    }

    #[test]
    fn incompatible_graph() {
        let err = phase_schedule(Scenario::CycleBca, &three(1.0, 1.0, 0.0)).unwrap_err();
        assert!(matches!(
            err,
            ProtocolError::IncompatibleGraph {
                expected: 12,
                found: 3,
                ..
            }
        ));
    }

    #[test]
    fn bca_routing_gains_and_variances() {
        let r = run_protocol(&twelve(), Scenario::CycleBca).unwrap();
        let routes: Vec<(usize, InputTag)> = r.routing.iter().map(|r| (r.node, r.tag)).collect();
        assert_eq!(routes, vec![(8, InputTag::B), (9, InputTag::C), (10, InputTag::A)]);
        let y8 = r.gains_of(8, Quadrature::Y).unwrap();
        let gain = |m: ModeLabel| y8.iter().find(|g| g.mode == m).map_or(0.0, |g| g.gain);
        assert!((gain(ModeLabel::Node(4)) - 1.0).abs() < 1e-9);
        assert!((gain(ModeLabel::Node(6)) + 1.0).abs() < 1e-9);
        assert!((gain(ModeLabel::Node(7)) + 1.0).abs() < 1e-9);
        assert!((gain(ModeLabel::Partner(InputTag::B)) + SQRT_2).abs() < 1e-9);
        assert_eq!(y8.len(), 4);
        // (I+A²)⁻¹ weighting of the reference E rows gives 3 on X, 5 on Y
        assert_close(&r.variances, &[3.0, 3.0, 3.0, 5.0, 5.0, 5.0], 1e-9);
    }

    #[test]
    fn cab_routing_and_variances() {
        let r = run_protocol(&twelve(), Scenario::CycleCab).unwrap();
        let routes: Vec<(usize, InputTag)> = r.routing.iter().map(|r| (r.node, r.tag)).collect();
        assert_eq!(routes, vec![(11, InputTag::C), (12, InputTag::A), (4, InputTag::B)]);
        assert_close(&r.variances, &[5.0, 5.0, 5.0, 3.0, 3.0, 3.0], 1e-9);
        let expected_x11 = [0.0, 0.0, 1.0, 0.0, -1.0, 0.0, -1.0, 0.0, -2.0, 0.0, 0.0, 0.0];
        assert_close(r.error_matrix.row(0).transpose().as_slice(), &expected_x11, 1e-9);
    }

    #[test]
    fn pairwise_and_merge() {
        let r = run_protocol(&twelve(), Scenario::Pairwise(Participant::Alice, Participant::Bob)).unwrap();
        let routes: Vec<(usize, InputTag)> = r.routing.iter().map(|r| (r.node, r.tag)).collect();
        assert_eq!(routes, vec![(8, InputTag::B), (12, InputTag::A)]);
        assert_close(&r.variances, &[3.0, 5.0, 5.0, 3.0], 1e-9);

        let m = run_protocol(&twelve(), Scenario::MergeToCharlie).unwrap();
        let routes: Vec<(usize, InputTag)> = m.routing.iter().map(|r| (r.node, r.tag)).collect();
        assert_eq!(routes, vec![(10, InputTag::A), (4, InputTag::B)]);
        assert_close(&m.variances, &[3.0, 5.0, 5.0, 3.0], 1e-9);
    }

    #[test]
    fn rotated_pairs_keep_the_variance_profile() {
        for (p, q, outs) in [
            (
                Participant::Bob,
                Participant::Charlie,
                [(9, InputTag::C), (4, InputTag::B)],
            ),
            (
                Participant::Charlie,
                Participant::Alice,
                [(10, InputTag::A), (11, InputTag::C)],
            ),
            (
                Participant::Bob,
                Participant::Alice,
                [(8, InputTag::B), (12, InputTag::A)],
            ),
        ] {
            let r = run_protocol(&twelve(), Scenario::Pairwise(p, q)).unwrap();
            let routes: Vec<(usize, InputTag)> = r.routing.iter().map(|r| (r.node, r.tag)).collect();
            assert_eq!(routes, outs.to_vec());
            assert_close(&r.variances, &[3.0, 5.0, 5.0, 3.0], 1e-9);
        }
        assert!(Scenario::Pairwise(Participant::Alice, Participant::Alice)
            .setup()
            .is_err());
    }

    #[test]
    fn pairwise_ignores_extra_measurements() {
        let g = twelve();
        let scenario = Scenario::Pairwise(Participant::Alice, Participant::Bob);
        let base = run_protocol(&g, scenario).unwrap();
        let schedule = phase_schedule(scenario, &g)
            .unwrap()
            .extended(&[
                (ModeLabel::Node(3), FRAC_PI_2),
                (ModeLabel::Node(9), 0.0),
                (ModeLabel::Node(11), 0.0),
            ])
            .unwrap();
        let extra = run_with_schedule(&g, &scenario.setup().unwrap(), &schedule).unwrap();
        assert_eq!(base.routing, extra.routing);
        assert_close(&base.variances, &extra.variances, 1e-9);
        assert!((&base.error_matrix - &extra.error_matrix).amax() < 1e-9);
    }

    #[test]
    fn measuring_an_output_is_rejected() {
        let g = twelve();
        let scenario = Scenario::CycleBca;
        let schedule = phase_schedule(scenario, &g)
            .unwrap()
            .extended(&[(ModeLabel::Node(8), 0.0)])
            .unwrap();
        let err = run_with_schedule(&g, &scenario.setup().unwrap(), &schedule).unwrap_err();
        assert_eq!(err, ProtocolError::OutputMeasured(8));
    }

    #[test]
    fn broken_schedule_is_reported() {
        let g = twelve();
        let setup = Scenario::CycleBca.setup().unwrap();
        let zeros = PhaseSchedule::new(setup.measurable_modes(12).into_iter().map(|m| (m, 0.0)).collect()).unwrap();
        let err = run_with_schedule(&g, &setup, &zeros).unwrap_err();
        assert!(matches!(err, ProtocolError::ProtocolBroken(_)), "{err:?}");
    }

    #[test]
    fn error_variance_edge_cases() {
        let g = twelve();
        let zero = DMatrix::zeros(3, 12);
        assert_eq!(error_variances(&zero, &g).unwrap(), vec![0.0; 3]);
        let bad = DMatrix::zeros(1, 5);
        assert!(matches!(
            error_variances(&bad, &g),
            Err(ProtocolError::DimensionMismatch { expected: 12, found: 5 })
        ));
        // e₁ rows at g = 1: (−3, 0, 0) and (0, 1, 2)
        let e1 = DMatrix::from_row_slice(2, 3, &[-3.0, 0.0, 0.0, 0.0, 1.0, 2.0]);
        assert_close(
            &error_variances(&e1, &three(1.0, 1.0, 0.0)).unwrap(),
            &[3.0, 2.0],
            1e-12,
        );
    }

    #[test]
    fn general_three_node_error_rows() {
        // closed-form error rows for arbitrary weights, target A3
        let (g12, g13, g23) = (1.5, 0.7, 0.4);
        let r = run_protocol(&three(g12, g13, g23), Scenario::SingleHop3(ThreeNodeTarget::A3)).unwrap();
        let x_row = [-1.0 / g13 - g12 * g12 / g13 - g13, -g23, -g12 * g23 / g13];
        let y_row = [g12 * g23, g12 * g13, 1.0 + g13 * g13 + g23 * g23];
        assert_close(r.error_matrix.row(0).transpose().as_slice(), &x_row, 1e-9);
        assert_close(r.error_matrix.row(1).transpose().as_slice(), &y_row, 1e-9);

        let r = run_protocol(&three(g12, g13, g23), Scenario::SingleHop3(ThreeNodeTarget::A2)).unwrap();
        let x_row = [-1.0 / g12 - g13 * g13 / g12 - g12, -g23, -g13 * g23 / g12];
        let y_row = [g13 * g23, g13 * g12, 1.0 + g12 * g12 + g23 * g23];
        // column order is node order, so swap the resource columns 2 and 3
        assert_close(
            r.error_matrix.row(0).transpose().as_slice(),
            &[x_row[0], x_row[2], x_row[1]],
            1e-9,
        );
        assert_close(
            r.error_matrix.row(1).transpose().as_slice(),
            &[y_row[0], y_row[2], y_row[1]],
            1e-9,
        );
    }

    proptest! {
        #[test]
        fn three_node_variance_law(g in 0.3f64..3.0) {
            for target in [ThreeNodeTarget::A2, ThreeNodeTarget::A3] {
                let r = run_protocol(&three(g, g, 0.0), Scenario::SingleHop3(target)).unwrap();
                prop_assert!((r.variances[0] - (2.0 + 1.0 / (g * g))).abs() < 1e-9);
                prop_assert!((r.variances[1] - (1.0 + g * g)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn two_node_search() {
        let g = ClusterGraph::canonical(GraphKind::Two);
        let schedule = find_phase_schedule(&g, &Scenario::OneDirectional2.setup().unwrap(), None).unwrap();
        assert_eq!(schedule.len(), 2);
        let r = run_protocol(&g, Scenario::OneDirectional2).unwrap();
        assert_close(&r.variances, &[2.0, 2.0], 1e-9);
    }

    #[test]
    fn three_node_search_matches_standard_schedule() {
        let g = three(1.0, 1.0, 0.0);
        let setup = Scenario::SingleHop3(ThreeNodeTarget::A3).setup().unwrap();
        let found = find_phase_schedule(&g, &setup, None).unwrap();
        let searched = run_with_schedule(&g, &setup, &found).unwrap();
        let standard = run_protocol(&g, Scenario::SingleHop3(ThreeNodeTarget::A3)).unwrap();
        assert_eq!(searched.routing, standard.routing);
        assert_close(&searched.variances, &standard.variances, 1e-9);
        assert!((&searched.error_matrix - &standard.error_matrix).amax() < 1e-9);
    }

    #[test]
    fn edgeless_graph_has_no_schedule() {
        let g = ClusterGraph::edgeless(2).unwrap();
        let setup = ProtocolSetup::new(&[(InputTag::A, 1)], &[2]);
        assert_eq!(find_phase_schedule(&g, &setup, None), Err(ProtocolError::NotFound));
    }

    #[test]
    fn composites() {
        let g = 1.3;
        let graph = three(g, g, 0.0);
        let reports: Vec<_> = (0..3)
            .map(|k| {
                run_protocol(&graph, Scenario::SingleHop3(ThreeNodeTarget::A3))
                    .unwrap()
                    .in_cluster(k)
            })
            .collect();
        let c = composite_report(&reports).unwrap();
        let (x, y) = (2.0 + 1.0 / (g * g), 1.0 + g * g);
        assert_close(&c.variances, &[x, x, x, y, y, y], 1e-9);
        assert_eq!(c.error_matrix.shape(), (6, 9));
        assert_eq!(c.error_matrix[(4, 4)], reports[1].error_matrix[(1, 1)]);
        assert_eq!(c.error_matrix[(3, 4)], 0.0);

        let two = ClusterGraph::canonical(GraphKind::Two);
        let pairs: Vec<_> = (0..6)
            .map(|k| run_protocol(&two, Scenario::OneDirectional2).unwrap().in_cluster(k))
            .collect();
        assert_close(&composite_report(&pairs).unwrap().variances, &[2.0; 12], 1e-9);

        assert_eq!(composite_report(&reports[..1]).unwrap(), reports[0]);
        assert_eq!(composite_report(&[]), Err(ProtocolError::EmptyComposite));
        let clash = [reports[0].clone(), reports[0].clone()];
        assert!(matches!(
            composite_report(&clash),
            Err(ProtocolError::LabelCollision(_))
        ));
    }

    #[test]
    fn scenario_parsing() {
        for s in Scenario::all() {
            assert_eq!(s.to_string().parse::<Scenario>().unwrap(), s);
        }
        assert!("pairwise:aa".parse::<Scenario>().is_err());
        assert!("nope".parse::<Scenario>().is_err());
    }
}
