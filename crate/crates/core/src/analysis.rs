//! Failure probability of the protocol after GKP-type correction, squeezing
//! units, weight optimization and the comparison of cluster layouts.

use serde::Serialize;
use thiserror::Error;

use crate::protocol::TeleportationReport;
use crate::symbolic::Quadrature;

/// `(√5 + 1)/2`, offset of the x-error term.
pub const X_OFFSET: f64 = 1.618_033_988_749_895;
/// `√5 + 1`, offset of the y-error term.
pub const Y_OFFSET: f64 = 3.236_067_977_499_79;

/// Error-variance pair of the twelve-node cycle (x, y).
pub const TWELVE_NODE_PAIR: (f64, f64) = (5.0, 3.0);
/// Error-variance pair of a two-node cluster.
pub const TWO_NODE_PAIR: (f64, f64) = (2.0, 2.0);

pub const WEIGHT_RANGE: (f64, f64) = (0.2, 5.0);
pub const WEIGHT_TOL: f64 = 1e-4;
pub const OPTIMIZE_S_RANGE: (f64, f64) = (1.0, 20.0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),
    #[error("value is not finite")]
    NonFinite,
    #[error("error profile is empty")]
    EmptyProfile,
    #[error("error coefficient {0} is negative")]
    NegativeCoefficient(f64),
    #[error("squeezing {0} dB is outside [{min}, {max}]", min = OPTIMIZE_S_RANGE.0, max = OPTIMIZE_S_RANGE.1)]
    SqueezingOutOfRange(f64),
    #[error("invalid sweep range: min {min}, max {max}, step {step}")]
    InvalidRange { min: f64, max: f64, step: f64 },
    #[error("report has no Y row for output node {0}")]
    UnpairedOutput(usize),
}

/// `⟨δy_s²⟩ = 10^(−s/10)/4`.
pub fn variance_from_db(s: f64) -> f64 {
    10f64.powf(-s / 10.0) / 4.0
}

/// `s = −10·log₁₀(4v)`.
pub fn db_from_variance(v: f64) -> Result<f64, AnalysisError> {
    if !v.is_finite() {
        return Err(AnalysisError::NonFinite);
    }
    if v <= 0.0 {
        return Err(AnalysisError::NonPositiveVariance(v));
    }
    Ok(-10.0 * (4.0 * v).log10())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SqueezingLevel {
    pub s_db: f64,
    pub variance: f64,
}

impl SqueezingLevel {
    pub fn from_db(s_db: f64) -> Result<Self, AnalysisError> {
        if !s_db.is_finite() {
            return Err(AnalysisError::NonFinite);
        }
        Ok(Self {
            s_db,
            variance: variance_from_db(s_db),
        })
    }

    pub fn from_variance(variance: f64) -> Result<Self, AnalysisError> {
        Ok(Self {
            s_db: db_from_variance(variance)?,
            variance,
        })
    }
}

/// `(x_er, y_er)` coefficient pairs, one per teleported state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorProfile {
    pairs: Vec<(f64, f64)>,
}

impl ErrorProfile {
    pub fn new(pairs: Vec<(f64, f64)>) -> Result<Self, AnalysisError> {
        if pairs.is_empty() {
            return Err(AnalysisError::EmptyProfile);
        }
        for &(x, y) in &pairs {
            for c in [x, y] {
                if !c.is_finite() {
                    return Err(AnalysisError::NonFinite);
                }
                if c < 0.0 {
                    return Err(AnalysisError::NegativeCoefficient(c));
                }
            }
        }
        Ok(Self { pairs })
    }

    pub fn uniform(pair: (f64, f64), count: usize) -> Result<Self, AnalysisError> {
        Self::new(vec![pair; count])
    }

    /// Three independent three-node clusters with `g12 = g13 = g`, `g23 = 0`.
    pub fn three_node(g: f64) -> Result<Self, AnalysisError> {
        Self::uniform(three_node_pair(g), 3)
    }

    /// One pair per output node, in the report's output order.
    pub fn from_report(report: &TeleportationReport) -> Result<Self, AnalysisError> {
        let mut pairs = Vec::new();
        for (i, q) in report.quadratures.iter().enumerate() {
            if q.quadrature != Quadrature::X {
                continue;
            }
            let y = report
                .quadratures
                .iter()
                .position(|o| o.cluster == q.cluster && o.node == q.node && o.quadrature == Quadrature::Y)
                .ok_or(AnalysisError::UnpairedOutput(q.node))?;
            pairs.push((report.variances[i], report.variances[y]));
        }
        Self::new(pairs)
    }

    pub fn pairs(&self) -> &[(f64, f64)] {
        &self.pairs
    }
}

/// `(2 + 1/g², 1 + g²)`.
pub fn three_node_pair(g: f64) -> (f64, f64) {
    (2.0 + 1.0 / (g * g), 1.0 + g * g)
}

/// Probability that at least one quadrature correction fails:
/// `1 − Π erf(√π / (2√2·√(v(x + φ)))) · erf(√π / (2√2·√(v(y + 2φ))))`,
/// clamped to `[0, 1]`.
pub fn protocol_error_probability(profile: &ErrorProfile, level: SqueezingLevel) -> f64 {
    let v = level.variance;
    let scale = std::f64::consts::PI.sqrt() / (2.0 * std::f64::consts::SQRT_2);
    let success: f64 = profile
        .pairs
        .iter()
        .map(|&(x, y)| libm::erf(scale / (v * (x + X_OFFSET)).sqrt()) * libm::erf(scale / (v * (y + Y_OFFSET)).sqrt()))
        .product();
    (1.0 - success).clamp(0.0, 1.0)
}

fn three_node_objective(g: f64, level: SqueezingLevel) -> f64 {
    let profile = ErrorProfile::three_node(g).expect("three-node pair is finite and positive");
    protocol_error_probability(&profile, level)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightOptimum {
    pub s_db: f64,
    pub g: f64,
    pub probability: f64,
    /// False when the golden-section bracket check failed and a grid scan
    /// was used instead.
    pub bracketed: bool,
}

/// Weight `g` minimizing the failure probability of three three-node
/// clusters, by golden-section search on [0.2, 5].
pub fn optimize_weight(s_db: f64) -> Result<WeightOptimum, AnalysisError> {
    if !s_db.is_finite() {
        return Err(AnalysisError::NonFinite);
    }
    if s_db < OPTIMIZE_S_RANGE.0 || s_db > OPTIMIZE_S_RANGE.1 {
        return Err(AnalysisError::SqueezingOutOfRange(s_db));
    }
    let level = SqueezingLevel::from_db(s_db)?;
    let f = |g: f64| three_node_objective(g, level);
    let (lo, hi) = WEIGHT_RANGE;
    let inv_phi = X_OFFSET - 1.0;

    let probe = hi - inv_phi * (hi - lo);
    let bracketed = f(probe) < f(lo) && f(probe) < f(hi);
    let (a, b) = if bracketed {
        (lo, hi)
    } else {
        let steps = 4800;
        let h = (hi - lo) / steps as f64;
        let best = (0..=steps)
            .map(|i| lo + i as f64 * h)
            .fold((lo, f64::INFINITY), |acc, g| {
                let v = f(g);
                if v < acc.1 {
                    (g, v)
                } else {
                    acc
                }
            })
            .0;
        ((best - h).max(lo), (best + h).min(hi))
    };
    let g = golden_section(f, a, b, WEIGHT_TOL);
    Ok(WeightOptimum {
        s_db,
        g,
        probability: f(g),
        bracketed,
    })
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = X_OFFSET - 1.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Weights for which the three-node pair beats the twelve-node pair in
/// both quadratures: `(1/√3, √2)`.
pub fn dominance_interval() -> (f64, f64) {
    dominance_bounds(TWELVE_NODE_PAIR)
}

/// Open interval of `g` where `three_node_pair(g)` is componentwise below
/// `reference`, from `2 + 1/g² = x` and `1 + g² = y`.
pub fn dominance_bounds(reference: (f64, f64)) -> (f64, f64) {
    let low = if reference.0 > 2.0 {
        1.0 / (reference.0 - 2.0).sqrt()
    } else {
        f64::INFINITY
    };
    let high = if reference.1 > 1.0 {
        (reference.1 - 1.0).sqrt()
    } else {
        0.0
    };
    (low, high)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Dominance {
    pub x_smaller: bool,
    pub y_smaller: bool,
}

impl Dominance {
    pub fn dominated(&self) -> bool {
        self.x_smaller && self.y_smaller
    }
}

/// Componentwise comparison of the three-node pair at `g` with `reference`.
pub fn compare_three_node(g: f64, reference: (f64, f64)) -> Dominance {
    let (x, y) = three_node_pair(g);
    Dominance {
        x_smaller: x < reference.0,
        y_smaller: y < reference.1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub s: f64,
    pub p_twelve: f64,
    pub p_three_g1: f64,
    pub p_two: f64,
}

pub const CSV_HEADER: &str = "s,p_twelve,p_three_g1,p_two";

/// Failure probabilities of the three layouts on `s_min, s_min + step, …`.
pub fn sweep_comparison(s_min: f64, s_max: f64, step: f64) -> Result<Vec<SweepRow>, AnalysisError> {
    if !(s_min.is_finite() && s_max.is_finite() && step.is_finite()) || s_min >= s_max || step <= 0.0 {
        return Err(AnalysisError::InvalidRange {
            min: s_min,
            max: s_max,
            step,
        });
    }
    let rows = ((s_max - s_min) / step + 1e-9).floor() as usize + 1;
    let twelve = ErrorProfile::uniform(TWELVE_NODE_PAIR, 3)?;
    let three = ErrorProfile::three_node(1.0)?;
    let two = ErrorProfile::uniform(TWO_NODE_PAIR, 3)?;
    (0..rows)
        .map(|i| {
            let s = s_min + i as f64 * step;
            let level = SqueezingLevel::from_db(s)?;
            Ok(SweepRow {
                s,
                p_twelve: protocol_error_probability(&twelve, level),
                p_three_g1: protocol_error_probability(&three, level),
                p_two: protocol_error_probability(&two, level),
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.s, r.p_twelve, r.p_three_g1, r.p_two));
    }
    out
}

/// Twelve-node versus two-node failure probability at one squeezing level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LayoutGap {
    pub s_db: f64,
    pub p_twelve: f64,
    pub p_two: f64,
    /// `(p_twelve − p_two) / p_twelve`.
    pub relative: f64,
    /// `p_twelve − p_two`.
    pub absolute: f64,
}

pub fn layout_gap(s_db: f64) -> Result<LayoutGap, AnalysisError> {
    let level = SqueezingLevel::from_db(s_db)?;
    let p_twelve = protocol_error_probability(&ErrorProfile::uniform(TWELVE_NODE_PAIR, 3)?, level);
    let p_two = protocol_error_probability(&ErrorProfile::uniform(TWO_NODE_PAIR, 3)?, level);
    Ok(LayoutGap {
        s_db,
        p_twelve,
        p_two,
        relative: (p_twelve - p_two) / p_twelve,
        absolute: p_twelve - p_two,
    })
}
