//! Reproduction checks run by `cvtqt verify` and the acceptance tests.

use std::f64::consts::{FRAC_PI_2, SQRT_2};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analysis::{
    compare_three_node, dominance_interval, layout_gap, optimize_weight, sweep_comparison, variance_from_db,
    SqueezingLevel, TWELVE_NODE_PAIR,
};
use crate::covsim::{
    apply_symplectic, cluster_state, displace, measure_homodyne, nullifier_variances, product, simulate_report,
    squeezed_vacuum, GaussianState, Outcome, SymplecticOp, SYMPLECTIC_TOL, VACUUM_VARIANCE,
};
use crate::graph::{ClusterGraph, GramKit, GraphKind};
use crate::protocol::{
    composite_report, find_phase_schedule, phase_schedule, run_protocol, run_with_schedule, Participant, Scenario,
    ThreeNodeTarget,
};
use crate::symbolic::{InputTag, ModeLabel, Quadrature};

pub const CRITERIA: usize = 11;
pub const VERIFY_BUDGET: Duration = Duration::from_secs(5);
const SAMPLED_OUTCOME_SETS: u64 = 100;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    pub fn line(&self) -> String {
        format!(
            "[{}] {:>2}. {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail
        )
    }
}

pub fn criterion_name(id: usize) -> &'static str {
    match id {
        1 => "variance vectors",
        2 => "routing",
        3 => "BCA error matrix and Y8 gains",
        4 => "three-node law and dominance",
        5 => "two-node law",
        6 => "cross-engine oracle",
        7 => "nullifier certification",
        8 => "layout ordering and 8 dB gap",
        9 => "weight optimizer",
        10 => "symplectic and Gaussian invariants",
        11 => "verify runtime",
        _ => "unknown",
    }
}

/// Runs a single check. Criterion 11 times checks 1–10.
pub fn run_check(id: usize) -> CheckOutcome {
    let result = match id {
        1 => variance_vectors(),
        2 => routing(),
        3 => bca_error_matrix(),
        4 => three_node_law(),
        5 => two_node_law(),
        6 => cross_engine(),
        7 => nullifiers(),
        8 => layout_ordering(),
        9 => optimizer(),
        10 => invariants(),
        11 => {
            let start = Instant::now();
            for i in 1..CRITERIA {
                run_check(i);
            }
            runtime(start.elapsed())
        }
        _ => Err(format!("no criterion {id}")),
    };
    let (passed, detail) = match result {
        Ok((passed, detail)) => (passed, detail),
        Err(e) => (false, format!("error: {e}")),
    };
    CheckOutcome {
        id,
        name: criterion_name(id),
        passed,
        detail,
    }
}

/// Runs every check once; the runtime check times the others.
pub fn run_all() -> Vec<CheckOutcome> {
    let start = Instant::now();
    let mut out: Vec<CheckOutcome> = (1..CRITERIA).map(run_check).collect();
    let (passed, detail) = runtime(start.elapsed()).unwrap_or_else(|e| (false, e));
    out.push(CheckOutcome {
        id: CRITERIA,
        name: criterion_name(CRITERIA),
        passed,
        detail,
    });
    out
}

type Check = Result<(bool, String), String>;

fn twelve() -> ClusterGraph {
    ClusterGraph::canonical(GraphKind::Twelve)
}

fn three(g: f64) -> ClusterGraph {
    ClusterGraph::canonical(GraphKind::Three {
        g12: g,
        g13: g,
        g23: 0.0,
    })
}

fn close(got: &[f64], want: &[f64], tol: f64) -> bool {
    got.len() == want.len() && got.iter().zip(want).all(|(g, w)| (g - w).abs() <= tol)
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{}", (x * 1e9).round() / 1e9)).collect();
    format!("({})", parts.join(","))
}

fn graph_for(scenario: Scenario) -> ClusterGraph {
    match scenario.required_nodes() {
        12 => twelve(),
        3 => three(1.0),
        _ => ClusterGraph::canonical(GraphKind::Two),
    }
}

fn variance_vectors() -> Check {
    let start = Instant::now();
    let g = twelve();
    let targets = [
        (Scenario::CycleBca, vec![5.0, 5.0, 5.0, 3.0, 3.0, 3.0]),
        (Scenario::CycleCab, vec![3.0, 3.0, 3.0, 5.0, 5.0, 5.0]),
        (
            Scenario::Pairwise(Participant::Alice, Participant::Bob),
            vec![3.0, 5.0, 5.0, 3.0],
        ),
        (Scenario::MergeToCharlie, vec![3.0, 5.0, 5.0, 3.0]),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (scenario, want) in targets {
        let report = run_protocol(&g, scenario).map_err(|e| e.to_string())?;
        let hit = close(&report.variances, &want, 1e-9);
        ok &= hit;
        parts.push(format!(
            "{scenario} {} (want {}){}",
            fmt_vec(&report.variances),
            fmt_vec(&want),
            if hit { "" } else { " MISMATCH" }
        ));
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(1);
    parts.push(format!("{:.3} s", elapsed.as_secs_f64()));
    Ok((ok, parts.join("; ")))
}

fn routing() -> Check {
    let g = twelve();
    let want = [
        (Scenario::CycleBca, vec![(8, 'b'), (9, 'c'), (10, 'a')]),
        (Scenario::CycleCab, vec![(11, 'c'), (12, 'a'), (4, 'b')]),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (scenario, expected) in want {
        let report = run_protocol(&g, scenario).map_err(|e| e.to_string())?;
        let got: Vec<(usize, char)> = report.routing.iter().map(|r| (r.node, r.tag.as_char())).collect();
        ok &= got == expected;
        let table: Vec<String> = got.iter().map(|(n, t)| format!("{n}<-{t}")).collect();
        parts.push(format!("{scenario} {{{}}}", table.join(", ")));
    }
    Ok((ok, parts.join("; ")))
}

/// Reference error matrix of the BCA cycle.
pub fn reference_bca_error_matrix() -> DMatrix<f64> {
    DMatrix::from_row_slice(
        6,
        12,
        &[
            -1., 0., -1., -1., -3., 0., 0., 0., 1., 1., 0., 0., //
            -1., -1., 0., 0., 0., -3., 0., 1., 0., 1., -1., 0., //
            0., -1., -1., 0., 0., 0., -3., 1., 1., 0., 0., -1., //
            0., -1., 0., 0., 0., 1., 1., 2., 0., 0., 0., 0., //
            0., 0., -1., 0., 1., 0., 1., 0., 2., 0., 0., 0., //
            -1., 0., 0., 0., 1., 1., 0., 0., 0., 2., 0., 0.,
        ],
    )
}

fn bca_error_matrix() -> Check {
    let report = run_protocol(&twelve(), Scenario::CycleBca).map_err(|e| e.to_string())?;
    let deviation = (&report.error_matrix - reference_bca_error_matrix()).amax();
    let gains = report.gains_of(8, Quadrature::Y).ok_or("no Y8 row")?;
    let want = [
        (ModeLabel::Node(4), 1.0),
        (ModeLabel::Node(6), -1.0),
        (ModeLabel::Node(7), -1.0),
        (ModeLabel::Partner(InputTag::B), -SQRT_2),
    ];
    let gains_ok = gains.len() == want.len()
        && want
            .iter()
            .all(|&(mode, w)| gains.iter().any(|g| g.mode == mode && (g.gain - w).abs() <= 1e-9));
    let listed: Vec<String> = gains.iter().map(|g| format!("{:+.6}·i[{}]", g.gain, g.mode)).collect();
    Ok((
        deviation <= 1e-9 && gains_ok,
        format!("max |E − E_ref| = {deviation:.1e}; Y8 gains {}", listed.join(" ")),
    ))
}

fn three_node_law() -> Check {
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for g in [0.5, 1.0 / 3f64.sqrt(), 1.0, SQRT_2, 2.0] {
        for target in [ThreeNodeTarget::A2, ThreeNodeTarget::A3] {
            let r = run_protocol(&three(g), Scenario::SingleHop3(target)).map_err(|e| e.to_string())?;
            let want = [2.0 + 1.0 / (g * g), 1.0 + g * g];
            for (a, b) in r.variances.iter().zip(&want) {
                worst = worst.max((a - b).abs());
            }
            ok &= close(&r.variances, &want, 1e-9);
        }
    }
    let (lo, hi) = dominance_interval();
    let eps = 1e-6;
    let flips = !compare_three_node(lo - eps, TWELVE_NODE_PAIR).dominated()
        && compare_three_node(lo + eps, TWELVE_NODE_PAIR).dominated()
        && compare_three_node(hi - eps, TWELVE_NODE_PAIR).dominated()
        && !compare_three_node(hi + eps, TWELVE_NODE_PAIR).dominated();
    let bounds = (lo - 1.0 / 3f64.sqrt()).abs() <= eps && (hi - SQRT_2).abs() <= eps;
    ok &= flips && bounds;
    Ok((
        ok,
        format!("max deviation {worst:.1e}; dominance interval ({lo:.9}, {hi:.9}) against (5,3)"),
    ))
}

fn two_node_law() -> Check {
    let g = ClusterGraph::canonical(GraphKind::Two);
    let setup = Scenario::OneDirectional2.setup().map_err(|e| e.to_string())?;
    let schedule = find_phase_schedule(&g, &setup, None).map_err(|e| e.to_string())?;
    let report = run_with_schedule(&g, &setup, &schedule).map_err(|e| e.to_string())?;
    let reports: Vec<_> = (0..6).map(|k| report.clone().in_cluster(k)).collect();
    let composite = composite_report(&reports).map_err(|e| e.to_string())?;
    let ok = close(&report.variances, &[2.0, 2.0], 1e-9) && close(&composite.variances, &[2.0; 12], 1e-9);
    let phases: Vec<String> = schedule.iter().map(|(m, t)| format!("θ[{m}]={t:.6}")).collect();
    Ok((
        ok,
        format!(
            "{} with {}; six-pair composite {}",
            fmt_vec(&report.variances),
            phases.join(" "),
            fmt_vec(&composite.variances)
        ),
    ))
}

fn cross_engine() -> Check {
    let mut worst: f64 = 0.0;
    let mut identical = true;
    let mut runs = 0;
    for scenario in Scenario::all() {
        let graph = graph_for(scenario);
        let setup = scenario.setup().map_err(|e| e.to_string())?;
        let schedule = phase_schedule(scenario, &graph).map_err(|e| e.to_string())?;
        let report = run_with_schedule(&graph, &setup, &schedule).map_err(|e| e.to_string())?;
        for s in [4.0, 8.0, 12.0] {
            let v = variance_from_db(s);
            let mut first = None;
            for seed in 0..SAMPLED_OUTCOME_SETS {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let sim = simulate_report(&graph, &setup.attachments, &report, s, &[], &mut rng)
                    .map_err(|e| e.to_string())?;
                runs += 1;
                match &first {
                    None => {
                        for (r, coef) in report.variances.iter().enumerate() {
                            let want = VACUUM_VARIANCE + coef * v;
                            worst = worst
                                .max((sim.channel_variances[r] - want).abs())
                                .max((sim.direct_variances[r] - want).abs());
                        }
                        first = Some(sim);
                    }
                    Some(base) => {
                        identical &= base.conditional_cov == sim.conditional_cov
                            && base.channel_variances == sim.channel_variances;
                    }
                }
            }
        }
    }
    Ok((
        worst <= 1e-6 && identical,
        format!(
            "{runs} runs; max |var − (1/4 + c·v)| = {worst:.1e}; variances identical across outcome sets: {identical}"
        ),
    ))
}

fn nullifiers() -> Check {
    let mut worst: f64 = 0.0;
    let s = 8.0;
    let v = variance_from_db(s);
    for kind in [
        GraphKind::Twelve,
        GraphKind::Three {
            g12: 1.0,
            g13: 1.0,
            g23: 0.0,
        },
        GraphKind::Two,
    ] {
        let g = ClusterGraph::canonical(kind);
        let gram = GramKit::new(&g).map_err(|e| e.to_string())?.gram;
        let state = cluster_state(&g, s).map_err(|e| e.to_string())?;
        for (i, var) in nullifier_variances(&state, &g)
            .map_err(|e| e.to_string())?
            .into_iter()
            .enumerate()
        {
            worst = worst.max((var - gram[(i, i)] * v).abs());
        }
    }
    Ok((worst <= 1e-9, format!("max deviation {worst:.1e} at {s} dB")))
}

fn layout_ordering() -> Check {
    let rows = sweep_comparison(2.0, 14.0, 0.25).map_err(|e| e.to_string())?;
    let ordered = rows.iter().all(|r| r.p_two < r.p_three_g1 && r.p_three_g1 < r.p_twelve);
    let gap = layout_gap(8.0).map_err(|e| e.to_string())?;
    let in_band = (gap.relative - 0.20).abs() <= 0.05;
    Ok((
        ordered && in_band,
        format!(
            "ordering over {} points: {ordered}; at 8 dB P_twelve={:.6} P_two={:.6} relative gap {:.4} (want 0.20±0.05), absolute gap {:.4}",
            rows.len(),
            gap.p_twelve,
            gap.p_two,
            gap.relative,
            gap.absolute
        ),
    ))
}

fn optimizer() -> Check {
    let opt = optimize_weight(8.0).map_err(|e| e.to_string())?;
    let level = SqueezingLevel::from_db(8.0).map_err(|e| e.to_string())?;
    let p = |g: f64| {
        crate::analysis::protocol_error_probability(
            &crate::analysis::ErrorProfile::three_node(g).expect("positive weight"),
            level,
        )
    };
    let local = opt.probability <= p(opt.g + 0.1) && opt.probability <= p(opt.g - 0.1);
    Ok((
        (opt.g - 1.0).abs() <= 0.05 && local,
        format!("g* = {:.5}, P(g*) = {:.6}", opt.g, opt.probability),
    ))
}

fn invariants() -> Check {
    let g = twelve();
    let bog = SymplecticOp::bogoliubov(&g).map_err(|e| e.to_string())?;
    let mut op = bog.direct_sum(&SymplecticOp::identity(3));
    for (input, node) in [(12, 0), (13, 1), (14, 2)] {
        let bs = SymplecticOp::beam_splitter(15, input, node).map_err(|e| e.to_string())?;
        op = op.then(&bs).map_err(|e| e.to_string())?;
    }
    let deviation = op.symplectic_deviation();

    let resource = squeezed_vacuum(&[8.0; 12]).map_err(|e| e.to_string())?;
    let inputs = GaussianState::vacuum(3);
    let state = apply_symplectic(&product(&[&resource, &inputs]), &op).map_err(|e| e.to_string())?;
    let covs: Vec<DMatrix<f64>> = [-2.0, 0.0, 0.5, 7.0]
        .iter()
        .map(|&m| {
            measure_homodyne(&state, 4, FRAC_PI_2, Outcome::Value(m))
                .map(|(s, _)| s.cov().clone())
                .map_err(|e| e.to_string())
        })
        .collect::<Result<_, _>>()?;
    let outcome_free = covs.windows(2).all(|w| w[0] == w[1]);
    let gains = DMatrix::from_fn(30, 2, |i, j| (i as f64 - j as f64) * 0.37);
    let moved = displace(&state, &gains, &[1.5, -0.25]).map_err(|e| e.to_string())?;
    let cov_kept = moved.cov() == state.cov();
    Ok((
        deviation <= SYMPLECTIC_TOL && outcome_free && cov_kept,
        format!(
            "|SΩSᵀ − Ω| = {deviation:.1e}; conditional covariance outcome-independent: {outcome_free}; displacement keeps covariance: {cov_kept}"
        ),
    ))
}

fn runtime(elapsed: Duration) -> Check {
    Ok((
        elapsed < VERIFY_BUDGET,
        format!(
            "checks 1-10 took {:.3} s (budget {} s)",
            elapsed.as_secs_f64(),
            VERIFY_BUDGET.as_secs()
        ),
    ))
}
