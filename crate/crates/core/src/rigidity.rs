//! Grid certificates that a probability rule is the identity.
//!
//! If `Φ` produces no Jensen gap on any steering scenario then it is affine,
//! and the only affine map with `Φ(0) = 0` and `Φ(1) = 1` is the identity.
//! [`scan_gaps`] measures the largest gap over a grid of scenarios;
//! [`certify_identity`] turns a gap tolerance into an explicit bound on
//! `|Φ(p) − p|` and either certifies the rule or returns the scenario that
//! signals.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid_parameter, Result};
use crate::phi_rules::PhiRule;

/// Mixing weights used in every scan.
pub const SCAN_LAMBDAS: [f64; 3] = [0.25, 0.5, 0.75];
pub const DEFAULT_GRID_STEP: f64 = 0.01;
/// Second differences smaller than this count as flat.
const CURVATURE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Curvature {
    #[serde(rename = "+")]
    Convex,
    #[serde(rename = "-")]
    Concave,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvatureInterval {
    pub lo: f64,
    pub hi: f64,
    pub sign: Curvature,
}

/// A scenario `(p1, p2, λ)` and the gap the rule produces on it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapWitness {
    pub p1: f64,
    pub p2: f64,
    pub lambda: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RigidityReport {
    pub rule_id: String,
    /// Actual spacing used, `1 / round(1 / grid_step)`.
    pub grid_step: f64,
    /// Largest `|gap|` over all grid scenarios.
    pub max_gap: f64,
    pub max_gap_at: GapWitness,
    /// `max |Φ(p) − p|` over the grid.
    pub max_identity_deviation: f64,
    pub max_identity_deviation_at: f64,
    pub convexity_intervals: Vec<CurvatureInterval>,
    /// Largest deviation from the chord through `(0, Φ(0))` and `(1, Φ(1))`.
    pub affine_residual: f64,
}

fn grid_size(grid_step: f64) -> Result<usize> {
    if !(grid_step > 0.0 && grid_step <= 0.1) {
        return Err(invalid_parameter("grid_step", format!("must lie in (0, 0.1], got {grid_step}")));
    }
    Ok((1.0 / grid_step).round() as usize)
}

fn grid_values(rule: &PhiRule, m: usize) -> (Vec<f64>, Vec<f64>) {
    let xs: Vec<f64> = (0..=m).map(|k| k as f64 / m as f64).collect();
    let ys = xs.iter().map(|&x| rule.eval_unchecked(x)).collect();
    (xs, ys)
}

/// Orders candidates by `|gap|`, breaking ties towards the earliest
/// `(i, j, λ index)` so parallel reduction is deterministic.
fn better(a: (f64, (usize, usize, usize)), b: (f64, (usize, usize, usize))) -> (f64, (usize, usize, usize)) {
    if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
        b
    } else {
        a
    }
}

fn curvature_intervals(xs: &[f64], ys: &[f64]) -> Vec<CurvatureInterval> {
    let m = xs.len() - 1;
    let mut out: Vec<CurvatureInterval> = Vec::new();
    let mut run: Option<(usize, usize, Curvature)> = None;
    let close = |run: Option<(usize, usize, Curvature)>, out: &mut Vec<CurvatureInterval>| {
        if let Some((start, end, sign)) = run {
            out.push(CurvatureInterval {
                lo: xs[start - 1],
                hi: xs[end + 1],
                sign,
            });
        }
    };
    for k in 1..m {
        let d = ys[k - 1] - 2.0 * ys[k] + ys[k + 1];
        let sign = if d > CURVATURE_TOL {
            Some(Curvature::Convex)
        } else if d < -CURVATURE_TOL {
            Some(Curvature::Concave)
        } else {
            None
        };
        run = match (run, sign) {
            (Some((start, _, s)), Some(t)) if s == t => Some((start, k, s)),
            (prev, next) => {
                close(prev, &mut out);
                next.map(|t| (k, k, t))
            }
        };
    }
    close(run, &mut out);
    out
}

/// Evaluates the Jensen gap on every grid scenario `p1 < p2`,
/// `λ ∈ {1/4, 1/2, 3/4}` and summarizes the shape of `Φ` on the grid.
pub fn scan_gaps(rule: &PhiRule, grid_step: f64) -> Result<RigidityReport> {
    let m = grid_size(grid_step)?;
    let (xs, ys) = grid_values(rule, m);

    let init = (f64::NEG_INFINITY, (usize::MAX, usize::MAX, usize::MAX));
    let (best_gap, (bi, bj, bl)) = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut best = init;
            for j in (i + 1)..=m {
                for (l, &lambda) in SCAN_LAMBDAS.iter().enumerate() {
                    let mean = lambda * xs[i] + (1.0 - lambda) * xs[j];
                    let gap = lambda * ys[i] + (1.0 - lambda) * ys[j] - rule.eval_unchecked(mean);
                    best = better(best, (gap.abs(), (i, j, l)));
                }
            }
            best
        })
        .reduce(|| init, better);
    let lambda = SCAN_LAMBDAS[bl];
    let signed_gap = lambda * ys[bi] + (1.0 - lambda) * ys[bj]
        - rule.eval_unchecked(lambda * xs[bi] + (1.0 - lambda) * xs[bj]);

    let (dev_at, max_dev) = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (*x, (y - x).abs()))
        .fold((0.0, -1.0), |acc, c| if c.1 > acc.1 { c } else { acc });
    let (y0, y1) = (ys[0], ys[m]);
    let affine_residual = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - (y0 + (y1 - y0) * x)).abs())
        .fold(0.0, f64::max);

    Ok(RigidityReport {
        rule_id: rule.to_string(),
        grid_step: 1.0 / m as f64,
        max_gap: best_gap,
        max_gap_at: GapWitness {
            p1: xs[bi],
            p2: xs[bj],
            lambda,
            gap: signed_gap,
        },
        max_identity_deviation: max_dev,
        max_identity_deviation_at: dev_at,
        convexity_intervals: curvature_intervals(&xs, &ys),
        affine_residual,
    })
}

/// Bound on `|Φ(x) − x|` over the grid implied by `|gap| ≤ gap_tolerance` on
/// every scan scenario, for rules with `Φ(0) = 0` and `Φ(1) = 1`.
///
/// Writing `e = Φ − id`, each scenario gives
/// `|e(λa + (1−λ)b)| ≤ gap + λ|e(a)| + (1−λ)|e(b)|`. Starting from
/// `e(0) = e(1) = 0` the bounds are propagated inwards (midpoints, then
/// quarter points, and outwards again where the grid is not dyadic) until no
/// bound improves; the largest resulting bound is returned.
pub fn derived_bound(gap_tolerance: f64, grid_step: f64) -> Result<f64> {
    if !(gap_tolerance >= 0.0 && gap_tolerance.is_finite()) {
        return Err(invalid_parameter("gap_tolerance", "must be a nonnegative real"));
    }
    Ok(gap_tolerance * propagation_factor(grid_size(grid_step)?))
}

/// The bound of [`derived_bound`] for unit gap tolerance on `m` cells.
///
/// Each relation `|λe_i + (1−λ)e_j − e_k| ≤ 1` is used three ways: to bound
/// the interior point from the outer ones, and each outer point from the
/// other two.
fn propagation_factor(m: usize) -> f64 {
    // (target, other, other, weight of first other, weight of second other, scale)
    let mut relations: Vec<(usize, usize, usize, f64, f64, f64)> = Vec::new();
    let mut push = |k: usize, i: usize, j: usize, lambda: f64| {
        relations.push((k, i, j, lambda, 1.0 - lambda, 1.0));
        relations.push((i, k, j, 1.0 / lambda, (1.0 - lambda) / lambda, 1.0 / lambda));
        relations.push((j, k, i, 1.0 / (1.0 - lambda), lambda / (1.0 - lambda), 1.0 / (1.0 - lambda)));
    };
    for i in 0..m {
        for j in (i + 1)..=m {
            if (i + j) % 2 == 0 {
                push((i + j) / 2, i, j, 0.5);
            }
            if (i + 3 * j) % 4 == 0 {
                push((i + 3 * j) / 4, i, j, 0.25);
            }
            if (3 * i + j) % 4 == 0 {
                push((3 * i + j) / 4, i, j, 0.75);
            }
        }
    }
    // Neighbouring midpoints alone bound every second difference by 2, which
    // with zero ends gives |e_k| <= k(m − k). That is finite everywhere and
    // is the starting point; the relations then only tighten it.
    let mut bound: Vec<f64> = (0..=m).map(|k| (k * (m - k)) as f64).collect();
    loop {
        let mut changed = false;
        for &(k, a, b, wa, wb, scale) in &relations {
            if k == 0 || k == m {
                continue;
            }
            let candidate = scale + wa * bound[a] + wb * bound[b];
            if candidate < bound[k] * (1.0 - 1e-12) {
                bound[k] = candidate;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    bound.into_iter().fold(0.0, f64::max)
}

/// Evidence that a rule is not the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SignalingWitness {
    /// A steering scenario whose gap exceeds the tolerance.
    Scenario(GapWitness),
    /// A grid point where `Φ` strays further from the identity than the gap
    /// data allows (only possible when an endpoint is not fixed).
    GridPoint { p: f64, deviation: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityCertificate {
    pub certified: bool,
    pub gap_tolerance: f64,
    pub derived_bound: f64,
    pub bound_derivation: String,
    pub witness: Option<SignalingWitness>,
    pub report: RigidityReport,
}

/// Certifies `Φ = id` on the grid: every scan gap is within `gap_tolerance`
/// and `|Φ(p) − p|` stays within [`derived_bound`].
pub fn certify_identity(rule: &PhiRule, gap_tolerance: f64, grid_step: f64) -> Result<IdentityCertificate> {
    if !(gap_tolerance > 0.0 && gap_tolerance.is_finite()) {
        return Err(invalid_parameter("gap_tolerance", "must be a positive real"));
    }
    let report = scan_gaps(rule, grid_step)?;
    let m = grid_size(grid_step)?;
    let factor = propagation_factor(m);
    let bound = gap_tolerance * factor;
    let witness = if report.max_gap > gap_tolerance {
        Some(SignalingWitness::Scenario(report.max_gap_at))
    } else if report.max_identity_deviation > bound {
        Some(SignalingWitness::GridPoint {
            p: report.max_identity_deviation_at,
            deviation: report.max_identity_deviation,
        })
    } else {
        None
    };
    Ok(IdentityCertificate {
        certified: witness.is_none(),
        gap_tolerance,
        derived_bound: bound,
        bound_derivation: format!(
            "|e(l*a+(1-l)*b)| <= tol + l*|e(a)| + (1-l)*|e(b)|, e = phi - id, e(0) = e(1) = 0, \
             l in {{0.25, 0.5, 0.75}}, propagated over {m} grid cells: bound = {factor} * tol"
        ),
        witness,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force maximum of |gap| over the scan grid, straight from the
    /// definition and without the parallel reduction.
    fn brute_force_max_gap(rule: &PhiRule, m: usize) -> (f64, f64, f64, f64) {
        let mut best = (0.0, 0.0, 0.0, -1.0);
        for i in 0..=m {
            for j in (i + 1)..=m {
                for lambda in SCAN_LAMBDAS {
                    let (p1, p2) = (i as f64 / m as f64, j as f64 / m as f64);
                    let g = crate::signaling::jensen_gap(rule, p1, p2, lambda).unwrap();
                    if g.abs() > best.3 {
                        best = (p1, p2, lambda, g.abs());
                    }
                }
            }
        }
        best
    }

    #[test]
    fn identity_scan() {
        let r = scan_gaps(&PhiRule::identity(), 0.01).unwrap();
        assert!(r.max_gap <= 1e-12);
        assert!(r.max_identity_deviation <= 1e-12);
        assert!(r.convexity_intervals.is_empty());
    }

    #[test]
    fn square_scan() {
        let rule = PhiRule::power(2.0).unwrap();
        let r = scan_gaps(&rule, 0.01).unwrap();
        let oracle = brute_force_max_gap(&rule, 100);
        assert!((oracle.3 - 0.25).abs() < 1e-15);
        assert!((r.max_gap - 0.25).abs() < 1e-15);
        assert_eq!((r.max_gap_at.p1, r.max_gap_at.p2, r.max_gap_at.lambda), (0.0, 1.0, 0.5));
        assert_eq!(
            r.convexity_intervals,
            vec![CurvatureInterval { lo: 0.0, hi: 1.0, sign: Curvature::Convex }]
        );
        assert!((r.max_identity_deviation - 0.25).abs() < 1e-15);
        assert_eq!(r.max_identity_deviation, r.affine_residual);
    }

    #[test]
    fn piecewise_scan() {
        let rule = PhiRule::piecewise_affine(vec![(0.0, 0.0), (0.5, 0.7), (1.0, 1.0)]).unwrap();
        let r = scan_gaps(&rule, 0.01).unwrap();
        let oracle = brute_force_max_gap(&rule, 100);
        assert!((oracle.3 - 0.2).abs() < 1e-12);
        assert!((r.max_gap - 0.2).abs() < 1e-12);
        assert_eq!((r.max_gap_at.p1, r.max_gap_at.p2, r.max_gap_at.lambda), (0.0, 1.0, 0.5));
        assert!(r.max_gap_at.gap < 0.0);
        // The kink at 0.5 is the only curved region; both sides are linear.
        assert_eq!(r.convexity_intervals.len(), 1);
        let c = r.convexity_intervals[0];
        assert_eq!(c.sign, Curvature::Concave);
        assert!((c.lo - 0.49).abs() < 1e-12 && (c.hi - 0.51).abs() < 1e-12);
    }

    #[test]
    fn scan_agrees_with_brute_force() {
        for rule in [
            PhiRule::power(0.5).unwrap(),
            PhiRule::power(1.05).unwrap(),
            PhiRule::power(3.0).unwrap(),
            PhiRule::from_fn(|p| p * p * (3.0 - 2.0 * p), 1025).unwrap().0,
        ] {
            let r = scan_gaps(&rule, 0.05).unwrap();
            let oracle = brute_force_max_gap(&rule, 20);
            assert!((r.max_gap - oracle.3).abs() < 1e-15, "{rule}");
            assert_eq!((r.max_gap_at.p1, r.max_gap_at.p2, r.max_gap_at.lambda), (oracle.0, oracle.1, oracle.2));
        }
    }

    #[test]
    fn power_1_05_witness() {
        let rule = PhiRule::power(1.05).unwrap();
        let c = certify_identity(&rule, 1e-10, 0.01).unwrap();
        assert!(!c.certified);
        let oracle = brute_force_max_gap(&rule, 100);
        match c.witness {
            Some(SignalingWitness::Scenario(w)) => {
                assert_eq!((w.p1, w.p2, w.lambda), (oracle.0, oracle.1, oracle.2));
                assert!((w.gap - oracle.3).abs() < 1e-15);
                assert_eq!((w.p1, w.p2, w.lambda), (0.0, 1.0, 0.5));
                // 0.5 − 0.5^1.05
                assert!((w.gap - (0.5 - 0.5f64.powf(1.05))).abs() < 1e-15);
            }
            other => panic!("unexpected witness {other:?}"),
        }
    }

    #[test]
    fn certificates() {
        for step in [0.1, 0.05, 0.02, 0.01] {
            let c = certify_identity(&PhiRule::identity(), 1e-10, step).unwrap();
            assert!(c.certified, "step {step}");
            assert!(c.witness.is_none());
        }
        let on_grid = PhiRule::piecewise_affine(vec![(0.0, 0.0), (0.3, 0.3), (1.0, 1.0)]).unwrap();
        assert!(certify_identity(&on_grid, 1e-10, 0.01).unwrap().certified);
        let lifted = PhiRule::tabulated(vec![0.0, 0.5, 0.9]).unwrap();
        assert!(!certify_identity(&lifted, 1e-10, 0.01).unwrap().certified);
        assert!(certify_identity(&PhiRule::identity(), 0.0, 0.01).is_err());
        assert!(scan_gaps(&PhiRule::identity(), 0.5).is_err());
    }

    #[test]
    fn shifted_endpoint_gives_grid_point_witness() {
        // Affine but with Φ(0) = 0.1: no Jensen gap at all, yet not the identity.
        let rule = PhiRule::tabulated(vec![0.1, 1.0]).unwrap();
        let c = certify_identity(&rule, 1e-10, 0.01).unwrap();
        assert!(!c.certified);
        match c.witness {
            Some(SignalingWitness::GridPoint { p, deviation }) => {
                assert_eq!(p, 0.0);
                assert!((deviation - 0.1).abs() < 1e-12);
            }
            other => panic!("unexpected witness {other:?}"),
        }
        let r = &c.report;
        assert!(r.affine_residual < 1e-12);
        assert!(r.max_identity_deviation > r.affine_residual);
    }

    #[test]
    fn derived_bound_is_valid_for_perturbed_identities() {
        // For Φ = id + ε·sin(πp)·(bump) the gap and the deviation are both
        // measurable; the deviation must respect the bound built from the gap.
        for eps in [1e-3, 1e-6] {
            let (rule, _) = PhiRule::from_fn(|p| p + eps * (std::f64::consts::PI * p).sin() * 0.5, 101).unwrap();
            let r = scan_gaps(&rule, 0.01).unwrap();
            let bound = derived_bound(r.max_gap, 0.01).unwrap();
            assert!(r.max_identity_deviation <= bound + 1e-15, "{} > {}", r.max_identity_deviation, bound);
        }
        let factor = derived_bound(1.0, 0.01).unwrap();
        assert!((1.0..2.0).contains(&factor), "{factor}");
        // Reference values are the exact optima of the linear programs
        // max e_k subject to every scan relation, solved independently.
        for (m, lp) in [(10, 1.8333333333333333), (16, 1.75), (20, 1.9166666666666665)] {
            let f = derived_bound(1.0, 1.0 / m as f64).unwrap();
            assert!((f - lp).abs() < 1e-9, "m={m}: {f} vs {lp}");
        }
        // e(p) = p(1 − p) has its worst gap at (0, 1, 1/2), equal to its peak.
        let (rule, _) = PhiRule::from_fn(|p| p + 0.1 * p * (1.0 - p), 101).unwrap();
        let r = scan_gaps(&rule, 0.01).unwrap();
        assert!((r.max_gap - 0.025).abs() < 1e-12 && (r.max_identity_deviation - 0.025).abs() < 1e-12);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(48))]
        #[test]
        fn derived_bound_holds_for_random_grid_perturbations(
            noise in proptest::collection::vec(-1.0f64..1.0, 19),
            eps in 1e-6f64..1e-2,
        ) {
            let m = 20;
            let mut values = vec![0.0];
            values.extend(noise.iter().enumerate().map(|(k, n)| (k + 1) as f64 / m as f64 + eps * n * 0.04));
            values.push(1.0);
            let rule = PhiRule::tabulated(values).unwrap();
            let r = scan_gaps(&rule, 1.0 / m as f64).unwrap();
            let bound = derived_bound(r.max_gap, 1.0 / m as f64).unwrap();
            proptest::prop_assert!(r.max_identity_deviation <= bound * (1.0 + 1e-9) + 1e-15);
        }
    }

    #[test]
    fn midpoint_second_differences_are_bounded_by_the_gap() {
        for rule in [PhiRule::power(2.0).unwrap(), PhiRule::power(0.7).unwrap()] {
            let r = scan_gaps(&rule, 0.01).unwrap();
            for k in 1..100 {
                let x = |i: usize| i as f64 / 100.0;
                let y = |i: usize| rule.eval(x(i)).unwrap();
                let d = (y(k) - 0.5 * (y(k - 1) + y(k + 1))).abs();
                assert!(d <= r.max_gap);
            }
        }
    }

    #[test]
    fn rejects_non_identity_powers() {
        let alphas = (1..=19).map(|k| k as f64 * 0.05).chain((21..=60).map(|k| k as f64 * 0.05));
        for alpha in alphas {
            let c = certify_identity(&PhiRule::power(alpha).unwrap(), 1e-10, 0.01).unwrap();
            assert!(!c.certified, "alpha {alpha}");
            assert!(matches!(c.witness, Some(SignalingWitness::Scenario(_))));
        }
    }
}
