//! Probability rules of the form `P(φ|ψ) = Φ(τ(ψ, φ))`.
//!
//! A [`PhiRule`] is a distortion `Φ: [0, 1] → [0, 1]`. The identity gives the
//! Born rule; every other admissible choice is a candidate modification whose
//! consequences the rest of the crate measures.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_parameter, Error, Result};
use crate::linalg::StateVector;
use crate::steering::Ensemble;
use crate::transition::tau_closed;

/// Slack allowed on probabilities handed to [`PhiRule::eval`].
pub const PROBABILITY_SLACK: f64 = 1e-12;
/// Grid step used for the cached admissibility flag.
pub const DEFAULT_ADMISSIBILITY_STEP: f64 = 1e-3;
/// Number of samples used when tabulating a function.
pub const DEFAULT_TABLE_POINTS: usize = 1025;

const ENDPOINT_TOL: f64 = 1e-12;
const MONOTONE_TOL: f64 = 1e-12;

/// The functional family of a rule, with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhiKind {
    Identity,
    Power { alpha: f64 },
    /// Linear interpolation through `(x, y)` knots spanning `[0, 1]`.
    PiecewiseAffine { knots: Vec<(f64, f64)> },
    /// Samples on the uniform grid `k/(n-1)`, linearly interpolated.
    Custom { values: Vec<f64> },
}

/// A validated probability distortion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PhiKind", into = "PhiKind")]
pub struct PhiRule {
    kind: PhiKind,
    admissible: bool,
}

impl From<PhiRule> for PhiKind {
    fn from(rule: PhiRule) -> Self {
        rule.kind
    }
}

impl TryFrom<PhiKind> for PhiRule {
    type Error = Error;

    fn try_from(kind: PhiKind) -> Result<Self> {
        validate_kind(&kind)?;
        let mut rule = PhiRule {
            kind,
            admissible: false,
        };
        rule.admissible = rule
            .check_admissibility(DEFAULT_ADMISSIBILITY_STEP)
            .expect("default step is in range")
            .admissible;
        Ok(rule)
    }
}

fn validate_kind(kind: &PhiKind) -> Result<()> {
    let unit = |x: f64| x.is_finite() && (0.0..=1.0).contains(&x);
    match kind {
        PhiKind::Identity => Ok(()),
        PhiKind::Power { alpha } => {
            if alpha.is_finite() && *alpha > 0.0 {
                Ok(())
            } else {
                Err(invalid_parameter("alpha", format!("must be a positive real, got {alpha}")))
            }
        }
        PhiKind::PiecewiseAffine { knots } => {
            if knots.len() < 2 {
                return Err(invalid_parameter("knots", "need at least two knots"));
            }
            if knots.iter().any(|&(x, y)| !unit(x) || !unit(y)) {
                return Err(invalid_parameter("knots", "coordinates must lie in [0, 1]"));
            }
            if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
                return Err(invalid_parameter("knots", "x coordinates must be strictly increasing"));
            }
            if knots[0].0 != 0.0 || knots[knots.len() - 1].0 != 1.0 {
                return Err(invalid_parameter("knots", "knots must start at x = 0 and end at x = 1"));
            }
            Ok(())
        }
        PhiKind::Custom { values } => {
            if values.len() < 2 {
                return Err(invalid_parameter("values", "need at least two samples"));
            }
            if values.iter().any(|&y| !unit(y)) {
                return Err(invalid_parameter("values", "samples must lie in [0, 1]"));
            }
            Ok(())
        }
    }
}

/// Why a rule failed the admissibility check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    /// `Φ(0) ≠ 0`.
    LowerEndpoint { value: f64 },
    /// `Φ(1) ≠ 1`.
    UpperEndpoint { value: f64 },
    /// `Φ(next_x) < Φ(x)`.
    Decreasing { x: f64, next_x: f64, drop: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub admissible: bool,
    pub violation: Option<Violation>,
}

/// Value of a rule on a mixture of pure states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleProbability {
    pub value: f64,
    /// `(weight, Φ(τ(ψ_i, φ)))` per member.
    pub per_member: Vec<(f64, f64)>,
    /// Weight not represented by the members; bounds the truncation error
    /// because member probabilities never exceed 1.
    pub truncation_tail_bound: f64,
}

fn interpolate(xs: impl Fn(usize) -> f64, ys: &[f64], p: f64) -> f64 {
    // Binary search for the cell containing p.
    let n = ys.len();
    let (mut lo, mut hi) = (0usize, n - 1);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if xs(mid) <= p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (x0, x1) = (xs(lo), xs(hi));
    let t = ((p - x0) / (x1 - x0)).clamp(0.0, 1.0);
    ys[lo] + t * (ys[hi] - ys[lo])
}

impl PhiRule {
    pub fn new(kind: PhiKind) -> Result<Self> {
        Self::try_from(kind)
    }

    /// The Born rule.
    pub fn identity() -> Self {
        Self::new(PhiKind::Identity).expect("identity is valid")
    }

    pub fn power(alpha: f64) -> Result<Self> {
        Self::new(PhiKind::Power { alpha })
    }

    pub fn piecewise_affine(knots: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(PhiKind::PiecewiseAffine { knots })
    }

    pub fn tabulated(values: Vec<f64>) -> Result<Self> {
        Self::new(PhiKind::Custom { values })
    }

    /// Tabulates `f` on `points` uniform samples.
    ///
    /// Also returns the largest interpolation error observed at the cell
    /// midpoints.
    pub fn from_fn(f: impl Fn(f64) -> f64, points: usize) -> Result<(Self, f64)> {
        if points < 2 {
            return Err(invalid_parameter("points", "need at least two samples"));
        }
        let step = 1.0 / (points - 1) as f64;
        let values: Vec<f64> = (0..points).map(|k| f(k as f64 * step)).collect();
        let error = values
            .windows(2)
            .enumerate()
            .map(|(k, w)| (f((k as f64 + 0.5) * step) - 0.5 * (w[0] + w[1])).abs())
            .fold(0.0, f64::max);
        Ok((Self::tabulated(values)?, error))
    }

    pub fn kind(&self) -> &PhiKind {
        &self.kind
    }

    /// Cached result of [`check_admissibility`](Self::check_admissibility)
    /// at the default grid step.
    pub fn is_admissible(&self) -> bool {
        self.admissible
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.kind, PhiKind::Identity)
    }

    /// `Φ(p)`.
    pub fn eval(&self, p: f64) -> Result<f64> {
        if !p.is_finite() || !(-PROBABILITY_SLACK..=1.0 + PROBABILITY_SLACK).contains(&p) {
            return Err(Error::ProbabilityOutOfRange(p));
        }
        Ok(self.eval_unchecked(p.clamp(0.0, 1.0)))
    }

    pub(crate) fn eval_unchecked(&self, p: f64) -> f64 {
        match &self.kind {
            PhiKind::Identity => p,
            PhiKind::Power { alpha } => p.powf(*alpha),
            PhiKind::PiecewiseAffine { knots } => {
                let ys: Vec<f64> = knots.iter().map(|k| k.1).collect();
                interpolate(|i| knots[i].0, &ys, p)
            }
            PhiKind::Custom { values } => {
                let step = 1.0 / (values.len() - 1) as f64;
                interpolate(|i| i as f64 * step, values, p)
            }
        }
    }

    /// Checks `Φ(0) = 0`, `Φ(1) = 1` and monotonicity on a grid of the given
    /// step. Piecewise-affine rules are checked exactly at their knots.
    pub fn check_admissibility(&self, grid_step: f64) -> Result<AdmissibilityReport> {
        if !(grid_step > 0.0 && grid_step <= 0.1) {
            return Err(invalid_parameter("grid_step", format!("must lie in (0, 0.1], got {grid_step}")));
        }
        let fail = |v| {
            Ok(AdmissibilityReport {
                admissible: false,
                violation: Some(v),
            })
        };
        let lower = self.eval_unchecked(0.0);
        if lower.abs() > ENDPOINT_TOL {
            return fail(Violation::LowerEndpoint { value: lower });
        }
        let upper = self.eval_unchecked(1.0);
        if (upper - 1.0).abs() > ENDPOINT_TOL {
            return fail(Violation::UpperEndpoint { value: upper });
        }
        let decreasing = |(x, y): (f64, f64), (nx, ny): (f64, f64)| {
            (ny < y - MONOTONE_TOL).then_some(Violation::Decreasing {
                x,
                next_x: nx,
                drop: y - ny,
            })
        };
        let first = match &self.kind {
            PhiKind::PiecewiseAffine { knots } => {
                knots.windows(2).find_map(|w| decreasing(w[0], w[1]))
            }
            _ => {
                let n = (1.0 / grid_step).ceil() as usize;
                let points: Vec<(f64, f64)> = (0..=n)
                    .map(|k| {
                        let x = (k as f64 / n as f64).min(1.0);
                        (x, self.eval_unchecked(x))
                    })
                    .collect();
                points.windows(2).find_map(|w| decreasing(w[0], w[1]))
            }
        };
        match first {
            Some(v) => fail(v),
            None => Ok(AdmissibilityReport {
                admissible: true,
                violation: None,
            }),
        }
    }
}

impl fmt::Display for PhiRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            PhiKind::Identity => write!(f, "identity"),
            PhiKind::Power { alpha } => write!(f, "power({alpha})"),
            PhiKind::PiecewiseAffine { knots } => {
                write!(f, "piecewise_affine(")?;
                for (i, (x, y)) in knots.iter().enumerate() {
                    if i > 0 {
                        write!(f, ";")?;
                    }
                    write!(f, "{x}:{y}")?;
                }
                write!(f, ")")
            }
            PhiKind::Custom { values } => write!(f, "custom({} samples)", values.len()),
        }
    }
}

/// `Φ(τ(ψ, φ))`.
pub fn prob_pure(rule: &PhiRule, psi: &StateVector, phi: &StateVector) -> Result<f64> {
    rule.eval(tau_closed(psi, phi)?.value)
}

/// `Σ_i μ_i Φ(τ(ψ_i, φ))`, with the ensemble's tail weight reported as an
/// error bar.
pub fn prob_ensemble(rule: &PhiRule, ensemble: &Ensemble, phi: &StateVector) -> Result<EnsembleProbability> {
    let per_member = ensemble
        .members()
        .iter()
        .map(|(w, psi)| Ok((*w, prob_pure(rule, psi, phi)?)))
        .collect::<Result<Vec<_>>>()?;
    let value = per_member.iter().map(|(w, p)| w * p).sum::<f64>();
    Ok(EnsembleProbability {
        value: value.clamp(0.0, 1.0),
        per_member,
        truncation_tail_bound: ensemble.tail_weight(),
    })
}

/// The rule families shipped with the library: the identity, three powers,
/// a two-piece affine rule and a tabulated smoothstep.
pub fn builtin_rules() -> Vec<PhiRule> {
    vec![
        PhiRule::identity(),
        PhiRule::power(2.0).expect("valid exponent"),
        PhiRule::power(0.5).expect("valid exponent"),
        PhiRule::power(1.2).expect("valid exponent"),
        PhiRule::piecewise_affine(vec![(0.0, 0.0), (0.5, 0.7), (1.0, 1.0)]).expect("valid knots"),
        PhiRule::from_fn(|p| p * p * (3.0 - 2.0 * p), DEFAULT_TABLE_POINTS).expect("valid table").0,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{haar_random_state_with, seeded_rng, trace_product};
    use crate::transition::tau_extremal_effect;
    use proptest::prelude::*;

    const H: f64 = std::f64::consts::FRAC_1_SQRT_2;

    fn builtins() -> Vec<PhiRule> {
        builtin_rules()
    }

    #[test]
    fn eval_examples() {
        assert_eq!(PhiRule::identity().eval(0.3).unwrap(), 0.3);
        assert!((PhiRule::power(2.0).unwrap().eval(0.5).unwrap() - 0.25).abs() < 1e-15);
        assert!((PhiRule::power(0.5).unwrap().eval(0.25).unwrap() - 0.5).abs() < 1e-15);
        let pw = PhiRule::piecewise_affine(vec![(0.0, 0.0), (0.5, 0.7), (1.0, 1.0)]).unwrap();
        assert!((pw.eval(0.25).unwrap() - 0.35).abs() < 1e-15);
        assert!((pw.eval(0.75).unwrap() - 0.85).abs() < 1e-15);
    }

    #[test]
    fn eval_rejects_out_of_range() {
        let id = PhiRule::identity();
        assert!(matches!(id.eval(1.1), Err(Error::ProbabilityOutOfRange(_))));
        assert!(id.eval(-1e-3).is_err());
        assert!(id.eval(f64::NAN).is_err());
        assert_eq!(id.eval(1.0 + 1e-13).unwrap(), 1.0);
        assert_eq!(id.eval(-1e-13).unwrap(), 0.0);
    }

    #[test]
    fn admissibility() {
        for rule in builtins() {
            let report = rule.check_admissibility(1e-3).unwrap();
            assert!(report.admissible, "{rule}");
            assert!(rule.is_admissible());
        }
        let bad = PhiRule::piecewise_affine(vec![(0.0, 0.0), (0.3, 0.6), (0.6, 0.4), (1.0, 1.0)]).unwrap();
        assert!(!bad.is_admissible());
        let report = bad.check_admissibility(0.01).unwrap();
        match report.violation {
            Some(Violation::Decreasing { x, next_x, drop }) => {
                assert_eq!(x, 0.3);
                assert_eq!(next_x, 0.6);
                assert!((drop - 0.2).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
        let shifted = PhiRule::tabulated(vec![0.1, 1.0]).unwrap();
        assert!(matches!(
            shifted.check_admissibility(0.1).unwrap().violation,
            Some(Violation::LowerEndpoint { .. })
        ));
        let short = PhiRule::tabulated(vec![0.0, 0.9]).unwrap();
        assert!(matches!(
            short.check_admissibility(0.1).unwrap().violation,
            Some(Violation::UpperEndpoint { .. })
        ));
        let dip = PhiRule::tabulated(vec![0.0, 0.6, 0.5, 1.0]).unwrap();
        assert!(matches!(
            dip.check_admissibility(0.01).unwrap().violation,
            Some(Violation::Decreasing { .. })
        ));
        assert!(PhiRule::identity().check_admissibility(0.0).is_err());
        assert!(PhiRule::identity().check_admissibility(0.2).is_err());
    }

    #[test]
    fn structural_validation() {
        assert!(PhiRule::power(0.0).is_err());
        assert!(PhiRule::power(f64::INFINITY).is_err());
        assert!(PhiRule::piecewise_affine(vec![(0.0, 0.0)]).is_err());
        assert!(PhiRule::piecewise_affine(vec![(0.0, 0.0), (0.9, 1.0)]).is_err());
        assert!(PhiRule::piecewise_affine(vec![(0.0, 0.0), (0.5, 0.5), (0.5, 0.6), (1.0, 1.0)]).is_err());
        assert!(PhiRule::tabulated(vec![0.0, 1.5]).is_err());
    }

    #[test]
    fn tabulation_error_is_reported() {
        let (rule, err) = PhiRule::from_fn(|p| p * p, DEFAULT_TABLE_POINTS).unwrap();
        // Midpoint error of linear interpolation of p² is h²/4.
        let h = 1.0 / 1024.0;
        assert!((err - h * h / 4.0).abs() < 1e-15);
        assert!((rule.eval(0.3).unwrap() - 0.09).abs() <= err + 1e-15);
    }

    #[test]
    fn serde_round_trip_recomputes_admissibility() {
        for rule in builtins() {
            let json = serde_json::to_string(&rule).unwrap();
            let back: PhiRule = serde_json::from_str(&json).unwrap();
            assert_eq!(back, rule);
        }
        let json = r#"{"kind":"power","alpha":2.0}"#;
        let rule: PhiRule = serde_json::from_str(json).unwrap();
        assert!(rule.is_admissible());
        assert!(serde_json::from_str::<PhiRule>(r#"{"kind":"power","alpha":-1.0}"#).is_err());
    }

    #[test]
    fn pure_probability_examples() {
        let plus = StateVector::from_real(&[H, H]).unwrap();
        let zero = StateVector::basis(2, 0);
        let one = StateVector::basis(2, 1);
        assert!((prob_pure(&PhiRule::identity(), &plus, &plus).unwrap() - 1.0).abs() < 1e-15);
        assert!((prob_pure(&PhiRule::power(2.0).unwrap(), &plus, &zero).unwrap() - 0.25).abs() < 1e-15);
        for rule in builtins() {
            assert_eq!(prob_pure(&rule, &one, &zero).unwrap(), 0.0);
        }
    }

    #[test]
    fn ensemble_probability_examples() {
        let plus = StateVector::from_real(&[H, H]).unwrap();
        let zero = StateVector::basis(2, 0);
        let one = StateVector::basis(2, 1);
        let psi = StateVector::from_real(&[0.6, 0.8]).unwrap();
        let single = Ensemble::finite(vec![(1.0, psi.clone())]).unwrap();
        let p = prob_ensemble(&PhiRule::power(2.0).unwrap(), &single, &plus).unwrap();
        assert_eq!(p.value, prob_pure(&PhiRule::power(2.0).unwrap(), &psi, &plus).unwrap());

        let half = Ensemble::finite(vec![(0.5, zero.clone()), (0.5, one.clone())]).unwrap();
        let p = prob_ensemble(&PhiRule::identity(), &half, &plus).unwrap();
        assert!((p.value - 0.5).abs() < 1e-15);
        assert_eq!(p.truncation_tail_bound, 0.0);

        let p = prob_ensemble(&PhiRule::power(2.0).unwrap(), &half, &zero).unwrap();
        assert!((p.value - 0.5).abs() < 1e-15);
        assert_eq!(p.per_member, vec![(0.5, 1.0), (0.5, 0.0)]);
    }

    proptest! {
        #[test]
        fn identity_matches_trace_rule(seed in any::<u64>(), k in 1usize..5) {
            let mut rng = seeded_rng(seed);
            let dim = 3;
            let raw: Vec<f64> = (0..k).map(|i| 1.0 + ((seed >> i) & 7) as f64).collect();
            let total: f64 = raw.iter().sum();
            let members = raw.iter().map(|w| (w / total, haar_random_state_with(dim, &mut rng))).collect();
            let ens = Ensemble::finite(members).unwrap();
            let phi = haar_random_state_with(dim, &mut rng);
            let p = prob_ensemble(&PhiRule::identity(), &ens, &phi).unwrap();
            let trace = trace_product(ens.barycenter().matrix(), tau_extremal_effect(&phi).matrix());
            prop_assert!((p.value - trace).abs() <= 1e-10 + p.truncation_tail_bound);
        }

        #[test]
        fn outputs_are_probabilities(p in 0.0f64..=1.0) {
            for rule in builtins() {
                let v = rule.eval(p).unwrap();
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn affine_in_weights(seed in any::<u64>(), t in 0.0f64..=1.0) {
            let mut rng = seeded_rng(seed);
            let a: Vec<StateVector> = (0..2).map(|_| haar_random_state_with(2, &mut rng)).collect();
            let b: Vec<StateVector> = (0..3).map(|_| haar_random_state_with(2, &mut rng)).collect();
            let phi = haar_random_state_with(2, &mut rng);
            let ea = Ensemble::finite(vec![(0.3, a[0].clone()), (0.7, a[1].clone())]).unwrap();
            let eb = Ensemble::finite(b.iter().map(|s| (1.0 / 3.0, s.clone())).collect()).unwrap();
            let mixed = ea.mix(&eb, t).unwrap();
            for rule in builtins() {
                let va = prob_ensemble(&rule, &ea, &phi).unwrap().value;
                let vb = prob_ensemble(&rule, &eb, &phi).unwrap().value;
                let vm = prob_ensemble(&rule, &mixed, &phi).unwrap().value;
                prop_assert!((vm - (t * va + (1.0 - t) * vb)).abs() <= 1e-12);
            }
        }
    }
}
