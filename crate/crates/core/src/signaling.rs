//! The steering experiment that turns a nonlinear probability rule into a
//! signal.
//!
//! Alice shares a purification of `ω = λ|ψ₁⟩⟨ψ₁| + (1−λ)|ψ₂⟩⟨ψ₂|` with Bob.
//! She either measures so as to split Bob's system into `{ψ₁, ψ₂}` or does
//! nothing, which leaves `ω` itself. Bob tests `e_φ`. Under `P = Φ∘τ` the two
//! choices give `λΦ(p₁) + (1−λ)Φ(p₂)` and `Φ(λp₁ + (1−λ)p₂)`; any nonzero
//! difference (the Jensen gap) is visible to Bob although his reduced state
//! is the same in both cases.

use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::error::{invalid_parameter, Result};
use crate::linalg::{derived_rng, purify, BipartiteState, DensityMatrix, Povm, StateVector};
use crate::phi_rules::{prob_pure, PhiRule};
use crate::steering::{hjw_povm, steer, verify_marginal_invariance, Ensemble};
use crate::transition::tau_mixed;

/// Conditional states this close to rank one are evaluated as pure states.
const PURITY_TOL: f64 = 1e-8;
/// Smallest pooled success (and failure) count for which the normal
/// approximation of the two-proportion test is trusted.
const MIN_POOLED_COUNT: u64 = 5;

fn check_probability(name: &'static str, p: f64) -> Result<()> {
    if p.is_finite() && (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(invalid_parameter(name, format!("must lie in [0, 1], got {p}")))
    }
}

fn check_mixing(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda > 0.0 && lambda < 1.0 {
        Ok(())
    } else {
        Err(invalid_parameter("lambda", format!("must lie in (0, 1), got {lambda}")))
    }
}

/// The qubit state `√p|0⟩ + √(1−p)|1⟩`, whose transition probability to
/// `|0⟩` is `p`.
pub fn qubit_with_transition(p: f64) -> Result<StateVector> {
    check_probability("p", p)?;
    StateVector::from_real(&[p.sqrt(), (1.0 - p).sqrt()])
}

/// Everything needed to run the two steering choices.
#[derive(Debug, Clone)]
pub struct SteeringScenario {
    pub p1: f64,
    pub p2: f64,
    pub lambda: f64,
    pub psi1: StateVector,
    pub psi2: StateVector,
    pub phi: StateVector,
    pub omega: DensityMatrix,
    pub purification: BipartiteState,
    /// The ensemble `λδ_ψ₁ + (1−λ)δ_ψ₂` (just `δ_ψ₁` when degenerate).
    pub split_ensemble: Ensemble,
    /// Steers Bob into `split_ensemble`.
    pub povm_split: Povm,
    /// `{I}`: leaves Bob with `ω`.
    pub povm_direct: Povm,
    /// `p1 == p2`; both choices then prepare the same pure state.
    pub degenerate: bool,
}

/// Builds the qubit scenario with `φ = |0⟩` and `ψᵢ = √pᵢ|0⟩ + √(1−pᵢ)|1⟩`.
pub fn build_two_level_scenario(p1: f64, p2: f64, lambda: f64) -> Result<SteeringScenario> {
    check_probability("p1", p1)?;
    check_probability("p2", p2)?;
    check_mixing(lambda)?;
    let psi1 = qubit_with_transition(p1)?;
    let psi2 = qubit_with_transition(p2)?;
    let phi = StateVector::basis(2, 0);
    let degenerate = p1 == p2;
    let split_ensemble = if degenerate {
        Ensemble::finite(vec![(1.0, psi1.clone())])?
    } else {
        Ensemble::finite(vec![(lambda, psi1.clone()), (1.0 - lambda, psi2.clone())])?
    };
    let omega = split_ensemble.barycenter().density_matrix()?;
    let purification = purify(&omega);
    let povm_split = hjw_povm(&purification, &split_ensemble)?;
    Ok(SteeringScenario {
        p1,
        p2,
        lambda,
        psi1,
        psi2,
        phi,
        omega,
        purification,
        split_ensemble,
        povm_split,
        povm_direct: Povm::trivial(2),
        degenerate,
    })
}

/// `λΦ(p₁) + (1−λ)Φ(p₂) − Φ(λp₁ + (1−λ)p₂)`.
pub fn jensen_gap(rule: &PhiRule, p1: f64, p2: f64, lambda: f64) -> Result<f64> {
    check_probability("p1", p1)?;
    check_probability("p2", p2)?;
    check_probability("lambda", lambda)?;
    let mean = lambda * p1 + (1.0 - lambda) * p2;
    Ok(lambda * rule.eval(p1)? + (1.0 - lambda) * rule.eval(p2)? - rule.eval(mean)?)
}

/// Bob's view of both steering choices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExperimentRecord {
    pub p1: f64,
    pub p2: f64,
    pub lambda: f64,
    /// `P(e_φ | ω; split)` through the steering pipeline.
    pub prob_split: f64,
    /// `P(e_φ | ω; direct)`.
    pub prob_direct: f64,
    pub gap: f64,
    pub analytic_gap: f64,
    pub pipeline_discrepancy: f64,
    /// Max-norm difference of Bob's average state between the two choices.
    pub marginal_shift: f64,
}

/// `Φ` applied to a conditional state: through the pure-state rule when the
/// state is rank one, through `τ(ρ, φ) = tr(ρ e_φ)` otherwise.
fn conditional_probability(rule: &PhiRule, rho: &DensityMatrix, phi: &StateVector) -> Result<f64> {
    let (values, vectors) = rho.eigen();
    let top = values.len() - 1;
    if 1.0 - values[top] <= PURITY_TOL {
        let psi = StateVector::normalized(vectors.column(top).into_owned())?;
        prob_pure(rule, &psi, phi)
    } else {
        rule.eval(tau_mixed(rho, phi)?)
    }
}

/// Bob's acceptance probability for `e_φ` after Alice measures `povm`.
fn steered_probability(rule: &PhiRule, scenario: &SteeringScenario, povm: &Povm) -> Result<f64> {
    let mut total = 0.0;
    for outcome in steer(&scenario.purification, povm)? {
        if let Some(rho) = &outcome.conditional_state {
            total += outcome.probability * conditional_probability(rule, rho, &scenario.phi)?;
        }
    }
    Ok(total.clamp(0.0, 1.0))
}

/// Runs both steering choices through the full pipeline and compares the
/// resulting gap with [`jensen_gap`].
pub fn run_steering_experiment(rule: &PhiRule, scenario: &SteeringScenario) -> Result<ExperimentRecord> {
    let prob_split = steered_probability(rule, scenario, &scenario.povm_split)?;
    let prob_direct = steered_probability(rule, scenario, &scenario.povm_direct)?;
    let gap = prob_split - prob_direct;
    let analytic_gap = jensen_gap(rule, scenario.p1, scenario.p2, scenario.lambda)?;
    let marginal_shift = verify_marginal_invariance(
        &scenario.purification,
        &scenario.povm_split,
        &scenario.povm_direct,
    )?;
    Ok(ExperimentRecord {
        p1: scenario.p1,
        p2: scenario.p2,
        lambda: scenario.lambda,
        prob_split,
        prob_direct,
        gap,
        analytic_gap,
        pipeline_discrepancy: (gap - analytic_gap).abs(),
        marginal_shift,
    })
}

/// Outcome of a simulated two-arm run of the experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectabilityReport {
    pub n_samples: u64,
    pub seed: u64,
    pub alpha: f64,
    pub prob_split: f64,
    pub prob_direct: f64,
    pub successes_split: u64,
    pub successes_direct: u64,
    pub freq_split: f64,
    pub freq_direct: f64,
    pub z_statistic: f64,
    pub p_value: f64,
    /// The test rejects equal acceptance rates at level `alpha`.
    pub reject: bool,
    /// Too few samples (or pooled successes/failures) for the normal
    /// approximation; no rejection is claimed.
    pub insufficient_sample: bool,
    /// Per-arm sample size for power `1 − alpha` at level `alpha`; `None`
    /// when the two arms have equal probabilities.
    pub n_star: Option<f64>,
}

/// Default test level.
pub const DEFAULT_ALPHA: f64 = 0.05;

/// Pooled two-proportion z-test; returns `(z, two-sided p-value)`.
pub fn two_proportion_z_test(successes1: u64, successes2: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let f1 = successes1 as f64 / nf;
    let f2 = successes2 as f64 / nf;
    let pooled = (successes1 + successes2) as f64 / (2.0 * nf);
    let se = (pooled * (1.0 - pooled) * 2.0 / nf).sqrt();
    if se == 0.0 {
        return (0.0, 1.0);
    }
    let z = (f1 - f2) / se;
    (z, erfc(z.abs() / std::f64::consts::SQRT_2))
}

/// Differences this small are rounding noise, not an effect to detect.
const NEGLIGIBLE_DIFFERENCE: f64 = 1e-12;

/// `(z_{1−α/2} + z_{1−β})² · p̄(1−p̄) · 2 / Δ²`, or `None` when the two
/// probabilities agree to rounding.
pub fn required_sample_size(p_a: f64, p_b: f64, alpha: f64, beta: f64) -> Option<f64> {
    let delta = p_a - p_b;
    if delta.abs() <= NEGLIGIBLE_DIFFERENCE {
        return None;
    }
    let normal = Normal::standard();
    let z_alpha = normal.inverse_cdf(1.0 - alpha / 2.0);
    let z_beta = normal.inverse_cdf(1.0 - beta);
    let mean = 0.5 * (p_a + p_b);
    Some((z_alpha + z_beta).powi(2) * mean * (1.0 - mean) * 2.0 / (delta * delta))
}

/// Simulates `n_samples` trials of `e_φ` under each steering choice and tests
/// whether the acceptance rates differ.
///
/// The two arms draw from independent streams of `seed`, so a report is a
/// pure function of `(rule, scenario, n_samples, seed, alpha)`.
pub fn detectability(
    rule: &PhiRule,
    scenario: &SteeringScenario,
    n_samples: u64,
    seed: u64,
    alpha: f64,
) -> Result<DetectabilityReport> {
    if n_samples == 0 {
        return Err(invalid_parameter("n_samples", "must be at least 1"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid_parameter("alpha", format!("must lie in (0, 1), got {alpha}")));
    }
    let record = run_steering_experiment(rule, scenario)?;
    Ok(simulate_arms(record.prob_split, record.prob_direct, n_samples, seed, alpha))
}

fn simulate_arms(prob_split: f64, prob_direct: f64, n: u64, seed: u64, alpha: f64) -> DetectabilityReport {
    let draw = |p: f64, stream: u64| {
        let mut rng = derived_rng(seed, stream);
        Binomial::new(n, p).expect("probability in [0, 1]").sample(&mut rng)
    };
    let successes_split = draw(prob_split, 1);
    let successes_direct = draw(prob_direct, 2);
    let (z_statistic, p_value) = two_proportion_z_test(successes_split, successes_direct, n);
    let pooled = successes_split + successes_direct;
    let insufficient_sample =
        n < 2 || pooled.min(2 * n - pooled) < MIN_POOLED_COUNT;
    DetectabilityReport {
        n_samples: n,
        seed,
        alpha,
        prob_split,
        prob_direct,
        successes_split,
        successes_direct,
        freq_split: successes_split as f64 / n as f64,
        freq_direct: successes_direct as f64 / n as f64,
        z_statistic,
        p_value,
        reject: !insufficient_sample && p_value < alpha,
        insufficient_sample,
        n_star: required_sample_size(prob_split, prob_direct, alpha, alpha),
    }
}

/// Runs [`detectability`] for seeds `base_seed .. base_seed + repetitions`
/// in parallel; results are in seed order.
pub fn repeat_detectability(
    rule: &PhiRule,
    scenario: &SteeringScenario,
    n_samples: u64,
    repetitions: u64,
    base_seed: u64,
    alpha: f64,
) -> Result<Vec<DetectabilityReport>> {
    // Validate once; the exact probabilities are shared by every repetition.
    let first = detectability(rule, scenario, n_samples, base_seed, alpha)?;
    let (ps, pd) = (first.prob_split, first.prob_direct);
    Ok((0..repetitions)
        .into_par_iter()
        .map(|i| simulate_arms(ps, pd, n_samples, base_seed.wrapping_add(i), alpha))
        .collect())
}

/// Fraction of reports that reject.
pub fn rejection_rate(reports: &[DetectabilityReport]) -> f64 {
    if reports.is_empty() {
        return 0.0;
    }
    reports.iter().filter(|r| r.reject).count() as f64 / reports.len() as f64
}

impl SteeringScenario {
    /// Checks the construction invariants; returns the largest violation.
    pub fn invariant_residual(&self) -> Result<f64> {
        use crate::linalg::{max_abs, partial_trace_a};
        use crate::transition::tau_closed;
        let t1 = (tau_closed(&self.psi1, &self.phi)?.value - self.p1).abs();
        let t2 = (tau_closed(&self.psi2, &self.phi)?.value - self.p2).abs();
        let bary = max_abs(&(self.split_ensemble.barycenter().matrix() - self.omega.matrix()));
        let marginal = partial_trace_a(&self.purification).distance(&self.omega)?;
        Ok(t1.max(t2).max(bary).max(marginal))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;
    use crate::linalg::CMatrix;
    use proptest::prelude::*;

    fn families() -> Vec<(PhiRule, i32)> {
        // (rule, curvature sign)
        vec![
            (PhiRule::identity(), 0),
            (PhiRule::power(2.0).unwrap(), 1),
            (PhiRule::power(1.2).unwrap(), 1),
            (PhiRule::power(3.5).unwrap(), 1),
            (PhiRule::power(0.5).unwrap(), -1),
            (PhiRule::power(0.8).unwrap(), -1),
        ]
    }

    #[test]
    fn scenario_examples() {
        let s = build_two_level_scenario(0.0, 1.0, 0.5).unwrap();
        assert!((s.psi1.amplitudes()[1].re - 1.0).abs() < 1e-15);
        assert!((s.psi2.amplitudes()[0].re - 1.0).abs() < 1e-15);
        assert!(max_abs(&(s.omega.matrix() - CMatrix::identity(2, 2).scale(0.5))) < 1e-15);
        assert!(!s.degenerate);
        assert!(s.invariant_residual().unwrap() <= 1e-10);

        let d = build_two_level_scenario(0.3, 0.3, 0.4).unwrap();
        assert!(d.degenerate);
        assert_eq!(d.psi1, d.psi2);
        assert!(max_abs(&(d.omega.matrix() - d.psi1.projector())) < 1e-15);
        assert_eq!(d.povm_split, Povm::trivial(2));

        assert!(build_two_level_scenario(0.1, 0.2, 0.0).is_err());
        assert!(build_two_level_scenario(0.1, 0.2, 1.0).is_err());
        assert!(build_two_level_scenario(-0.1, 0.2, 0.5).is_err());
    }

    #[test]
    fn jensen_gap_examples() {
        let id = PhiRule::identity();
        assert!(jensen_gap(&id, 0.2, 0.9, 0.3).unwrap().abs() < 1e-15);
        let sq = PhiRule::power(2.0).unwrap();
        assert!((jensen_gap(&sq, 0.0, 1.0, 0.5).unwrap() - 0.25).abs() < 1e-15);
        let root = PhiRule::power(0.5).unwrap();
        let expected = 0.5 - 0.5f64.sqrt();
        assert!((jensen_gap(&root, 0.0, 1.0, 0.5).unwrap() - expected).abs() < 1e-15);
        assert!((expected + 0.20711).abs() < 1e-5);
        assert!(jensen_gap(&id, 0.0, 1.5, 0.5).is_err());
    }

    #[test]
    fn experiment_examples() {
        let s = build_two_level_scenario(0.0, 1.0, 0.5).unwrap();
        let r = run_steering_experiment(&PhiRule::identity(), &s).unwrap();
        assert!(r.gap.abs() <= 1e-10);
        let r = run_steering_experiment(&PhiRule::power(2.0).unwrap(), &s).unwrap();
        assert!((r.gap - 0.25).abs() <= 1e-8);
        assert!(r.pipeline_discrepancy <= 1e-8);
        assert!(r.marginal_shift <= 1e-10);
        let d = build_two_level_scenario(0.35, 0.35, 0.5).unwrap();
        let r = run_steering_experiment(&PhiRule::power(2.0).unwrap(), &d).unwrap();
        assert!(r.gap.abs() <= 1e-10);
        assert!(r.analytic_gap.abs() <= 1e-15);
    }

    #[test]
    fn sign_law_on_grid() {
        let grid: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
        for (rule, sign) in families() {
            for &p1 in &grid {
                for &p2 in &grid {
                    if p1 == p2 {
                        continue;
                    }
                    for lambda in [0.25, 0.5, 0.75] {
                        let s = build_two_level_scenario(p1, p2, lambda).unwrap();
                        let r = run_steering_experiment(&rule, &s).unwrap();
                        assert!(r.pipeline_discrepancy <= 1e-8, "{rule} {p1} {p2} {lambda}: {r:?}");
                        assert!(r.marginal_shift <= 1e-10);
                        match sign {
                            0 => assert!(r.gap.abs() <= 1e-10),
                            1 => assert!(r.gap > 0.0, "{rule} {p1} {p2} {lambda}: {r:?}"),
                            _ => assert!(r.gap < 0.0, "{rule} {p1} {p2} {lambda}: {r:?}"),
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn z_test_and_sample_size() {
        let (z, p) = two_proportion_z_test(50, 50, 100);
        assert_eq!(z, 0.0);
        assert!((p - 1.0).abs() < 1e-15);
        // f1 = 0.6, f2 = 0.4, pooled 0.5, se = sqrt(0.25 * 2 / 100) = 0.0707107
        let (z, p) = two_proportion_z_test(60, 40, 100);
        assert!((z - 0.2 / (0.005f64).sqrt()).abs() < 1e-12);
        assert!((p - 0.0046777).abs() < 1e-6);
        assert_eq!(two_proportion_z_test(0, 0, 10), (0.0, 1.0));
        // (1.959964 + 1.644854)² · 0.375·0.625 · 2 / 0.0625 = 97.460325 (scipy)
        let n = required_sample_size(0.5, 0.25, 0.05, 0.05).unwrap();
        assert!((n - 97.460325).abs() < 1e-5, "{n}");
        assert!(required_sample_size(0.4, 0.4, 0.05, 0.05).is_none());
    }

    #[test]
    fn detectability_is_deterministic_and_flags_tiny_samples() {
        let s = build_two_level_scenario(0.0, 1.0, 0.5).unwrap();
        let rule = PhiRule::power(2.0).unwrap();
        let a = detectability(&rule, &s, 1000, 9, DEFAULT_ALPHA).unwrap();
        let b = detectability(&rule, &s, 1000, 9, DEFAULT_ALPHA).unwrap();
        assert_eq!(a, b);
        assert!((a.prob_split - 0.5).abs() < 1e-12);
        assert!((a.prob_direct - 0.25).abs() < 1e-12);
        let tiny = detectability(&rule, &s, 1, 9, DEFAULT_ALPHA).unwrap();
        assert!(tiny.insufficient_sample);
        assert!(!tiny.reject);
        assert!(detectability(&rule, &s, 0, 9, DEFAULT_ALPHA).is_err());
    }

    #[test]
    fn detectability_calibration_small() {
        let s = build_two_level_scenario(0.0, 1.0, 0.5).unwrap();
        let null = repeat_detectability(&PhiRule::identity(), &s, 2000, 400, 1, DEFAULT_ALPHA).unwrap();
        let rate = rejection_rate(&null);
        // Binomial(400, 0.05): sd ≈ 0.011.
        assert!((0.01..=0.09).contains(&rate), "{rate}");
        let alt = repeat_detectability(&PhiRule::power(2.0).unwrap(), &s, 2000, 100, 1, DEFAULT_ALPHA).unwrap();
        assert_eq!(rejection_rate(&alt), 1.0);
    }

    proptest! {
        #[test]
        fn state_level_no_signaling_holds_for_every_rule(p1 in 0.0f64..=1.0, p2 in 0.0f64..=1.0, lambda in 0.05f64..0.95) {
            prop_assume!((p1 - p2).abs() > 1e-3);
            let s = build_two_level_scenario(p1, p2, lambda).unwrap();
            prop_assert!(verify_marginal_invariance(&s.purification, &s.povm_split, &s.povm_direct).unwrap() <= 1e-10);
            prop_assert!(s.invariant_residual().unwrap() <= 1e-8);
        }
    }
}
