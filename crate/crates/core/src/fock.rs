//! Truncated Fock spaces: coherent states, their analytic overlaps, and
//! convergence of ensemble probabilities under the thermal ensemble.

use serde::Serialize;

use crate::error::{invalid_parameter, Result};
use crate::linalg::{CVector, StateVector, C64};
use crate::phi_rules::{prob_ensemble, PhiRule};
use crate::steering::geometric_fock_ensemble;
use crate::transition::tau_closed;

/// Extra levels kept by the reference ensemble in
/// [`sigma_affinity_convergence`].
pub const REFERENCE_PADDING: usize = 50;

/// A coherent amplitude together with the Fock cutoff `N` (levels `0..=N`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoherentSpec {
    alpha: C64,
    truncation: usize,
}

impl CoherentSpec {
    /// Requires `|α|² ≤ N / 4`, which keeps the truncated mass tiny.
    pub fn new(alpha: C64, truncation: usize) -> Result<Self> {
        let spec = Self::unguarded(alpha, truncation)?;
        if alpha.norm_sqr() > truncation as f64 / 4.0 {
            return Err(invalid_parameter(
                "alpha",
                format!("|alpha|^2 = {} exceeds truncation/4 = {}", alpha.norm_sqr(), truncation as f64 / 4.0),
            ));
        }
        Ok(spec)
    }

    /// Skips the `|α|² ≤ N / 4` guard. Convergence scans need small cutoffs
    /// on purpose; the reported tail deficit says how much was cut.
    pub fn unguarded(alpha: C64, truncation: usize) -> Result<Self> {
        if truncation == 0 {
            return Err(invalid_parameter("truncation", "must be at least 1"));
        }
        if !(alpha.re.is_finite() && alpha.im.is_finite()) {
            return Err(invalid_parameter("alpha", "must be finite"));
        }
        Ok(Self { alpha, truncation })
    }

    pub fn alpha(&self) -> C64 {
        self.alpha
    }

    pub fn truncation(&self) -> usize {
        self.truncation
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoherentState {
    pub state: StateVector,
    /// Probability mass above the cutoff before renormalization,
    /// `1 − Σ_{n≤N} |cₙ|²`.
    pub tail_deficit: f64,
}

/// Truncated, renormalized coherent state `cₙ = e^{−|α|²/2} αⁿ / √(n!)`.
pub fn coherent_vector(spec: &CoherentSpec) -> Result<CoherentState> {
    let alpha = spec.alpha;
    let n_max = spec.truncation;
    let mut amplitudes = CVector::zeros(n_max + 1);
    let mut c = C64::new((-alpha.norm_sqr() / 2.0).exp(), 0.0);
    amplitudes[0] = c;
    for n in 0..n_max {
        c = c * alpha / ((n + 1) as f64).sqrt();
        amplitudes[n + 1] = c;
    }
    // Sum the tail term by term instead of subtracting the kept mass from 1,
    // which would bottom out at rounding level.
    let mean = alpha.norm_sqr();
    let mut term = c.norm_sqr();
    let mut tail = 0.0;
    let mut n = n_max;
    loop {
        term *= mean / (n + 1) as f64;
        n += 1;
        tail += term;
        if term == 0.0 || (n as f64 > mean && term <= tail * 1e-17) {
            break;
        }
    }
    if amplitudes.norm() == 0.0 {
        return Err(invalid_parameter("alpha", "all amplitudes underflow at this cutoff"));
    }
    Ok(CoherentState {
        state: StateVector::normalized(amplitudes)?,
        tail_deficit: tail,
    })
}

/// `|⟨β|α⟩|² = exp(−|α − β|²)` for untruncated coherent states.
pub fn tau_coherent_analytic(alpha: C64, beta: C64) -> f64 {
    (-(alpha - beta).norm_sqr()).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergencePoint {
    pub truncation: usize,
    pub error: f64,
}

fn check_ascending(truncations: &[usize]) -> Result<()> {
    if truncations.is_empty() {
        return Err(invalid_parameter("truncations", "must not be empty"));
    }
    if truncations.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid_parameter("truncations", "must be strictly ascending"));
    }
    Ok(())
}

/// Error of the truncated transition probability against the analytic value,
/// one entry per cutoff.
pub fn truncation_convergence(alpha: C64, beta: C64, truncations: &[usize]) -> Result<Vec<ConvergencePoint>> {
    check_ascending(truncations)?;
    let exact = tau_coherent_analytic(alpha, beta);
    truncations
        .iter()
        .map(|&n| {
            let a = coherent_vector(&CoherentSpec::unguarded(alpha, n)?)?;
            let b = coherent_vector(&CoherentSpec::unguarded(beta, n)?)?;
            let tau = tau_closed(&a.state, &b.state)?.value;
            Ok(ConvergencePoint {
                truncation: n,
                error: (tau - exact).abs(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AffinityPoint {
    pub truncation: usize,
    /// `|P_N − P_ref|` for the ensemble probability.
    pub deviation: f64,
    /// Weight dropped by the truncated ensemble, `r^(N+1)`.
    pub tail_bound: f64,
    pub within_bound: bool,
}

/// Neumaier-compensated sum.
fn compensated_sum(terms: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for x in terms {
        let t = sum + x;
        comp += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
        sum = t;
    }
    sum + comp
}

/// Compares the rule's probability on the thermal ensemble truncated at each
/// `N` with a reference truncated `REFERENCE_PADDING` levels above the
/// largest requested cutoff.
pub fn sigma_affinity_convergence(
    rule: &PhiRule,
    r: f64,
    phi: &StateVector,
    truncations: &[usize],
) -> Result<Vec<AffinityPoint>> {
    check_ascending(truncations)?;
    let n_ref = truncations[truncations.len() - 1] + REFERENCE_PADDING;
    let probability = |n: usize| {
        let ensemble = geometric_fock_ensemble(r, n)?;
        let dim = ensemble.dim().max(phi.dim());
        prob_ensemble(rule, &ensemble.padded(dim)?, &phi.padded(dim)?)
    };
    let reference = probability(n_ref)?;
    let ref_terms: Vec<f64> = reference.per_member.iter().map(|(w, p)| w * p).collect();
    truncations
        .iter()
        .map(|&n| {
            let truncated = probability(n)?;
            // Both sums share their leading terms; compensated summation of
            // the difference keeps the result meaningful far below 1e-16.
            let deviation = compensated_sum(
                ref_terms
                    .iter()
                    .copied()
                    .chain(truncated.per_member.iter().map(|(w, p)| -(w * p))),
            )
            .abs();
            let tail_bound = truncated.truncation_tail_bound;
            Ok(AffinityPoint {
                truncation: n,
                deviation,
                tail_bound,
                within_bound: deviation <= tail_bound,
            })
        })
        .collect()
}
