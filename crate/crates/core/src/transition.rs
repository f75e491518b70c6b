//! The operational transition probability between pure states.
//!
//! `τ(ψ, φ)` is the acceptance probability of `ψ` on the smallest effect
//! that accepts `φ` with certainty. In the quantum model that effect is the
//! rank-one projector onto `φ` and `τ(ψ, φ) = |⟨φ|ψ⟩|²`. [`tau_closed`]
//! evaluates the closed form; [`tau_optimized`] recovers the same number by
//! searching the constrained effect set directly, without using the formula.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    check_dim, hermitian_deviation, hermitian_eigen, spectral_map, trace_product, CMatrix,
    DensityMatrix, Effect, StateVector,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    Optimized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionResult {
    /// Clamped to `[0, 1]`.
    pub value: f64,
    pub method: Method,
    pub iterations: usize,
    /// Largest constraint violation of the effect that produced `value`.
    pub residual: f64,
}

/// Which end of the constrained effect set to search.
///
/// `Infimum` is the transition probability. `Supremum` is trivially 1 (the
/// unit effect accepts every state) and is exposed for comparison only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extremum {
    #[default]
    Infimum,
    Supremum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub tolerance: f64,
    pub max_iters: usize,
    pub max_dim: usize,
    pub extremum: Extremum,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iters: 5000,
            max_dim: 16,
            extremum: Extremum::Infimum,
        }
    }
}

fn clamp_probability(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// `|⟨φ|ψ⟩|²`.
pub fn tau_closed(psi: &StateVector, phi: &StateVector) -> Result<TransitionResult> {
    let overlap = phi.inner(psi)?;
    Ok(TransitionResult {
        value: clamp_probability(overlap.norm_sqr()),
        method: Method::ClosedForm,
        iterations: 0,
        residual: 0.0,
    })
}

/// The minimal effect accepting `phi` with certainty, `|φ⟩⟨φ|`.
pub fn tau_extremal_effect(phi: &StateVector) -> Effect {
    Effect::projector(phi)
}

/// Extension of `τ(·, φ)` to mixed states, `tr(ρ |φ⟩⟨φ|)`.
pub fn tau_mixed(rho: &DensityMatrix, phi: &StateVector) -> Result<f64> {
    Ok(clamp_probability(rho.fidelity_with_pure(phi)?))
}

/// Orthonormal basis (as columns) of the complement of `phi`.
fn complement_basis(phi: &StateVector) -> CMatrix {
    let d = phi.dim();
    let (_, vectors) = hermitian_eigen(&phi.projector());
    // Eigenvalues are ascending: the first d-1 columns span φ⊥.
    vectors.columns(0, d - 1).into_owned()
}

/// Projection onto `{F : 0 ≤ F ≤ I}` by clipping the spectrum.
fn project_box(f: &CMatrix) -> CMatrix {
    let (values, vectors) = hermitian_eigen(f);
    spectral_map(&values, &vectors, |x| x.clamp(0.0, 1.0))
}

/// `min_{0 ≤ X ≤ I} tr(G X)`: the sum of the negative eigenvalues of `G`.
fn box_minimum(g: &CMatrix) -> f64 {
    let (values, _) = hermitian_eigen(g);
    values.iter().filter(|&&x| x < 0.0).sum()
}

fn constraint_residual(effect: &CMatrix, phi: &StateVector) -> f64 {
    let v = phi.amplitudes();
    let fixed = (effect * v - v).iter().fold(0.0_f64, |acc, z| acc.max(z.norm()));
    let (values, _) = hermitian_eigen(effect);
    let below = (-values[0]).max(0.0);
    let above = (values[values.len() - 1] - 1.0).max(0.0);
    fixed.max(below).max(above).max(hermitian_deviation(effect))
}

/// Extremizes `⟨ψ|E|ψ⟩` over effects with `Eφ = φ` by projected gradient
/// descent.
///
/// Every such effect has the block form `E = |φ⟩⟨φ| ⊕ F` with `0 ≤ F ≤ I`
/// on `φ⊥`, so the search runs over `F` with spectral clipping as the
/// projection. The objective is linear in `F`, so the Frank-Wolfe gap
/// `tr(∇·F) − min_X tr(∇·X)` bounds the distance to the optimum and is used
/// as the stopping rule.
pub fn tau_optimized(
    psi: &StateVector,
    phi: &StateVector,
    config: &OptimizerConfig,
) -> Result<TransitionResult> {
    check_dim(phi.dim(), psi.dim())?;
    let d = phi.dim();
    if d > config.max_dim {
        return Err(Error::InvalidParameter {
            name: "dim",
            reason: format!("dimension {d} exceeds the optimizer maximum {}", config.max_dim),
        });
    }
    let anchor = phi.projector();
    let psi_proj = psi.projector();
    let evaluate = |e: &CMatrix| trace_product(&psi_proj, e);

    if d == 1 {
        return Ok(TransitionResult {
            value: clamp_probability(evaluate(&anchor)),
            method: Method::Optimized,
            iterations: 0,
            residual: constraint_residual(&anchor, phi),
        });
    }

    let q = complement_basis(phi);
    let embed = |f: &CMatrix| &anchor + &q * f * q.adjoint();
    // d⟨ψ|E|ψ⟩/dF = Q†|ψ⟩⟨ψ|Q; flipped for the supremum.
    let sign = match config.extremum {
        Extremum::Infimum => 1.0,
        Extremum::Supremum => -1.0,
    };
    let grad = (q.adjoint() * &psi_proj * &q).scale(sign);
    let grad_floor = box_minimum(&grad);
    let objective = |f: &CMatrix| sign * evaluate(&embed(f));

    let n = d - 1;
    let mut f = CMatrix::identity(n, n).scale(0.5);
    let mut value = objective(&f);
    let mut step = 1.0;
    let target_gap = 0.1 * config.tolerance;

    for iter in 0..=config.max_iters {
        let gap = trace_product(&grad, &f) - grad_floor;
        if gap <= target_gap {
            let e = embed(&f);
            return Ok(TransitionResult {
                value: clamp_probability(evaluate(&e)),
                method: Method::Optimized,
                iterations: iter,
                residual: constraint_residual(&e, phi),
            });
        }
        if iter == config.max_iters {
            let e = embed(&f);
            return Err(Error::NotConverged {
                best_value: clamp_probability(evaluate(&e)),
                residual: constraint_residual(&e, phi),
                gap,
                iterations: iter,
            });
        }
        // Backtracking on the sufficient-decrease condition of the
        // projected step; a successful step enlarges the next trial.
        loop {
            let candidate = project_box(&(&f - grad.scale(step)));
            let candidate_value = objective(&candidate);
            let moved = &candidate - &f;
            let predicted = trace_product(&grad, &moved) + moved.norm_squared() / (2.0 * step);
            if candidate_value <= value + predicted + 1e-15 || step < 1e-12 {
                f = candidate;
                value = candidate_value;
                step = (step * 2.0).min(1e8);
                break;
            }
            step *= 0.5;
        }
    }
    unreachable!("loop returns on its final iteration")
}

/// `|τ(ψ, φ) + τ(ψ, φ⊥) − 1|` for a qubit.
pub fn complementarity_check(psi: &StateVector, phi: &StateVector) -> Result<f64> {
    if phi.dim() != 2 {
        return Err(Error::InvalidParameter {
            name: "phi",
            reason: format!("complementarity is defined for qubits, got dimension {}", phi.dim()),
        });
    }
    check_dim(2, psi.dim())?;
    let a = phi.amplitudes();
    let perp = StateVector::new(vec![-a[1].conj(), a[0].conj()])?;
    let t = tau_closed(psi, phi)?.value;
    let t_perp = tau_closed(psi, &perp)?.value;
    Ok((t + t_perp - 1.0).abs())
}
