//! Ensembles, remote preparation through a purification, and the
//! state-level no-signaling identity.
//!
//! Given a purification `|Ψ⟩_AB` of `ω` and any ensemble `{μ_i, ψ_i}` with
//! barycenter `ω`, [`hjw_povm`] builds a measurement on A whose outcomes
//! leave B in `ψ_i` with probability `μ_i`. [`steer`] runs a measurement on
//! A and reports the conditional states on B.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    check_dim, haar_random_state_with, hermitize, max_abs, BipartiteState, CMatrix, CVector,
    DensityMatrix, Effect, Povm, StateVector, RECONSTRUCTION_TOL,
};

/// Tolerance on `Σ weights + tail = 1`.
pub const WEIGHT_TOL: f64 = 1e-10;
/// Outcomes less likely than this carry no conditional state.
pub const NULL_OUTCOME_PROBABILITY: f64 = 1e-12;
/// Schmidt coefficients at or below this are treated as zero.
const SCHMIDT_CUTOFF: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnsembleKind {
    Finite,
    /// The first terms of a countable ensemble; `tail_weight` is the weight
    /// of the omitted members.
    TruncatedCountable { tail_weight: f64 },
}

/// A weighted collection of pure states of a common dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EnsembleRecord", into = "EnsembleRecord")]
pub struct Ensemble {
    members: Vec<(f64, StateVector)>,
    kind: EnsembleKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MemberRecord {
    weight: f64,
    amplitudes: StateVector,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EnsembleRecord {
    #[serde(flatten)]
    kind: EnsembleKind,
    members: Vec<MemberRecord>,
}

impl TryFrom<EnsembleRecord> for Ensemble {
    type Error = Error;

    fn try_from(r: EnsembleRecord) -> Result<Self> {
        let members = r.members.into_iter().map(|m| (m.weight, m.amplitudes)).collect();
        Ensemble::new(members, r.kind)
    }
}

impl From<Ensemble> for EnsembleRecord {
    fn from(e: Ensemble) -> Self {
        EnsembleRecord {
            kind: e.kind,
            members: e
                .members
                .into_iter()
                .map(|(weight, amplitudes)| MemberRecord { weight, amplitudes })
                .collect(),
        }
    }
}

impl Ensemble {
    pub fn new(members: Vec<(f64, StateVector)>, kind: EnsembleKind) -> Result<Self> {
        let Some((_, first)) = members.first() else {
            return Err(Error::InvalidEnsemble("no members".into()));
        };
        let dim = first.dim();
        if let Some((_, s)) = members.iter().find(|(_, s)| s.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: s.dim(),
            });
        }
        if let Some((w, _)) = members.iter().find(|(w, _)| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidEnsemble(format!("invalid weight {w}")));
        }
        let tail = match kind {
            EnsembleKind::Finite => 0.0,
            EnsembleKind::TruncatedCountable { tail_weight } => {
                if !tail_weight.is_finite() || tail_weight < 0.0 {
                    return Err(Error::InvalidEnsemble(format!("invalid tail weight {tail_weight}")));
                }
                tail_weight
            }
        };
        let total = members.iter().map(|(w, _)| w).sum::<f64>() + tail;
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InvalidEnsemble(format!(
                "weights plus tail sum to {total}, not 1"
            )));
        }
        Ok(Self { members, kind })
    }

    pub fn finite(members: Vec<(f64, StateVector)>) -> Result<Self> {
        Self::new(members, EnsembleKind::Finite)
    }

    pub fn truncated(members: Vec<(f64, StateVector)>, tail_weight: f64) -> Result<Self> {
        Self::new(members, EnsembleKind::TruncatedCountable { tail_weight })
    }

    pub fn members(&self) -> &[(f64, StateVector)] {
        &self.members
    }

    pub fn kind(&self) -> EnsembleKind {
        self.kind
    }

    pub fn tail_weight(&self) -> f64 {
        match self.kind {
            EnsembleKind::Finite => 0.0,
            EnsembleKind::TruncatedCountable { tail_weight } => tail_weight,
        }
    }

    pub fn dim(&self) -> usize {
        self.members[0].1.dim()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// `Σ μ_i |ψ_i⟩⟨ψ_i|`, with the tail weight kept alongside.
    pub fn barycenter(&self) -> Barycenter {
        let d = self.dim();
        let matrix = self
            .members
            .iter()
            .fold(CMatrix::zeros(d, d), |acc, (w, s)| acc + s.projector().scale(*w));
        Barycenter {
            matrix: hermitize(matrix),
            tail_weight: self.tail_weight(),
        }
    }

    /// `t·self + (1−t)·other` as a single ensemble.
    pub fn mix(&self, other: &Ensemble, t: f64) -> Result<Ensemble> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::ProbabilityOutOfRange(t));
        }
        check_dim(self.dim(), other.dim())?;
        let members = self
            .members
            .iter()
            .map(|(w, s)| (t * w, s.clone()))
            .chain(other.members.iter().map(|(w, s)| ((1.0 - t) * w, s.clone())))
            .collect();
        let tail = t * self.tail_weight() + (1.0 - t) * other.tail_weight();
        match (self.kind, other.kind) {
            (EnsembleKind::Finite, EnsembleKind::Finite) => Ensemble::finite(members),
            _ => Ensemble::truncated(members, tail),
        }
    }

    /// Embeds every member into dimension `dim`.
    pub fn padded(&self, dim: usize) -> Result<Ensemble> {
        let members = self
            .members
            .iter()
            .map(|(w, s)| Ok((*w, s.padded(dim)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Ensemble {
            members,
            kind: self.kind,
        })
    }
}

/// The average state of an ensemble. For truncated ensembles the matrix has
/// trace `1 − tail_weight`.
#[derive(Debug, Clone, PartialEq)]
pub struct Barycenter {
    matrix: CMatrix,
    tail_weight: f64,
}

impl Barycenter {
    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn tail_weight(&self) -> f64 {
        self.tail_weight
    }

    /// The barycenter as a normalized state; fails for ensembles whose tail
    /// weight is not negligible.
    pub fn density_matrix(&self) -> Result<DensityMatrix> {
        if self.tail_weight > WEIGHT_TOL {
            return Err(Error::InvalidEnsemble(format!(
                "barycenter is missing tail weight {:e}",
                self.tail_weight
            )));
        }
        DensityMatrix::new(self.matrix.clone())
    }
}

/// One outcome of a measurement on A and what it leaves on B.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringOutcome {
    pub outcome_index: usize,
    pub probability: f64,
    /// `None` when the outcome has probability below
    /// [`NULL_OUTCOME_PROBABILITY`].
    pub conditional_state: Option<DensityMatrix>,
}

/// `tr_A[(M ⊗ I)|Ψ⟩⟨Ψ|] = Cᵀ Mᵀ C̄` for coefficient matrix `C`.
fn unnormalized_conditional(state: &BipartiteState, effect: &Effect) -> CMatrix {
    let c = state.amplitudes();
    hermitize(c.transpose() * effect.matrix().transpose() * c.conjugate())
}

fn check_povm_on_a(state: &BipartiteState, povm: &Povm) -> Result<()> {
    check_dim(state.dim_a(), povm.dim())
}

/// Measures `povm_a` on A and returns the outcome probabilities with the
/// normalized conditional states of B.
pub fn steer(state: &BipartiteState, povm_a: &Povm) -> Result<Vec<SteeringOutcome>> {
    check_povm_on_a(state, povm_a)?;
    Ok(povm_a
        .outcomes()
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let sigma = unnormalized_conditional(state, e);
            let p: f64 = sigma.diagonal().iter().map(|z| z.re).sum();
            let conditional_state = (p >= NULL_OUTCOME_PROBABILITY)
                .then(|| DensityMatrix::from_hermitian_unchecked(sigma.unscale(p)));
            SteeringOutcome {
                outcome_index: i,
                probability: p.clamp(0.0, 1.0),
                conditional_state,
            }
        })
        .collect())
}

/// Builds a measurement on A that steers B into `ensemble`.
///
/// With `Cᵀ = U Σ V†` (rank `r`) and pseudo-inverse `X = V Σ⁻¹ U†`, outcome
/// `i` is `μ_i |x̄_i⟩⟨x̄_i|` with `x_i = X ψ_i`; it leaves B in `ψ_i` with
/// probability `μ_i`. When the purification has zero Schmidt coefficients
/// the projector onto A's unused subspace is appended as a final outcome
/// (it never fires). A single-member ensemble yields the trivial POVM `{I}`.
pub fn hjw_povm(purification: &BipartiteState, ensemble: &Ensemble) -> Result<Povm> {
    let omega = crate::linalg::partial_trace_a(purification);
    check_dim(omega.dim(), ensemble.dim())?;
    let distance = max_abs(&(ensemble.barycenter().matrix() - omega.matrix()));
    if distance > RECONSTRUCTION_TOL {
        return Err(Error::BarycenterMismatch { distance });
    }

    let dim_a = purification.dim_a();
    let t = purification.amplitudes().transpose();
    let dim_b = t.nrows();
    let svd = t.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V†");
    let kept: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] > SCHMIDT_CUTOFF)
        .collect();
    let u_r = CMatrix::from_fn(dim_b, kept.len(), |i, j| u[(i, kept[j])]);
    let v_r = CMatrix::from_fn(dim_a, kept.len(), |i, j| v_t[(kept[j], i)].conj());
    let inv_s = CMatrix::from_fn(kept.len(), kept.len(), |i, j| {
        if i == j {
            (1.0 / svd.singular_values[kept[i]]).into()
        } else {
            0.0.into()
        }
    });
    let support = &u_r * u_r.adjoint();
    let pinv = &v_r * inv_s * u_r.adjoint();

    for (index, (_, psi)) in ensemble.members().iter().enumerate() {
        let v = psi.amplitudes();
        let outside = (v - &support * v).norm();
        if outside > RECONSTRUCTION_TOL {
            return Err(Error::MemberOutsideSupport {
                index,
                distance: outside,
            });
        }
    }

    if ensemble.len() == 1 {
        return Ok(Povm::trivial(dim_a));
    }

    let mut effects = ensemble
        .members()
        .iter()
        .map(|(w, psi)| {
            let x = (&pinv * psi.amplitudes()).conjugate();
            Effect::new(hermitize((&x * x.adjoint()).scale(*w)))
        })
        .collect::<Result<Vec<_>>>()?;

    if kept.len() < dim_a {
        let used = (&v_r * v_r.adjoint()).conjugate();
        let remainder = CMatrix::identity(dim_a, dim_a) - used;
        effects.push(Effect::new(hermitize(remainder))?);
    }
    Povm::new(effects)
}

/// Max-norm distance between B's average state under `povm1` and under
/// `povm2` (both measured on A).
pub fn verify_marginal_invariance(state: &BipartiteState, povm1: &Povm, povm2: &Povm) -> Result<f64> {
    check_povm_on_a(state, povm1)?;
    check_povm_on_a(state, povm2)?;
    let d = state.dim_b();
    let average = |povm: &Povm| {
        povm.outcomes()
            .iter()
            .fold(CMatrix::zeros(d, d), |acc, e| acc + unnormalized_conditional(state, e))
    };
    Ok(max_abs(&(average(povm1) - average(povm2))))
}

/// The first `truncation + 1` terms of the thermal ensemble
/// `{((1−r) rⁿ, |n⟩)}` in Fock space, with tail weight `r^(N+1)`.
pub fn geometric_fock_ensemble(r: f64, truncation: usize) -> Result<Ensemble> {
    if !(r > 0.0 && r < 1.0) {
        return Err(crate::error::invalid_parameter("r", format!("must lie in (0, 1), got {r}")));
    }
    let dim = truncation + 1;
    let members = (0..dim)
        .map(|n| ((1.0 - r) * r.powi(n as i32), StateVector::basis(dim, n)))
        .collect();
    Ensemble::truncated(members, r.powi(dim as i32))
}

/// Largest deviation of the outcome probabilities from the target weights
/// and smallest fidelity of the conditional states with the targets.
pub fn steering_fidelity(outcomes: &[SteeringOutcome], ensemble: &Ensemble) -> Result<(f64, f64)> {
    let mut weight_error: f64 = 0.0;
    let mut min_fidelity: f64 = 1.0;
    for ((w, psi), out) in ensemble.members().iter().zip(outcomes) {
        weight_error = weight_error.max((out.probability - w).abs());
        if *w >= NULL_OUTCOME_PROBABILITY {
            let f = match &out.conditional_state {
                Some(rho) => rho.fidelity_with_pure(psi)?,
                None => 0.0,
            };
            min_fidelity = min_fidelity.min(f);
        }
    }
    // Extra outcomes (the kernel remainder) must never fire.
    for out in outcomes.iter().skip(ensemble.len()) {
        weight_error = weight_error.max(out.probability);
    }
    Ok((weight_error, min_fidelity))
}

/// Random ensemble whose members lie in the span of `rank` Haar-random
/// vectors, with weights bounded away from zero.
pub fn random_ensemble<R: Rng + ?Sized>(dim: usize, rank: usize, members: usize, rng: &mut R) -> Ensemble {
    assert!(rank >= 1 && rank <= dim && members >= 1);
    let span: Vec<StateVector> = (0..rank).map(|_| haar_random_state_with(dim, rng)).collect();
    let states: Vec<StateVector> = (0..members)
        .map(|_| {
            let coeffs = haar_random_state_with(rank, rng);
            let v = span
                .iter()
                .zip(coeffs.amplitudes().iter())
                .fold(CVector::zeros(dim), |acc, (s, c)| acc + s.amplitudes() * *c);
            StateVector::normalized(v).expect("random combination is nonzero")
        })
        .collect();
    let raw: Vec<f64> = (0..members).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    Ensemble::finite(raw.iter().map(|w| w / total).zip(states).collect()).expect("weights are normalized")
}
