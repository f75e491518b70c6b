//! Dense complex linear algebra for finite-dimensional quantum models.
//!
//! All types validate their invariants on construction and are immutable
//! afterwards. Validation uses [`VALIDATION_TOL`]; identities that are
//! reconstructed through an eigensolver (purification round trips, POVM
//! completeness) are checked at [`RECONSTRUCTION_TOL`].

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Tolerance for Hermiticity, positivity, trace and norm checks.
pub const VALIDATION_TOL: f64 = 1e-9;
/// Tolerance for identities reconstructed through eigendecompositions.
pub const RECONSTRUCTION_TOL: f64 = 1e-8;

/// The seedable generator used for every random draw in the crate.
///
/// ChaCha with 8 rounds from `rand_chacha` 0.9; its output stream is fixed
/// by the algorithm, so seeded results are bit-reproducible.
pub type LabRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> LabRng {
    LabRng::seed_from_u64(seed)
}

/// A generator for an independent sub-stream of `seed`.
pub fn derived_rng(seed: u64, stream: u64) -> LabRng {
    let mut rng = LabRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn c64(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Largest absolute entry.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn hermitian_deviation(m: &CMatrix) -> f64 {
    max_abs(&(m - m.adjoint()))
}

/// Eigenvalues (ascending) and matching orthonormal eigenvectors (columns)
/// of a Hermitian matrix.
///
/// Degenerate eigenspaces come back in whatever basis the solver produces.
pub fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let sym = (m + m.adjoint()).scale(0.5);
    let eig = sym.symmetric_eigen();
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Rebuilds `V diag(f(λ)) V†` from an eigendecomposition.
pub fn spectral_map(values: &[f64], vectors: &CMatrix, f: impl Fn(f64) -> f64) -> CMatrix {
    let n = vectors.nrows();
    let mut out = CMatrix::zeros(n, n);
    for (k, &lambda) in values.iter().enumerate() {
        let w = f(lambda);
        if w == 0.0 {
            continue;
        }
        let v = vectors.column(k);
        out += (v * v.adjoint()).scale(w);
    }
    out
}

fn trace_re(m: &CMatrix) -> f64 {
    m.diagonal().iter().map(|z| z.re).sum()
}

/// `Re tr(a b)` without forming the product.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += (a[(i, j)] * b[(j, i)]).re;
        }
    }
    acc
}

/// A normalized pure state.
///
/// Serialized as a list of `[re, im]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct StateVector {
    amplitudes: CVector,
}

impl TryFrom<Vec<[f64; 2]>> for StateVector {
    type Error = Error;

    fn try_from(pairs: Vec<[f64; 2]>) -> Result<Self> {
        Self::new(pairs.into_iter().map(|[re, im]| c64(re, im)).collect())
    }
}

impl From<StateVector> for Vec<[f64; 2]> {
    fn from(state: StateVector) -> Self {
        state.amplitudes.iter().map(|z| [z.re, z.im]).collect()
    }
}

impl StateVector {
    pub fn new(amplitudes: Vec<C64>) -> Result<Self> {
        Self::from_vector(CVector::from_vec(amplitudes))
    }

    pub fn from_vector(amplitudes: CVector) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::InvalidState("state vector has dimension 0".into()));
        }
        if amplitudes.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidState("non-finite amplitude".into()));
        }
        let norm = amplitudes.norm();
        if (norm - 1.0).abs() > VALIDATION_TOL {
            return Err(Error::InvalidState(format!(
                "norm {norm} differs from 1 by more than {VALIDATION_TOL:e}"
            )));
        }
        Ok(Self { amplitudes })
    }

    /// Normalizes an arbitrary nonzero vector.
    pub fn normalized(amplitudes: CVector) -> Result<Self> {
        let norm = amplitudes.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::InvalidState("cannot normalize a zero or non-finite vector".into()));
        }
        Self::from_vector(amplitudes.unscale(norm))
    }

    pub fn from_real(amplitudes: &[f64]) -> Result<Self> {
        Self::new(amplitudes.iter().map(|&x| c64(x, 0.0)).collect())
    }

    /// Computational basis vector `|k⟩`.
    pub fn basis(dim: usize, k: usize) -> Self {
        assert!(k < dim, "basis index {k} out of range for dimension {dim}");
        let mut v = CVector::zeros(dim);
        v[k] = c64(1.0, 0.0);
        Self { amplitudes: v }
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &StateVector) -> Result<C64> {
        check_dim(self.dim(), other.dim())?;
        Ok(self.amplitudes.dotc(&other.amplitudes))
    }

    /// `|self⟩⟨self|`.
    pub fn projector(&self) -> CMatrix {
        &self.amplitudes * self.amplitudes.adjoint()
    }

    /// Embeds the state into a larger space by appending zero amplitudes.
    pub fn padded(&self, dim: usize) -> Result<Self> {
        if dim < self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: dim,
            });
        }
        let mut v = CVector::zeros(dim);
        v.rows_mut(0, self.dim()).copy_from(&self.amplitudes);
        Ok(Self { amplitudes: v })
    }
}

/// A positive semidefinite, unit-trace operator.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    matrix: CMatrix,
}

impl DensityMatrix {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::InvalidState("density matrix must be square and non-empty".into()));
        }
        let herm = hermitian_deviation(&matrix);
        if herm > VALIDATION_TOL {
            return Err(Error::InvalidState(format!("not Hermitian (deviation {herm:e})")));
        }
        let tr = trace_re(&matrix);
        if (tr - 1.0).abs() > VALIDATION_TOL {
            return Err(Error::InvalidState(format!("trace {tr} is not 1")));
        }
        let (values, _) = hermitian_eigen(&matrix);
        if values[0] < -VALIDATION_TOL {
            return Err(Error::InvalidState(format!("negative eigenvalue {}", values[0])));
        }
        Ok(Self { matrix })
    }

    pub fn from_pure(state: &StateVector) -> Self {
        Self {
            matrix: state.projector(),
        }
    }

    /// `I/d`.
    pub fn maximally_mixed(dim: usize) -> Self {
        Self {
            matrix: CMatrix::identity(dim, dim).unscale(dim as f64),
        }
    }

    /// Wraps a matrix known to satisfy the invariants up to round-off,
    /// symmetrizing away the anti-Hermitian residue.
    pub(crate) fn from_hermitian_unchecked(matrix: CMatrix) -> Self {
        Self {
            matrix: hermitize(matrix),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn eigen(&self) -> (Vec<f64>, CMatrix) {
        hermitian_eigen(&self.matrix)
    }

    /// `⟨ψ|ρ|ψ⟩`, the fidelity with a pure state.
    pub fn fidelity_with_pure(&self, psi: &StateVector) -> Result<f64> {
        check_dim(self.dim(), psi.dim())?;
        let v = psi.amplitudes();
        Ok(v.dotc(&(&self.matrix * v)).re)
    }

    /// Max-norm distance between the two matrices.
    pub fn distance(&self, other: &DensityMatrix) -> Result<f64> {
        check_dim(self.dim(), other.dim())?;
        Ok(max_abs(&(&self.matrix - &other.matrix)))
    }
}

/// A Hermitian operator `0 ≤ E ≤ I`.
#[derive(Debug, Clone, PartialEq)]
pub struct Effect {
    matrix: CMatrix,
}

impl Effect {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::InvalidEffect("effect must be square and non-empty".into()));
        }
        let herm = hermitian_deviation(&matrix);
        if herm > VALIDATION_TOL {
            return Err(Error::InvalidEffect(format!("not Hermitian (deviation {herm:e})")));
        }
        let (values, _) = hermitian_eigen(&matrix);
        let (lo, hi) = (values[0], values[values.len() - 1]);
        if lo < -VALIDATION_TOL || hi > 1.0 + VALIDATION_TOL {
            return Err(Error::InvalidEffect(format!(
                "spectrum [{lo}, {hi}] is not inside [0, 1]"
            )));
        }
        Ok(Self { matrix })
    }

    /// The unit effect.
    pub fn identity(dim: usize) -> Self {
        Self {
            matrix: CMatrix::identity(dim, dim),
        }
    }

    pub fn projector(state: &StateVector) -> Self {
        Self {
            matrix: state.projector(),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    /// `tr(ρE)`.
    pub fn probability(&self, rho: &DensityMatrix) -> Result<f64> {
        check_dim(self.dim(), rho.dim())?;
        Ok(trace_product(rho.matrix(), &self.matrix))
    }

    /// `⟨ψ|E|ψ⟩`.
    pub fn probability_pure(&self, psi: &StateVector) -> Result<f64> {
        check_dim(self.dim(), psi.dim())?;
        let v = psi.amplitudes();
        Ok(v.dotc(&(&self.matrix * v)).re)
    }
}

/// A complete, ordered collection of effects.
#[derive(Debug, Clone, PartialEq)]
pub struct Povm {
    outcomes: Vec<Effect>,
}

impl Povm {
    pub fn new(outcomes: Vec<Effect>) -> Result<Self> {
        let Some(first) = outcomes.first() else {
            return Err(Error::InvalidPovm("no outcomes".into()));
        };
        let dim = first.dim();
        let mut sum = CMatrix::zeros(dim, dim);
        for e in &outcomes {
            check_dim(dim, e.dim())?;
            sum += e.matrix();
        }
        let dev = max_abs(&(sum - CMatrix::identity(dim, dim)));
        if dev > RECONSTRUCTION_TOL {
            return Err(Error::InvalidPovm(format!(
                "elements sum to the identity only within {dev:e}"
            )));
        }
        Ok(Self { outcomes })
    }

    /// The one-outcome measurement `{I}`.
    pub fn trivial(dim: usize) -> Self {
        Self {
            outcomes: vec![Effect::identity(dim)],
        }
    }

    /// Projective measurement onto the columns of a unitary.
    pub fn from_basis(basis: &CMatrix) -> Result<Self> {
        let outcomes = basis
            .column_iter()
            .map(|c| {
                let v = c.into_owned();
                Effect::new(&v * v.adjoint())
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(outcomes)
    }

    pub fn computational(dim: usize) -> Self {
        Self::from_basis(&CMatrix::identity(dim, dim)).expect("identity columns form a basis")
    }

    pub fn dim(&self) -> usize {
        self.outcomes[0].dim()
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn outcomes(&self) -> &[Effect] {
        &self.outcomes
    }
}

/// A normalized vector of `C^dA ⊗ C^dB`, stored as its `dA × dB`
/// coefficient matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteState {
    amplitudes: CMatrix,
}

impl BipartiteState {
    pub fn new(amplitudes: CMatrix) -> Result<Self> {
        if amplitudes.nrows() == 0 || amplitudes.ncols() == 0 {
            return Err(Error::InvalidState("bipartite state has an empty factor".into()));
        }
        let norm = amplitudes.norm();
        if (norm - 1.0).abs() > VALIDATION_TOL {
            return Err(Error::InvalidState(format!(
                "Frobenius norm {norm} differs from 1"
            )));
        }
        Ok(Self { amplitudes })
    }

    pub fn dim_a(&self) -> usize {
        self.amplitudes.nrows()
    }

    pub fn dim_b(&self) -> usize {
        self.amplitudes.ncols()
    }

    pub fn amplitudes(&self) -> &CMatrix {
        &self.amplitudes
    }

    /// `(|00⟩ + |11⟩ + …)/√d`.
    pub fn maximally_entangled(dim: usize) -> Self {
        Self {
            amplitudes: CMatrix::identity(dim, dim).unscale((dim as f64).sqrt()),
        }
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// `a ⊗ b`.
pub fn tensor(a: &StateVector, b: &StateVector) -> BipartiteState {
    BipartiteState {
        amplitudes: a.amplitudes() * b.amplitudes().transpose(),
    }
}

/// Reduced state of subsystem B.
///
/// With coefficient matrix `C`, `tr_A |Ψ⟩⟨Ψ| = Cᵀ C̄`.
pub fn partial_trace_a(state: &BipartiteState) -> DensityMatrix {
    let c = state.amplitudes();
    let m = c.transpose() * c.conjugate();
    DensityMatrix {
        matrix: hermitize(m),
    }
}

/// Reduced state of subsystem A, `C C†`.
pub fn partial_trace_b(state: &BipartiteState) -> DensityMatrix {
    let c = state.amplitudes();
    DensityMatrix {
        matrix: hermitize(c * c.adjoint()),
    }
}

pub(crate) fn hermitize(m: CMatrix) -> CMatrix {
    (&m + m.adjoint()).scale(0.5)
}

/// Canonical purification `Σ_k √s_k |k⟩_A |e_k⟩_B` with `dim_a = dim_b`.
///
/// Zero eigenvalues are kept as zero Schmidt coefficients.
pub fn purify(omega: &DensityMatrix) -> BipartiteState {
    let (values, vectors) = omega.eigen();
    let d = omega.dim();
    let mut c = CMatrix::zeros(d, d);
    for (k, &s) in values.iter().enumerate() {
        let w = s.max(0.0).sqrt();
        for j in 0..d {
            c[(k, j)] = vectors[(j, k)].scale(w);
        }
    }
    // Renormalize away eigensolver round-off so the Frobenius norm is exact.
    let norm = c.norm();
    BipartiteState {
        amplitudes: c.unscale(norm),
    }
}

/// Haar-random pure state from a fresh generator seeded with `seed`.
pub fn haar_random_state(dim: usize, seed: u64) -> StateVector {
    haar_random_state_with(dim, &mut seeded_rng(seed))
}

/// Haar-random pure state drawn from `rng` (normalized complex Gaussian).
pub fn haar_random_state_with<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> StateVector {
    assert!(dim >= 1, "dimension must be positive");
    loop {
        let v = CVector::from_fn(dim, |_, _| {
            c64(rng.sample(StandardNormal), rng.sample(StandardNormal))
        });
        if v.norm() > 1e-300 {
            return StateVector::normalized(v).expect("nonzero Gaussian vector");
        }
    }
}

fn ginibre<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| {
        c64(rng.sample(StandardNormal), rng.sample(StandardNormal))
    })
}

/// Random density matrix of the given rank, `G G† / tr(G G†)` with a
/// `dim × rank` Ginibre matrix `G`.
pub fn random_density_matrix<R: Rng + ?Sized>(dim: usize, rank: usize, rng: &mut R) -> DensityMatrix {
    assert!(rank >= 1 && rank <= dim, "rank must lie in 1..=dim");
    let g = ginibre(dim, rank, rng);
    let m = &g * g.adjoint();
    let tr = trace_re(&m);
    DensityMatrix {
        matrix: hermitize(m.unscale(tr)),
    }
}

/// Random bipartite pure state with Gaussian coefficients.
pub fn random_bipartite_state<R: Rng + ?Sized>(dim_a: usize, dim_b: usize, rng: &mut R) -> BipartiteState {
    let g = ginibre(dim_a, dim_b, rng);
    let norm = g.norm();
    BipartiteState {
        amplitudes: g.unscale(norm),
    }
}

/// Random POVM with `outcomes` elements: `S^{-1/2} A_i S^{-1/2}` for random
/// positive `A_i` and `S = Σ A_i`.
pub fn random_povm<R: Rng + ?Sized>(dim: usize, outcomes: usize, rng: &mut R) -> Povm {
    assert!(outcomes >= 1, "a POVM needs at least one outcome");
    let parts: Vec<CMatrix> = (0..outcomes)
        .map(|_| {
            let g = ginibre(dim, dim, rng);
            &g * g.adjoint()
        })
        .collect();
    let sum = parts.iter().fold(CMatrix::zeros(dim, dim), |acc, p| acc + p);
    let (values, vectors) = hermitian_eigen(&sum);
    let inv_sqrt = spectral_map(&values, &vectors, |x| 1.0 / x.sqrt());
    let effects = parts
        .iter()
        .map(|p| Effect::new(hermitize(&inv_sqrt * p * &inv_sqrt)))
        .collect::<Result<Vec<_>>>()
        .expect("normalized positive parts are effects");
    Povm::new(effects).expect("normalized parts sum to the identity")
}
