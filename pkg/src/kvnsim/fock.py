"""Finite-mode, fixed-particle-number truncation of the second-quantized
transport generator, with exact propagation and operator-structure checks.

The single-particle modes are the grid-cell indicator functions divided by
the square root of the cell volume, so they are orthonormal under the grid
inner product and the phase-space density diagnostics are simply the mode
occupations per cell volume.  Centered differences with periodic wrap on
both axes make (1/i) d/dq and (1/i) d/dp exactly Hermitian, hence the
assembled generator is Hermitian by construction and the truncated theory
is exactly unitary.

Bose statistics only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from math import comb

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh
from scipy.sparse.linalg import expm_multiply

from .phase_space import DensityField, NoPair, PhaseGrid, ProblemSpec, spatial_density

__all__ = [
    "ModeBasis",
    "OneBodyMatrix",
    "TwoBodyTensor",
    "FockBasis",
    "FockState",
    "FockOperator",
    "DimensionCapError",
    "build_one_body",
    "build_two_body",
    "assemble_liouvillian",
    "embed_product_state",
    "propagate",
    "density_expectation",
    "quantum_vlasov_residual",
    "QuantumVlasovResult",
    "kernel_hermiticity_report",
    "KernelHermiticityReport",
]

HERMITICITY_TOL = 1e-12
DENSE_EIG_CUTOFF = 2000
DEFAULT_DIMENSION_CAP = 200_000


class DimensionCapError(ValueError):
    """The Fock-sector dimension exceeds the configured cap."""


def _require_periodic(grid: PhaseGrid):
    if not (grid.periodic_q and grid.periodic_p):
        raise ValueError(
            "both grid axes must be flagged periodic: skew-symmetric centered "
            "differencing (and hence Hermiticity) needs the wrap"
        )


def _centered_difference(n: int, delta: float) -> sp.csr_matrix:
    """Periodic centered first-difference matrix (real antisymmetric)."""
    rows = np.repeat(np.arange(n), 2)
    cols = np.empty(2 * n, dtype=int)
    vals = np.empty(2 * n)
    cols[0::2] = (np.arange(n) + 1) % n
    cols[1::2] = (np.arange(n) - 1) % n
    vals[0::2] = 1.0 / (2.0 * delta)
    vals[1::2] = -1.0 / (2.0 * delta)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _max_abs(matrix: sp.spmatrix) -> float:
    m = matrix.tocoo()
    return float(np.max(np.abs(m.data))) if m.nnz else 0.0


@dataclass(frozen=True)
class ModeBasis:
    """Cell-indicator modes of a phase grid, orthonormalized by 1/sqrt(vol).

    Mode i covers cell (iq, ip) with i = iq * n_p + ip (row-major).
    """

    grid: PhaseGrid

    @property
    def n_modes(self) -> int:
        return self.grid.n_q * self.grid.n_p

    @property
    def iq_of_mode(self) -> np.ndarray:
        return np.repeat(np.arange(self.grid.n_q), self.grid.n_p)

    @property
    def ip_of_mode(self) -> np.ndarray:
        return np.tile(np.arange(self.grid.n_p), self.grid.n_q)

    @property
    def q_of_mode(self) -> np.ndarray:
        return self.grid.q_centers[self.iq_of_mode]

    @property
    def p_of_mode(self) -> np.ndarray:
        return self.grid.p_centers[self.ip_of_mode]

    def mode_index(self, iq: int, ip: int) -> int:
        return iq * self.grid.n_p + ip

    def gram_matrix(self) -> np.ndarray:
        """Grid inner products of the modes; the identity exactly."""
        return np.eye(self.n_modes)


@dataclass(frozen=True)
class OneBodyMatrix:
    """Discretized one-particle generator; Hermitian to 1e-12 by contract."""

    matrix: sp.csr_matrix

    def __post_init__(self):
        dev = _max_abs(self.matrix - self.matrix.getH())
        if dev > HERMITICITY_TOL:
            raise ValueError(f"one-body matrix is not Hermitian: deviation {dev:.3e}")

    @property
    def n_modes(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class TwoBodyTensor:
    """Discretized pair generator as a sparse matrix over mode pairs.

    ``matrix[(i*M + j), (k*M + l)]`` is the coefficient of a+_i a+_j a_l a_k.
    The factored pieces (pair-gradient table over q-columns and the
    momentum-difference stencil) are kept for fast sector assembly.
    """

    matrix: sp.csr_matrix
    gradv_q: np.ndarray          # grad v(q_a - q_a') with minimum-image wrap
    momentum_stencil: sp.csr_matrix   # (1/i) d/dp as an M x M one-body matrix

    def __post_init__(self):
        # Hermiticity of the coefficient matrix carries over to the
        # exchange-symmetrized two-particle operator
        dev = _max_abs(self.matrix - self.matrix.getH())
        if dev > HERMITICITY_TOL:
            raise ValueError(f"two-body tensor is not Hermitian: deviation {dev:.3e}")

    @property
    def is_empty(self) -> bool:
        return self.matrix.nnz == 0


def build_one_body(grid: PhaseGrid, spec: ProblemSpec) -> OneBodyMatrix:
    """(p/m) (1/i) d/dq - grad U(q) (1/i) d/dp on the cell-indicator modes."""
    _require_periodic(grid)
    Dq = _centered_difference(grid.n_q, grid.dq)
    Dp = _centered_difference(grid.n_p, grid.dp)
    p_over_m = sp.diags(grid.p_centers / spec.mass)
    grad_u = sp.diags(spec.external_gradient(grid.q_centers))
    h = (-1j) * sp.kron(Dq, p_over_m, format="csr") \
        + (1j) * sp.kron(grad_u, Dp, format="csr")
    h = h.tocsr()
    h.eliminate_zeros()
    return OneBodyMatrix(matrix=h)


def build_two_body(grid: PhaseGrid, spec: ProblemSpec) -> TwoBodyTensor:
    """-grad v(q - q') (1/i) d/dp acting on the unprimed argument."""
    _require_periodic(grid)
    M = grid.n_q * grid.n_p
    Dp = _centered_difference(grid.n_p, grid.dp)
    dp1 = ((-1j) * sp.kron(sp.identity(grid.n_q), Dp)).tocsr()
    if isinstance(spec.pair, NoPair):
        return TwoBodyTensor(
            matrix=sp.csr_matrix((M * M, M * M), dtype=complex),
            gradv_q=np.zeros((grid.n_q, grid.n_q)),
            momentum_stencil=dp1,
        )
    q = grid.q_centers
    disp = grid.wrap_displacement(q[:, None] - q[None, :])
    gradv_q = spec.pair.gradient(disp)
    modes = ModeBasis(grid)
    iq = modes.iq_of_mode
    weights = -gradv_q[iq[:, None], iq[None, :]].ravel()
    big = sp.kron(dp1, sp.identity(M), format="csr")
    matrix = sp.diags(weights).dot(big).tocsr()
    matrix.eliminate_zeros()
    return TwoBodyTensor(matrix=matrix, gradv_q=gradv_q, momentum_stencil=dp1)


@dataclass(frozen=True)
class FockBasis:
    """Occupation-number basis of the fixed-N bosonic sector over M modes.

    States are ordered by the lexicographically sorted mode-index tuples of
    the particles, which fixes a bijective index map.
    """

    n_modes: int
    n_particles: int
    occupations: np.ndarray = field(init=False, repr=False)
    _index: dict = field(init=False, repr=False)

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        occs = []
        for combo in combinations_with_replacement(range(self.n_modes), self.n_particles):
            occ = np.zeros(self.n_modes, dtype=np.int64)
            for i in combo:
                occ[i] += 1
            occs.append(occ)
        occupations = np.array(occs, dtype=np.int64)
        object.__setattr__(self, "occupations", occupations)
        object.__setattr__(
            self, "_index", {tuple(row): k for k, row in enumerate(occupations)}
        )

    @property
    def dimension(self) -> int:
        return self.occupations.shape[0]

    def index_of(self, occupation) -> int:
        return self._index[tuple(int(n) for n in occupation)]

    @staticmethod
    def sector_dimension(n_modes: int, n_particles: int) -> int:
        return comb(n_modes + n_particles - 1, n_particles)


@dataclass
class FockState:
    """Complex amplitude vector over a FockBasis."""

    basis: FockBasis
    amplitudes: np.ndarray

    def __post_init__(self):
        amp = np.ascontiguousarray(self.amplitudes, dtype=complex)
        if amp.shape != (self.basis.dimension,):
            raise ValueError("amplitude vector does not match the basis dimension")
        if not (np.all(np.isfinite(amp.real)) and np.all(np.isfinite(amp.imag))):
            raise ValueError("amplitudes must be finite")
        self.amplitudes = amp

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))


@dataclass
class FockOperator:
    """Sparse operator on a FockBasis with a verified Hermitian flag."""

    basis: FockBasis
    matrix: sp.csr_matrix
    hermitian: bool = field(init=False)
    _eig: tuple | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.matrix.shape != (self.basis.dimension, self.basis.dimension):
            raise ValueError("matrix shape does not match the basis dimension")
        self.hermitian = _max_abs(self.matrix - self.matrix.getH()) <= HERMITICITY_TOL

    def hermiticity_deviation(self) -> float:
        return _max_abs(self.matrix - self.matrix.getH())

    def _eigensystem(self):
        if self._eig is None:
            vals, vecs = eigh(self.matrix.toarray())
            self._eig = (vals, vecs)
        return self._eig


def assemble_liouvillian(one_body: OneBodyMatrix, two_body: TwoBodyTensor,
                         basis: FockBasis,
                         dimension_cap: int = DEFAULT_DIMENSION_CAP) -> FockOperator:
    """Lift the one- and two-body generators to the fixed-N bosonic sector.

    The lift is sum_ij h_ij a+_i a_j plus sum g_(ij)(kl) a+_i a+_j a_l a_k
    with no extra prefactor on the pair term: that convention makes the N=2
    sector reproduce the first-quantized two-particle generator
    h(x) + h(x') + g(x,x') + g(x',x) exactly, which is the normative test.
    Total occupation is conserved move by move, so [L, N] = 0 exactly.
    """
    M = basis.n_modes
    if one_body.n_modes != M:
        raise ValueError("one-body matrix size does not match the basis modes")
    dim = basis.dimension
    if dim > dimension_cap:
        raise DimensionCapError(
            f"sector dimension {dim} exceeds the cap {dimension_cap}"
        )
    occ = basis.occupations
    rows: list[int] = []
    cols: list[int] = []
    vals: list[complex] = []
    diag = np.zeros(dim, dtype=complex)

    h = one_body.matrix.tocoo()
    for i, k, hik in zip(h.row, h.col, h.data):
        if i == k:
            diag += hik * occ[:, i]
            continue
        sources = np.nonzero(occ[:, k] > 0)[0]
        for s in sources:
            n_k = occ[s, k]
            n_i = occ[s, i]
            target = occ[s].copy()
            target[k] -= 1
            target[i] += 1
            r = basis.index_of(target)
            rows.append(r)
            cols.append(int(s))
            vals.append(hik * np.sqrt(n_k * (n_i + 1)))

    if not two_body.is_empty:
        grid_nq = two_body.gradv_q.shape[0]
        n_p = M // grid_nq
        # occupation per q-column, and the pair-weight field W(s, a)
        occ_q = occ.reshape(dim, grid_nq, n_p).sum(axis=2)
        w_field = -occ_q @ two_body.gradv_q.T  # W(s, a) = -sum_a' gradv[a,a'] n_s(a')
        iq_of_mode = np.repeat(np.arange(grid_nq), n_p)
        dp1 = two_body.momentum_stencil.tocoo()
        for i, k, dval in zip(dp1.row, dp1.col, dp1.data):
            if i == k:
                continue
            a_i = iq_of_mode[i]
            sources = np.nonzero(occ[:, k] > 0)[0]
            for s in sources:
                n_k = occ[s, k]
                n_i = occ[s, i]
                target = occ[s].copy()
                target[k] -= 1
                target[i] += 1
                r = basis.index_of(target)
                rows.append(r)
                cols.append(int(s))
                vals.append(dval * w_field[s, a_i] * np.sqrt(n_k * (n_i + 1)))

    matrix = sp.coo_matrix((vals, (rows, cols)), shape=(dim, dim), dtype=complex).tocsr()
    matrix = matrix + sp.diags(diag)
    return FockOperator(basis=basis, matrix=matrix.tocsr())


def embed_product_state(psi: np.ndarray, basis: FockBasis, modes: ModeBasis) -> FockState:
    """Embed a symmetric N-particle grid function into the fixed-N sector.

    Expanding the grid function in the orthonormal indicator modes and
    applying the bosonic creation operators yields occupation amplitudes
    c * sqrt(N! / prod n_i!); the embedding is an isometry, so a unit-norm
    grid function gives a unit-norm state.  Supported for N = 1 (vector of
    cell values, shape (M,) or (n_q, n_p)) and N = 2 (matrix of cell-pair
    values, shape (M, M), symmetric to 1e-12).
    """
    M = modes.n_modes
    vol = modes.grid.cell_volume
    psi = np.asarray(psi, dtype=complex)
    if basis.n_particles == 1:
        flat = psi.reshape(M) if psi.shape == (modes.grid.n_q, modes.grid.n_p) else psi
        if flat.shape != (M,):
            raise ValueError("one-particle grid function must have M values")
        return FockState(basis, flat * np.sqrt(vol))
    if basis.n_particles == 2:
        if psi.shape != (M, M):
            raise ValueError("two-particle grid function must be an (M, M) array")
        scale = np.max(np.abs(psi))
        if scale > 0 and np.max(np.abs(psi - psi.T)) > 1e-12 * scale:
            raise ValueError("two-particle grid function must be exchange symmetric")
        coeff = psi * vol
        amp = np.zeros(basis.dimension, dtype=complex)
        occ = basis.occupations
        for s in range(basis.dimension):
            nz = np.nonzero(occ[s])[0]
            if nz.size == 1:
                amp[s] = coeff[nz[0], nz[0]]
            else:
                amp[s] = np.sqrt(2.0) * coeff[nz[0], nz[1]]
        return FockState(basis, amp)
    raise NotImplementedError("grid-function embedding is implemented for N <= 2")


def propagate(state: FockState, op: FockOperator, t: float,
              dense_cutoff: int = DENSE_EIG_CUTOFF) -> FockState:
    """exp(-i L t) applied to the state.

    Dense eigendecomposition below ``dense_cutoff`` (deterministic, cached on
    the operator), Krylov-based action of the matrix exponential above.
    """
    if not op.hermitian:
        raise ValueError(
            f"operator is not Hermitian (deviation {op.hermiticity_deviation():.3e}); "
            "refusing to propagate"
        )
    if state.basis is not op.basis and state.basis.dimension != op.basis.dimension:
        raise ValueError("state and operator bases do not match")
    if t == 0.0:
        return FockState(state.basis, state.amplitudes.copy())
    if op.basis.dimension <= dense_cutoff:
        vals, vecs = op._eigensystem()
        phases = np.exp(-1j * vals * t)
        amp = vecs @ (phases * (vecs.conj().T @ state.amplitudes))
    else:
        amp = expm_multiply((-1j * t) * op.matrix, state.amplitudes)
    return FockState(state.basis, amp)


def density_expectation(state: FockState, modes: ModeBasis) -> DensityField:
    """Per-cell occupation expectations over the cell volume.

    Integrates to the particle number exactly (diagonal trace identity).
    """
    grid = modes.grid
    w = np.abs(state.amplitudes) ** 2
    mode_occ = state.basis.occupations.T @ w
    values = (mode_occ / grid.cell_volume).reshape(grid.n_q, grid.n_p)
    return DensityField(grid, values)


def _roll_derivative(values: np.ndarray, delta: float, axis: int) -> np.ndarray:
    return (np.roll(values, -1, axis=axis) - np.roll(values, 1, axis=axis)) / (2 * delta)


@dataclass(frozen=True)
class QuantumVlasovResult:
    """Residual of the transport identity for the density expectations.

    All spatial terms use the same centered periodic stencils as the
    generator assembly, so the residual vanishes to stencil-consistency
    order; the time derivative enters both as a central difference of
    propagated expectations and exactly through the commutator, which
    isolates the finite-difference component.
    """

    residual: np.ndarray
    dt_term_fd: np.ndarray
    dt_term_exact: np.ndarray
    transport_term: np.ndarray
    force_external_term: np.ndarray
    force_pair_term: np.ndarray

    @property
    def max_residual(self) -> float:
        return float(np.max(np.abs(self.residual)))

    @property
    def residual_exact_dt(self) -> np.ndarray:
        """Residual with the commutator time derivative instead of the fd one."""
        return (self.dt_term_exact + self.transport_term
                + self.force_external_term + self.force_pair_term)

    @property
    def dt_component(self) -> np.ndarray:
        """Finite-difference error of the time-derivative term alone."""
        return self.dt_term_fd - self.dt_term_exact


def quantum_vlasov_residual(state: FockState, op: FockOperator, modes: ModeBasis,
                            spec: ProblemSpec, t: float, dt_fd: float) -> QuantumVlasovResult:
    """Assemble the transport-identity residual for the propagated state."""
    if not dt_fd > 0:
        raise ValueError("dt_fd must be > 0")
    grid = modes.grid
    vol = grid.cell_volume
    shape = (grid.n_q, grid.n_p)

    at = propagate(state, op, t)
    plus = propagate(state, op, t + dt_fd)
    minus = propagate(state, op, t - dt_fd)
    dens = density_expectation(at, modes).values
    dens_p = density_expectation(plus, modes).values
    dens_m = density_expectation(minus, modes).values
    dt_fd_term = (dens_p - dens_m) / (2 * dt_fd)

    # exact d/dt via the commutator: d<n_i>/dt = -2 Im <L a, n_i a>
    w = op.matrix @ at.amplitudes
    u = np.conj(w) * at.amplitudes
    z = at.basis.occupations.T @ u
    dt_exact_term = (-2.0 * np.imag(z) / vol).reshape(shape)

    transport = (grid.p_centers[None, :] / spec.mass) * _roll_derivative(dens, grid.dq, axis=0)
    grad_u = spec.external_gradient(grid.q_centers)
    d_dens_dp = _roll_derivative(dens, grid.dp, axis=1)
    ext_term = -grad_u[:, None] * d_dens_dp

    if isinstance(spec.pair, NoPair):
        pair_term = np.zeros(shape)
    else:
        q = grid.q_centers
        gradv_q = spec.pair.gradient(grid.wrap_displacement(q[:, None] - q[None, :]))
        weights = np.abs(at.amplitudes) ** 2
        occ = at.basis.occupations
        corr = (occ * weights[:, None]).T @ occ  # <n_j n_i>
        corr4 = corr.reshape(grid.n_q, grid.n_p, grid.n_q, grid.n_p) / vol**2
        d_corr = _roll_derivative(corr4, grid.dp, axis=3)
        inner = d_corr.sum(axis=1) * grid.dp          # (a', a, b)
        pair_term = -grid.dq * np.einsum("ij,jik->ik", gradv_q, inner)

    residual = dt_fd_term + transport + ext_term + pair_term
    return QuantumVlasovResult(
        residual=residual,
        dt_term_fd=dt_fd_term,
        dt_term_exact=dt_exact_term,
        transport_term=transport,
        force_external_term=ext_term,
        force_pair_term=pair_term,
    )


@dataclass(frozen=True)
class KernelHermiticityReport:
    """Hermiticity deviations of the mean-field force and drag kernels."""

    force_hermiticity: float       # max |F - F^dag|, F diagonal so 0 exactly
    drag_antihermiticity: float    # max over q of |K(q) + K(q)^dag|


def kernel_hermiticity_report(modes: ModeBasis, spec: ProblemSpec,
                              density_ref: DensityField) -> KernelHermiticityReport:
    """Check the operator structure behind the density transport identity.

    The mean-field force kernel is diagonal multiplication, hence Hermitian;
    the drag kernel pairs the pair-potential gradient with the plain d/dp
    stencil, whose periodic antisymmetry is the discrete integration by
    parts, hence anti-Hermitian.
    """
    grid = modes.grid
    _require_periodic(grid)
    q = grid.q_centers
    gradv_q = spec.pair.gradient(grid.wrap_displacement(q[:, None] - q[None, :]))
    n_ref = spatial_density(density_ref)
    f_vals = -spec.external_gradient(q) - grid.dq * (gradv_q @ n_ref)
    f_diag = sp.diags(np.repeat(f_vals, grid.n_p)).tocsr()
    f_dev = _max_abs(f_diag - f_diag.getH())

    Dp = _centered_difference(grid.n_p, grid.dp)
    dp_plain = sp.kron(sp.identity(grid.n_q), Dp).tocsr()
    iq = modes.iq_of_mode
    drag_dev = 0.0
    for a in range(grid.n_q):
        kernel = sp.diags(gradv_q[a, iq]).dot(dp_plain)
        drag_dev = max(drag_dev, _max_abs(kernel + kernel.getH()))
    return KernelHermiticityReport(force_hermiticity=f_dev, drag_antihermiticity=drag_dev)
