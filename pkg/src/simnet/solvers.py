"""Structure-exploiting solvers for the internal coupling core.

Three treatments of the internal coupling matrix are supported: the exact
dense core, a layer-banded core whose block-tridiagonal structure admits a
block-Thomas factorization, and a first-order series correction for weak
residual coupling on top of the banded core.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve, lapack

from .errors import FactorizationError
from .netcore import COND_CAP_DEFAULT, lu_factor_checked

log = logging.getLogger(__name__)

PIVOT_RCOND_MIN = 1e-13


def sim_i_mask(topology):
    """Boolean (N, N) mask of couplings kept by the layer-banded model.

    Allowed couplings: within one layer between elements of the same array
    (receive-receive or transmit-transmit), and between the transmit array
    of layer q and the receive array of layer q+1 in both directions.
    Direct coupling between the two arrays of one layer is excluded; those
    paths exist only through the tunable cells.
    """
    k = topology.cells_per_layer
    idx = np.arange(topology.total_ports)
    layer = idx // (2 * k)
    array = (idx % (2 * k)) // k
    qi, qj = layer[:, None], layer[None, :]
    ai, aj = array[:, None], array[None, :]
    same = (qi == qj) & (ai == aj)
    down = (qj == qi + 1) & (ai == 1) & (aj == 0)
    up = (qi == qj + 1) & (ai == 0) & (aj == 1)
    return same | down | up


@dataclass
class CouplingDecomposition:
    """Split of the internal coupling into banded part and remainder."""

    s_ee_0: np.ndarray
    delta_s: np.ndarray
    weak_ratio: float

    @property
    def is_banded(self):
        return not np.any(self.delta_s)


def split_coupling(s_ee, topology):
    """Split s_ee into its layer-banded part and the residual coupling.

    The two parts reconstruct the input bit-exactly: entries inside the
    banded mask go to ``s_ee_0`` unchanged, everything else to ``delta_s``.
    ``weak_ratio`` is the spectral-norm ratio |delta_s| / |s_ee_0|.
    """
    s_ee = np.asarray(s_ee, dtype=complex)
    n = topology.total_ports
    if s_ee.shape != (n, n):
        raise ValueError(f"s_ee shape {s_ee.shape} does not match the "
                         f"{n}-port topology")
    mask = sim_i_mask(topology)
    s0 = np.where(mask, s_ee, 0)
    delta = s_ee - s0
    norm0 = np.linalg.norm(s0, 2)
    normd = np.linalg.norm(delta, 2)
    if norm0 > 0:
        ratio = normd / norm0
    else:
        ratio = 0.0 if normd == 0 else np.inf
    return CouplingDecomposition(s_ee_0=s0, delta_s=delta, weak_ratio=ratio)


@dataclass
class BlockTridiagonal:
    """Block-tridiagonal matrix with equal-sized square diagonal blocks.

    ``lower[i]`` sits at block position (i+1, i) and ``upper[i]`` at
    (i, i+1), 0-based.
    """

    diag: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        nb, k = self.n_blocks, self.block_size
        if self.diag.shape != (nb, k, k):
            raise ValueError("diagonal blocks must be square and equal-sized")
        if self.lower.shape != (max(nb - 1, 0), k, k) or \
                self.upper.shape != (max(nb - 1, 0), k, k):
            raise ValueError("off-diagonal block arrays must have length "
                             "n_blocks - 1")

    @property
    def n_blocks(self):
        return self.diag.shape[0]

    @property
    def block_size(self):
        return self.diag.shape[1]

    @property
    def n(self):
        return self.n_blocks * self.block_size

    def to_dense(self):
        nb, k = self.n_blocks, self.block_size
        a = np.zeros((self.n, self.n), dtype=complex)
        for i in range(nb):
            a[i * k:(i + 1) * k, i * k:(i + 1) * k] = self.diag[i]
        for i in range(nb - 1):
            a[(i + 1) * k:(i + 2) * k, i * k:(i + 1) * k] = self.lower[i]
            a[i * k:(i + 1) * k, (i + 1) * k:(i + 2) * k] = self.upper[i]
        return a

    @classmethod
    def from_matrix(cls, a, n_blocks, block_size):
        """Extract the tridiagonal blocks of a dense matrix by slicing."""
        a = np.asarray(a, dtype=complex)
        k = block_size
        if a.shape != (n_blocks * k, n_blocks * k):
            raise ValueError("matrix size does not match the block layout")
        diag = np.array([a[i * k:(i + 1) * k, i * k:(i + 1) * k]
                         for i in range(n_blocks)])
        lower = np.array([a[(i + 1) * k:(i + 2) * k, i * k:(i + 1) * k]
                          for i in range(n_blocks - 1)])
        upper = np.array([a[i * k:(i + 1) * k, (i + 1) * k:(i + 2) * k]
                          for i in range(n_blocks - 1)])
        if n_blocks == 1:
            lower = np.zeros((0, k, k), dtype=complex)
            upper = np.zeros((0, k, k), dtype=complex)
        return cls(diag=diag, lower=lower, upper=upper)


def assemble_core_tridiagonal(topology, gamma_inv, s_ee_0):
    """Block-tridiagonal core gamma^-1 - s_ee_0 under layer-wise ordering.

    Blocks are per layer (size 2K, covering its receive and transmit
    arrays): the blockwise inverse termination and the intra-layer
    couplings fill the diagonal blocks, and the only inter-layer coupling
    the banded model keeps (transmit array to the next layer's receive
    array) lands on the first off-diagonals.  Layer-sized pivots keep the
    elimination well posed even when intra-array coupling vanishes: the
    cell-inverse corner blocks make the pivot invertible on their own.
    """
    a = np.asarray(gamma_inv, dtype=complex) - np.asarray(s_ee_0, dtype=complex)
    return BlockTridiagonal.from_matrix(a, topology.layers,
                                        2 * topology.cells_per_layer)


@dataclass
class ThomasFactorization:
    """Pivot blocks of the block-Thomas elimination, stored factorized.

    The recursion is F_1 = B_1, G_l = A_l F_{l-1}^{-1},
    F_l = B_l - G_l C_{l-1}; the matrix factors as L U with L unit lower
    block-bidiagonal (subdiagonal G) and U upper block-bidiagonal with
    diagonal F and superdiagonal C, which also serves adjoint solves.
    """

    matrix: BlockTridiagonal
    f_blocks: np.ndarray
    g_blocks: np.ndarray
    f_lu: list = field(repr=False, default_factory=list)

    def solve(self, rhs):
        return thomas_solve(self, rhs)

    def solve_adjoint(self, rhs):
        return thomas_solve(self, rhs, adjoint=True)


def thomas_factorize(m):
    """Factorize a BlockTridiagonal by block-Thomas elimination.

    Raises FactorizationError naming the 1-based block index when a pivot
    block's reciprocal condition estimate falls below 1e-13.
    """
    nb, k = m.n_blocks, m.block_size
    f = np.empty_like(m.diag)
    g = np.empty_like(m.lower)
    lus = []

    def factor_pivot(block, index):
        anorm = np.linalg.norm(block, 1)
        try:
            lu = lu_factor(block)
        except np.linalg.LinAlgError:
            raise FactorizationError(index, 0.0) from None
        rcond, info = lapack.zgecon(lu[0], anorm, norm="1")
        if info != 0 or rcond < PIVOT_RCOND_MIN:
            raise FactorizationError(index, float(rcond))
        return lu

    f[0] = m.diag[0]
    lus.append(factor_pivot(f[0], 1))
    for l in range(1, nb):
        # G F = A  =>  F^T G^T = A^T
        g[l - 1] = lu_solve(lus[l - 1], m.lower[l - 1].T, trans=1).T
        f[l] = m.diag[l] - g[l - 1] @ m.upper[l - 1]
        lus.append(factor_pivot(f[l], l + 1))
    return ThomasFactorization(matrix=m, f_blocks=f, g_blocks=g, f_lu=lus)


def thomas_solve(f, rhs, adjoint=False):
    """Solve the factorized block-tridiagonal system for dense right sides.

    With ``adjoint=True`` solves against the conjugate transpose using the
    same pivot factorizations.
    """
    m = f.matrix
    nb, k = m.n_blocks, m.block_size
    rhs = np.asarray(rhs, dtype=complex)
    squeeze = rhs.ndim == 1
    if squeeze:
        rhs = rhs[:, None]
    if rhs.shape[0] != m.n:
        raise ValueError(f"rhs has {rhs.shape[0]} rows, expected {m.n}")
    b = rhs.reshape(nb, k, -1)
    x = np.empty_like(b)
    if not adjoint:
        d = np.empty_like(b)
        d[0] = b[0]
        for l in range(1, nb):
            d[l] = b[l] - f.g_blocks[l - 1] @ d[l - 1]
        x[nb - 1] = lu_solve(f.f_lu[nb - 1], d[nb - 1])
        for l in range(nb - 2, -1, -1):
            x[l] = lu_solve(f.f_lu[l], d[l] - m.upper[l] @ x[l + 1])
    else:
        y = np.empty_like(b)
        y[0] = lu_solve(f.f_lu[0], b[0], trans=2)
        for l in range(1, nb):
            y[l] = lu_solve(f.f_lu[l],
                            b[l] - m.upper[l - 1].conj().T @ y[l - 1],
                            trans=2)
        x[nb - 1] = y[nb - 1]
        for l in range(nb - 2, -1, -1):
            x[l] = y[l] - f.g_blocks[l].conj().T @ x[l + 1]
    out = x.reshape(m.n, -1)
    return out[:, 0] if squeeze else out


def thomas_solve_columns(f, block_columns):
    """Block-column strips of the inverse for the requested block columns.

    ``block_columns`` holds 1-based block indices r; the result maps each
    r to the (n, block_size) strip inv(S)[:, (r-1)*bs : r*bs].
    """
    m = f.matrix
    nb, k = m.n_blocks, m.block_size
    out = {}
    for r in block_columns:
        if not 1 <= r <= nb:
            raise IndexError(f"block column {r} outside 1..{nb}")
        rhs = np.zeros((m.n, k), dtype=complex)
        rhs[(r - 1) * k:r * k] = np.eye(k)
        out[r] = thomas_solve(f, rhs)
    return out


def thomas_full_inverse(f):
    """Dense inverse assembled from all block-column strips."""
    strips = thomas_solve_columns(f, range(1, f.matrix.n_blocks + 1))
    return np.concatenate([strips[r] for r in sorted(strips)], axis=1)


class DenseFactor:
    """LU factorization of a dense core with forward and adjoint solves."""

    def __init__(self, a, cond_cap=COND_CAP_DEFAULT, what="core matrix"):
        self._lu = lu_factor_checked(np.asarray(a, dtype=complex),
                                     cond_cap, what)
        self.n = a.shape[0]

    def solve(self, rhs):
        return lu_solve(self._lu, rhs)

    def solve_adjoint(self, rhs):
        return lu_solve(self._lu, rhs, trans=2)


def core_inverse_ni(gamma_inv, s_ee, cond_cap=COND_CAP_DEFAULT):
    """Dense inverse of the exact core (gamma^-1 - s_ee)."""
    gamma_inv = np.asarray(gamma_inv, dtype=complex)
    factor = DenseFactor(gamma_inv - s_ee, cond_cap, "coupling core")
    return factor.solve(np.eye(gamma_inv.shape[0], dtype=complex))


def operator_norm_estimate(matvec, rmatvec, n, iters=80, tol=1e-12, seed=11):
    """Spectral norm of a linear operator by power iteration on M^H M."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    nv = np.linalg.norm(v)
    if nv == 0:
        return 0.0
    v /= nv
    sigma = 0.0
    for _ in range(iters):
        w = matvec(v)
        sigma_new = np.linalg.norm(w)
        if sigma_new == 0:
            return 0.0
        v = rmatvec(w)
        nv = np.linalg.norm(v)
        if nv == 0:
            return float(sigma_new)
        v /= nv
        if abs(sigma_new - sigma) <= tol * sigma_new:
            return float(sigma_new)
        sigma = sigma_new
    return float(sigma)


@dataclass
class NeumannInverse:
    """First-order series approximation of the coupling core inverse."""

    t_approx: np.ndarray
    contraction_norm: float
    certified: bool


def core_inverse_w(decomp, gamma_inv, topology):
    """First-order correction of the banded core inverse for weak coupling.

    With A = gamma^-1 - s_ee_0 factorized by block-Thomas, returns
    T ~= A^-1 + A^-1 delta_s A^-1 together with the measured contraction
    norm |A^-1 delta_s| (estimated by power iteration, not a full SVD).
    A contraction norm >= 1 voids the series argument; the result is still
    returned but flagged non-certified and a warning is logged.
    """
    tri = assemble_core_tridiagonal(topology, gamma_inv, decomp.s_ee_0)
    fact = thomas_factorize(tri)
    a_inv = thomas_full_inverse(fact)
    delta = decomp.delta_s
    t_approx = a_inv + a_inv @ (delta @ a_inv)
    contraction = operator_norm_estimate(
        lambda v: fact.solve(delta @ v),
        lambda w: delta.conj().T @ fact.solve_adjoint(w),
        tri.n)
    certified = contraction < 1.0
    if not certified:
        log.warning("series contraction norm %.3f >= 1; first-order "
                    "inverse is not certified", contraction)
    return NeumannInverse(t_approx=t_approx, contraction_norm=contraction,
                          certified=certified)
