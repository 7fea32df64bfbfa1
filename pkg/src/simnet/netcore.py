"""Partitioned multiport scattering network and its forward solution.

A device with L source ports, N tunable internal ports and M output ports is
described by a complex scattering matrix S partitioned into nine blocks.
Source ports carry the excitation, output ports are terminated in matched
loads, and internal ports are closed on a tunable block-diagonal termination
``gamma``.  Everything here is model-agnostic dense linear algebra; banded
structure is exploited only in :mod:`simnet.solvers`.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve, lapack

from .errors import CellSingularityError, SolverFailureError

COND_CAP_DEFAULT = 1e12
CELL_DET_TOL = 1e-14


@dataclass(frozen=True)
class SimTopology:
    """Layer/cell layout of the stacked surface.

    Ports are numbered layer by layer: layer q (1-based) owns ports
    2K(q-1)+1 .. 2Kq, where the first K ports belong to the receive-side
    array and the next K to the transmit-side array.  Cell k of layer q
    connects port m = 2K(q-1)+k with port n = m+K.
    """

    layers: int
    cells_per_layer: int

    def __post_init__(self):
        if self.layers < 1 or self.cells_per_layer < 1:
            raise ValueError("layers and cells_per_layer must be >= 1")

    @property
    def total_cells(self):
        return self.layers * self.cells_per_layer

    @property
    def total_ports(self):
        return 2 * self.layers * self.cells_per_layer

    @property
    def port_pairs(self):
        """(total_cells, 2) int array of 0-based (m, n) row/column indices.

        Row p (0-based flat cell index, p = K*(q-1)+k-1) gives the matrix
        indices of the two ports of that cell.  Use
        :func:`cell_port_indices` for the published 1-based numbering.
        """
        k = self.cells_per_layer
        p = np.arange(self.total_cells)
        m = 2 * k * (p // k) + (p % k)
        return np.stack([m, m + k], axis=1)


def cell_port_indices(topology, q, k):
    """1-based global port pair (m, n) of cell k in layer q.

    Follows the conventional 1-based port numbering of the network
    formulation (as in Touchstone port labels): m = 2K(q-1)+k, n = m+K.
    """
    kk = topology.cells_per_layer
    if not 1 <= q <= topology.layers:
        raise IndexError(f"layer index {q} outside 1..{topology.layers}")
    if not 1 <= k <= kk:
        raise IndexError(f"cell index {k} outside 1..{kk}")
    m = 2 * kk * (q - 1) + k
    return m, m + kk


@dataclass
class PartitionedScattering:
    """Scattering matrix of the source/internal/output partition.

    Blocks are named s_<row><col> with t = source ports, e = internal
    (tunable) ports, r = output ports; s_et maps incident source waves into
    the internal ports, s_re maps internal waves to the outputs, and so on.
    """

    s_tt: np.ndarray
    s_te: np.ndarray
    s_tr: np.ndarray
    s_et: np.ndarray
    s_ee: np.ndarray
    s_er: np.ndarray
    s_rt: np.ndarray
    s_re: np.ndarray
    s_rr: np.ndarray

    def __post_init__(self):
        for name in ("s_tt", "s_te", "s_tr", "s_et", "s_ee", "s_er",
                     "s_rt", "s_re", "s_rr"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=complex))
        l, n, m = self.n_source, self.n_internal, self.n_output
        expected = {
            "s_tt": (l, l), "s_te": (l, n), "s_tr": (l, m),
            "s_et": (n, l), "s_ee": (n, n), "s_er": (n, m),
            "s_rt": (m, l), "s_re": (m, n), "s_rr": (m, m),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(
                    f"block {name} has shape {getattr(self, name).shape}, "
                    f"expected {shape}")

    @property
    def n_source(self):
        return self.s_tt.shape[0]

    @property
    def n_internal(self):
        return self.s_ee.shape[0]

    @property
    def n_output(self):
        return self.s_rr.shape[0]

    @classmethod
    def from_full(cls, s, n_source, n_internal, n_output):
        """Split a full (L+N+M)-square matrix ordered source, internal, output."""
        s = np.asarray(s, dtype=complex)
        total = n_source + n_internal + n_output
        if s.shape != (total, total):
            raise ValueError(f"matrix shape {s.shape} does not match "
                             f"partition {(total, total)}")
        i0, i1 = n_source, n_source + n_internal
        return cls(
            s[:i0, :i0], s[:i0, i0:i1], s[:i0, i1:],
            s[i0:i1, :i0], s[i0:i1, i0:i1], s[i0:i1, i1:],
            s[i1:, :i0], s[i1:, i0:i1], s[i1:, i1:],
        )

    def assemble(self):
        """Full (L+N+M)-square matrix in source/internal/output order."""
        return np.block([
            [self.s_tt, self.s_te, self.s_tr],
            [self.s_et, self.s_ee, self.s_er],
            [self.s_rt, self.s_re, self.s_rr],
        ])

    def is_passive(self, tol=1e-9):
        """True if the spectral norm of the full matrix is <= 1 + tol."""
        return np.linalg.norm(self.assemble(), 2) <= 1.0 + tol

    def is_reciprocal(self, tol=1e-9):
        """True if the full matrix is transpose-symmetric entrywise to tol."""
        s = self.assemble()
        return np.max(np.abs(s - s.T)) <= tol

    def swap_roles(self):
        """Network with source and output port groups exchanged."""
        return PartitionedScattering(
            self.s_rr, self.s_re, self.s_rt,
            self.s_er, self.s_ee, self.s_et,
            self.s_tr, self.s_te, self.s_tt,
        )


@dataclass
class WaveBatch:
    """Incident/scattered wave columns for a batch of excitations."""

    a_s: np.ndarray
    a_e: np.ndarray
    b_e: np.ndarray
    y: np.ndarray
    solved: bool = field(default=True)


def lu_factor_checked(a, cond_cap=COND_CAP_DEFAULT, what="system matrix"):
    """LU-factorize with a reciprocal-condition estimate guard.

    Raises SolverFailureError carrying the condition estimate when the
    1-norm condition estimate exceeds ``cond_cap``.
    """
    anorm = np.linalg.norm(a, 1)
    try:
        lu, piv = lu_factor(a)
    except np.linalg.LinAlgError as exc:  # exactly singular
        raise SolverFailureError(f"{what} is singular: {exc}") from exc
    rcond, info = lapack.zgecon(lu, anorm, norm="1")
    if info != 0:
        raise SolverFailureError(f"condition estimation failed for {what}")
    if rcond == 0 or 1.0 / rcond > cond_cap:
        est = np.inf if rcond == 0 else 1.0 / rcond
        raise SolverFailureError(
            f"{what} is ill-conditioned (estimate {est:.3e} exceeds cap "
            f"{cond_cap:.1e})", condition_estimate=est)
    return lu, piv


def _check_cell_blocks(gamma, topology):
    """Raise CellSingularityError for the first singular 2x2 cell block."""
    pairs = topology.port_pairs
    blocks = gamma[pairs[:, :, None], pairs[:, None, :]]
    dets = blocks[:, 0, 0] * blocks[:, 1, 1] - blocks[:, 0, 1] * blocks[:, 1, 0]
    bad = np.flatnonzero(np.abs(dets) <= CELL_DET_TOL)
    if bad.size:
        raise CellSingularityError(int(bad[0]) + 1)


def solve_forward(s, gamma, a_s, cond_cap=COND_CAP_DEFAULT):
    """Solve the terminated network for a batch of excitations.

    Parameters
    ----------
    s : PartitionedScattering
    gamma : (N, N) complex ndarray
        Termination of the internal ports (block-diagonal over cells).
    a_s : (L,) or (L, I) complex ndarray
        Incident source waves, one column per excitation.

    Returns
    -------
    WaveBatch with the internal incident/scattered waves and outputs.
    The linear system (I - gamma s_ee) a_e = gamma s_et a_s is factorized
    once and shared across all columns; gamma itself may be singular.
    """
    a_s = np.atleast_1d(np.asarray(a_s, dtype=complex))
    squeeze = a_s.ndim == 1
    if squeeze:
        a_s = a_s[:, None]
    if a_s.shape[0] != s.n_source:
        raise ValueError(f"a_s has {a_s.shape[0]} rows, expected {s.n_source}")
    gamma = np.asarray(gamma, dtype=complex)
    n = s.n_internal
    core = np.eye(n) - gamma @ s.s_ee
    lu = lu_factor_checked(core, cond_cap, "internal termination system")
    z = s.s_et @ a_s
    a_e = lu_solve(lu, gamma @ z)
    b_e = z + s.s_ee @ a_e
    y = s.s_rt @ a_s + s.s_re @ a_e
    if squeeze:
        a_s, a_e, b_e, y = a_s[:, 0], a_e[:, 0], b_e[:, 0], y[:, 0]
    return WaveBatch(a_s=a_s, a_e=a_e, b_e=b_e, y=y)


def forward_residuals(s, gamma, batch):
    """Relative residual norms of the two internal-wave balance equations."""
    a_s = np.atleast_2d(batch.a_s.T).T
    a_e = np.atleast_2d(batch.a_e.T).T
    b_e = np.atleast_2d(batch.b_e.T).T
    z = s.s_et @ a_s
    scale = max(np.linalg.norm(z), 1e-300)
    r1 = np.linalg.norm(a_e - gamma @ s.s_ee @ a_e - gamma @ z) / scale
    r2 = np.linalg.norm(b_e - s.s_ee @ gamma @ b_e - z) / scale
    return r1, r2


def end_to_end_channel(s, topology, gamma, cond_cap=COND_CAP_DEFAULT):
    """Source-to-output channel matrix H for the terminated network.

    H = s_rt + s_re (gamma^-1 - s_ee)^-1 s_et, evaluated in the
    numerically equivalent product form s_re (I - gamma s_ee)^-1 gamma s_et
    after verifying every cell block of gamma is invertible.  Agrees with
    :func:`solve_forward` driven by the identity excitation.
    """
    gamma = np.asarray(gamma, dtype=complex)
    _check_cell_blocks(gamma, topology)
    n = s.n_internal
    core = np.eye(n) - gamma @ s.s_ee
    lu = lu_factor_checked(core, cond_cap, "internal termination system")
    return s.s_rt + s.s_re @ lu_solve(lu, gamma @ s.s_et)
