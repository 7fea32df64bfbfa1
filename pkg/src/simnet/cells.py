"""Tunable 2x2 cell terminations, codebooks and phase states.

Each cell of the stacked surface terminates one port pair in a 2x2
scattering block.  Cells are either parametric in a continuous phase (ideal
or lossy) or drawn from a finite codebook of explicit 2x2 states.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import CellSingularityError
from .netcore import CELL_DET_TOL

_KINDS = ("ideal_phase", "lossy_parametric")


def wrap_phases(phases):
    """Wrap angles to the half-open interval (-pi, pi]."""
    phases = np.asarray(phases, dtype=float)
    wrapped = np.mod(phases + np.pi, 2 * np.pi) - np.pi
    return np.where(wrapped == -np.pi, np.pi, wrapped)


@dataclass(frozen=True)
class CellModel:
    """Parametric 2x2 cell scattering as a function of the tuning phase.

    kind="ideal_phase": lossless, fully matched; the block is
    [[0, e^{j eta}], [e^{j eta}, 0]].

    kind="lossy_parametric": through amplitude 10^(-IL/20) with the tuning
    phase, equal real reflections of amplitude 10^(-RL/20) on the diagonal.
    Construction rejects parameter pairs whose worst-case spectral norm
    over the phase exceeds 1 (non-passive cells).
    """

    kind: str = "ideal_phase"
    insertion_loss_db: float = 18.0
    return_loss_db: float = 6.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown cell kind {self.kind!r}")
        if self.kind == "lossy_parametric":
            worst = self.through_amplitude + self.reflect_amplitude
            if worst > 1.0 + 1e-12:
                raise ValueError(
                    f"cell model is not passive: spectral norm reaches "
                    f"{worst:.6f} > 1")

    @property
    def through_amplitude(self):
        if self.kind == "ideal_phase":
            return 1.0
        return 10.0 ** (-self.insertion_loss_db / 20.0)

    @property
    def reflect_amplitude(self):
        if self.kind == "ideal_phase":
            return 0.0
        return 10.0 ** (-self.return_loss_db / 20.0)

    def block(self, eta):
        """2x2 scattering blocks for phases ``eta``; shape (..., 2, 2)."""
        eta = np.asarray(eta, dtype=float)
        through = self.through_amplitude * np.exp(1j * eta)
        out = np.zeros(eta.shape + (2, 2), dtype=complex)
        out[..., 0, 1] = through
        out[..., 1, 0] = through
        out[..., 0, 0] = self.reflect_amplitude
        out[..., 1, 1] = self.reflect_amplitude
        return out

    def tangent_block(self, eta):
        """Derivative of :meth:`block` with respect to the phase."""
        eta = np.asarray(eta, dtype=float)
        d = 1j * self.through_amplitude * np.exp(1j * eta)
        out = np.zeros(eta.shape + (2, 2), dtype=complex)
        out[..., 0, 1] = d
        out[..., 1, 0] = d
        return out


@dataclass(frozen=True)
class CellCodebook:
    """Finite set of admissible 2x2 cell states.

    ``states`` has shape (P, 2, 2) when all cells share one codebook or
    (n_cells, P, 2, 2) for per-cell codebooks.  State indices are 1-based
    throughout the public API, matching the port numbering convention.
    Every state must be passive (spectral norm <= 1).
    """

    states: np.ndarray

    def __post_init__(self):
        states = np.asarray(self.states, dtype=complex)
        if states.ndim not in (3, 4) or states.shape[-2:] != (2, 2):
            raise ValueError("states must have shape (P, 2, 2) or "
                             "(n_cells, P, 2, 2)")
        norms = np.linalg.norm(states.reshape(-1, 2, 2), ord=2, axis=(1, 2))
        if np.any(norms > 1.0 + 1e-9):
            raise ValueError(
                f"codebook contains a non-passive state (spectral norm "
                f"{norms.max():.6f} > 1)")
        object.__setattr__(self, "states", states)

    @property
    def size(self):
        return self.states.shape[-3]

    @property
    def per_cell(self):
        return self.states.ndim == 4

    def state(self, cell, level):
        """2x2 block of 1-based ``level`` for 0-based flat ``cell`` index."""
        if not 1 <= level <= self.size:
            raise IndexError(f"state index {level} outside 1..{self.size}")
        if self.per_cell:
            return self.states[cell, level - 1]
        return self.states[level - 1]

    def gather(self, levels):
        """(n_cells, 2, 2) blocks for an array of 1-based state indices."""
        levels = np.asarray(levels)
        if np.any(levels < 1) or np.any(levels > self.size):
            raise IndexError("state index outside codebook range")
        if self.per_cell:
            if levels.shape[0] != self.states.shape[0]:
                raise ValueError("state vector length does not match the "
                                 "per-cell codebook")
            return self.states[np.arange(levels.shape[0]), levels - 1]
        return self.states[levels - 1]

    @classmethod
    def uniform_phase(cls, size, model=None):
        """Codebook of ``size`` states at phases 2*pi*(l-1)/size, l=1..size.

        States are generated by ``model`` (ideal phase-only by default), so
        a lossy parametric model yields a lossy codebook at the same phases.
        """
        if size < 1:
            raise ValueError("codebook size must be >= 1")
        model = model or CellModel()
        phases = wrap_phases(2 * np.pi * np.arange(size) / size)
        return cls(model.block(phases))


@dataclass(frozen=True)
class TuningState:
    """Tuning of all cells: continuous phases or discrete codebook indices.

    Exactly one of ``phases`` (float, wrapped to (-pi, pi]) and ``levels``
    (int, 1-based codebook indices) is set.
    """

    phases: np.ndarray = None
    levels: np.ndarray = None

    def __post_init__(self):
        if (self.phases is None) == (self.levels is None):
            raise ValueError("exactly one of phases and levels must be given")
        if self.phases is not None:
            object.__setattr__(self, "phases",
                               wrap_phases(np.atleast_1d(self.phases)))
        else:
            levels = np.atleast_1d(np.asarray(self.levels, dtype=int))
            if np.any(levels < 1):
                raise ValueError("state indices are 1-based; found a value < 1")
            object.__setattr__(self, "levels", levels)

    @classmethod
    def continuous(cls, phases):
        return cls(phases=phases)

    @classmethod
    def discrete(cls, levels):
        return cls(levels=levels)

    @property
    def is_discrete(self):
        return self.levels is not None

    @property
    def n_cells(self):
        return (self.levels if self.is_discrete else self.phases).shape[0]


def cell_blocks(cells, state):
    """(n_cells, 2, 2) scattering blocks of every cell under ``state``.

    ``cells`` is a CellModel for continuous states or a CellCodebook for
    discrete ones.
    """
    if state.is_discrete:
        if not isinstance(cells, CellCodebook):
            raise TypeError("discrete states require a CellCodebook")
        return cells.gather(state.levels)
    if not isinstance(cells, CellModel):
        raise TypeError("continuous states require a CellModel")
    return cells.block(state.phases)


def assemble_gamma(topology, cells, state):
    """Block-diagonal termination matrix of all cells.

    Entries outside the designated 2x2 cell positions are exactly zero.
    """
    if state.n_cells != topology.total_cells:
        raise ValueError(f"state has {state.n_cells} cells, topology has "
                         f"{topology.total_cells}")
    blocks = cell_blocks(cells, state)
    n = topology.total_ports
    pairs = topology.port_pairs
    gamma = np.zeros((n, n), dtype=complex)
    gamma[pairs[:, :, None], pairs[:, None, :]] = blocks
    return gamma


def extract_cell_blocks(topology, gamma):
    """(n_cells, 2, 2) view of the cell blocks of a termination matrix."""
    pairs = topology.port_pairs
    return gamma[pairs[:, :, None], pairs[:, None, :]]


def _invert_blocks(blocks):
    dets = (blocks[:, 0, 0] * blocks[:, 1, 1]
            - blocks[:, 0, 1] * blocks[:, 1, 0])
    bad = np.flatnonzero(np.abs(dets) <= CELL_DET_TOL)
    if bad.size:
        raise CellSingularityError(int(bad[0]) + 1)
    inv = np.empty_like(blocks)
    inv[:, 0, 0] = blocks[:, 1, 1]
    inv[:, 1, 1] = blocks[:, 0, 0]
    inv[:, 0, 1] = -blocks[:, 0, 1]
    inv[:, 1, 0] = -blocks[:, 1, 0]
    return inv / dets[:, None, None]


def invert_gamma_blockwise(topology, gamma):
    """Blockwise inverse of a cell termination matrix.

    Each 2x2 cell block is inverted analytically; a block with determinant
    magnitude <= 1e-14 raises CellSingularityError naming the 1-based cell.
    The result has the same sparsity pattern as the input.
    """
    blocks = extract_cell_blocks(topology, np.asarray(gamma, dtype=complex))
    inv_blocks = _invert_blocks(blocks)
    n = topology.total_ports
    pairs = topology.port_pairs
    out = np.zeros((n, n), dtype=complex)
    out[pairs[:, :, None], pairs[:, None, :]] = inv_blocks
    return out


def tangent_blocks(cells, state):
    """(n_cells, 2, 2) derivative blocks d(block)/d(phase) for all cells."""
    if state.is_discrete:
        raise TypeError("tangents require a parametric cell model, not a "
                        "discrete codebook state")
    if not isinstance(cells, CellModel):
        raise TypeError("tangents require a CellModel")
    return cells.tangent_block(state.phases)


def cell_tangent(topology, cells, state, p):
    """Sparse derivative of the termination matrix w.r.t. phase of cell p.

    ``p`` is the 1-based flat cell index K*(q-1)+k.  The result is an
    (N, N) sparse matrix with at most 4 nonzeros, all inside the 2x2 block
    of cell p.
    """
    if not 1 <= p <= topology.total_cells:
        raise IndexError(f"cell index {p} outside 1..{topology.total_cells}")
    block = tangent_blocks(cells, state)[p - 1]
    m, n = topology.port_pairs[p - 1]
    rows = np.array([m, m, n, n])
    cols = np.array([m, n, m, n])
    vals = block.ravel()
    keep = vals != 0
    size = topology.total_ports
    return sp.coo_array((vals[keep], (rows[keep], cols[keep])),
                        shape=(size, size))


def project_to_codebook(blocks, codebook):
    """Nearest codebook state per cell in Frobenius distance.

    ``blocks`` has shape (n_cells, 2, 2).  Returns 1-based state indices;
    ties resolve to the lowest index.
    """
    blocks = np.asarray(blocks, dtype=complex)
    if codebook.per_cell:
        if blocks.shape[0] != codebook.states.shape[0]:
            raise ValueError("block count does not match per-cell codebook")
        diff = codebook.states - blocks[:, None]            # (C, P, 2, 2)
    else:
        diff = codebook.states[None] - blocks[:, None]      # (C, P, 2, 2)
    dist = np.linalg.norm(diff.reshape(diff.shape[0], diff.shape[1], 4),
                          axis=2)
    return np.argmin(dist, axis=1).astype(int) + 1
