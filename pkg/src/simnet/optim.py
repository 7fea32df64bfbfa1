"""Loss, adjoint gradients and optimizers for the tunable termination.

The quadratic mismatch loss |beta Y - Y_d|_F^2 is minimized either over
continuous cell phases (gradient descent with Armijo backtracking, adjoint
gradients) or over discrete codebook states (cyclic coordinate descent with
exact rank-2 candidate updates).

Three coupling treatments are supported and named by what they do:
``dense`` solves the exact coupling core, ``banded`` restricts coupling to
the layer-banded pattern and uses the block-Thomas factorization, ``weak``
adds a first-order series correction for the residual coupling on top of
the banded core.  The CLI model tokens ni, i and w map to these in that
order.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .cells import (TuningState, assemble_gamma,
                    invert_gamma_blockwise, tangent_blocks, wrap_phases)
from .errors import InfeasibleCandidateError
from .netcore import CELL_DET_TOL, COND_CAP_DEFAULT
from .solvers import (DenseFactor, assemble_core_tridiagonal, sim_i_mask,
                      thomas_factorize)

log = logging.getLogger(__name__)

MODEL_DENSE = "dense"
MODEL_BANDED = "banded"
MODEL_WEAK = "weak"

_MODEL_ALIASES = {
    "dense": MODEL_DENSE, "ni": MODEL_DENSE,
    "banded": MODEL_BANDED, "i": MODEL_BANDED,
    "weak": MODEL_WEAK, "w": MODEL_WEAK,
}

STEP_UNDERFLOW = 1e-14


def normalize_model(name):
    """Canonical model name for any accepted alias (ni, i, w included)."""
    try:
        return _MODEL_ALIASES[str(name).lower()]
    except KeyError:
        raise ValueError(f"unknown coupling model {name!r}; expected one of "
                         f"{sorted(set(_MODEL_ALIASES))}") from None


@dataclass(frozen=True)
class LossSpec:
    """Target output matrix and the handling of the complex scale beta.

    ``beta_mode="optimal_rescale"`` recomputes the minimizing scale
    <Y, Y_d> / |Y|_F^2 at every loss evaluation (beta = 0 when Y = 0);
    ``beta_mode="fixed"`` uses the given ``beta`` unchanged.
    """

    y_target: np.ndarray
    beta_mode: str = "optimal_rescale"
    beta: complex = 1.0 + 0j

    def __post_init__(self):
        if self.beta_mode not in ("optimal_rescale", "fixed"):
            raise ValueError(f"unknown beta_mode {self.beta_mode!r}")
        object.__setattr__(self, "y_target",
                           np.asarray(self.y_target, dtype=complex))


def loss(y, spec):
    """Mismatch loss |beta Y - Y_d|_F^2 and the beta that was applied."""
    y = np.asarray(y, dtype=complex)
    if y.shape != spec.y_target.shape:
        raise ValueError(f"output shape {y.shape} does not match target "
                         f"{spec.y_target.shape}")
    if spec.beta_mode == "optimal_rescale":
        denom = np.vdot(y, y).real
        beta = np.vdot(y, spec.y_target) / denom if denom > 0 else 0.0 + 0j
    else:
        beta = complex(spec.beta)
    e = beta * y - spec.y_target
    return float(np.vdot(e, e).real), beta


class CouplingModel:
    """State-independent context for one (model, network, topology) triple.

    Splits the coupling matrix once; per tuning state, :meth:`path` builds
    the factorized solve path used by forward evaluation and gradients.
    """

    def __init__(self, model, s, topology, cond_cap=COND_CAP_DEFAULT):
        self.model = normalize_model(model)
        self.s = s
        self.topology = topology
        self.cond_cap = cond_cap
        if topology.total_ports != s.n_internal:
            raise ValueError(f"topology has {topology.total_ports} internal "
                             f"ports, network has {s.n_internal}")
        if self.model == MODEL_DENSE:
            self.s_ee_eff = s.s_ee
            self.delta_s = None
        else:
            mask = sim_i_mask(topology)
            self.s_ee_eff = np.where(mask, s.s_ee, 0)
            self.delta_s = s.s_ee - self.s_ee_eff

    def path(self, cells, state):
        gamma = assemble_gamma(self.topology, cells, state)
        if self.model == MODEL_DENSE:
            return _DensePath(self, gamma)
        gamma_inv = invert_gamma_blockwise(self.topology, gamma)
        if self.model == MODEL_BANDED:
            return _BandedPath(self, gamma_inv)
        return _WeakPath(self, gamma_inv)


@dataclass
class ForwardState:
    """Waves and cached arrays from one forward solve."""

    a_s: np.ndarray
    a_e: np.ndarray
    b_e: np.ndarray
    y: np.ndarray
    extras: dict = field(default_factory=dict)


class _DensePath:
    def __init__(self, ctx, gamma):
        s = ctx.s
        n = s.n_internal
        self.ctx = ctx
        self.gamma = gamma
        self.core = DenseFactor(np.eye(n) - gamma @ s.s_ee, ctx.cond_cap,
                                "internal termination system")

    def forward(self, a_s):
        s = self.ctx.s
        z = s.s_et @ a_s
        a_e = self.core.solve(self.gamma @ z)
        b_e = z + s.s_ee @ a_e
        y = s.s_rt @ a_s + s.s_re @ a_e
        return ForwardState(a_s=a_s, a_e=a_e, b_e=b_e, y=y)

    def gradient_terms(self, fwd, q):
        u = self.core.solve_adjoint(q)
        return [(u, fwd.b_e)]

    def solve_internal(self, z):
        """Internal incident waves from injected columns z (bypassing s_et)."""
        return self.core.solve(self.gamma @ z)


class _BandedPath:
    def __init__(self, ctx, gamma_inv):
        self.ctx = ctx
        self.gamma_inv = gamma_inv
        tri = assemble_core_tridiagonal(ctx.topology, gamma_inv, ctx.s_ee_eff)
        self.fact = thomas_factorize(tri)

    def forward(self, a_s):
        s = self.ctx.s
        z = s.s_et @ a_s
        a_e = self.fact.solve(z)
        b_e = z + self.ctx.s_ee_eff @ a_e
        y = s.s_rt @ a_s + s.s_re @ a_e
        return ForwardState(a_s=a_s, a_e=a_e, b_e=b_e, y=y)

    def gradient_terms(self, fwd, q):
        u = self.gamma_inv.conj().T @ self.fact.solve_adjoint(q)
        return [(u, fwd.b_e)]

    def solve_internal(self, z):
        return self.fact.solve(z)


class _WeakPath:
    def __init__(self, ctx, gamma_inv):
        self.ctx = ctx
        self.gamma_inv = gamma_inv
        tri = assemble_core_tridiagonal(ctx.topology, gamma_inv, ctx.s_ee_eff)
        self.fact = thomas_factorize(tri)

    def forward(self, a_s):
        s = self.ctx.s
        z = s.s_et @ a_s
        x0 = self.fact.solve(z)
        x1 = self.fact.solve(self.ctx.delta_s @ x0)
        a_e = x0 + x1
        b_e = self.gamma_inv @ a_e
        y = s.s_rt @ a_s + s.s_re @ a_e
        return ForwardState(a_s=a_s, a_e=a_e, b_e=b_e, y=y,
                            extras={"x0": x0})

    def gradient_terms(self, fwd, q):
        # Exact adjoint of the first-order forward map: differentiating
        # T = A^-1 + A^-1 dS A^-1 in A = gamma^-1 - s0 yields two
        # contraction pairs instead of one.
        gih = self.gamma_inv.conj().T
        u0 = self.fact.solve_adjoint(q)
        u1 = self.fact.solve_adjoint(self.ctx.delta_s.conj().T @ u0)
        v0 = self.gamma_inv @ fwd.extras["x0"]
        return [(gih @ u0, fwd.b_e), (gih @ u1, v0)]

    def solve_internal(self, z):
        x0 = self.fact.solve(z)
        return x0 + self.fact.solve(self.ctx.delta_s @ x0)


def _contract_tangents(tangents, pairs, terms):
    grad = np.zeros(pairs.shape[0])
    for u, v in terms:
        w = np.einsum("pai,pbi->pab", u[pairs].conj(), v[pairs])
        grad += 2.0 * np.real(np.einsum("pab,pab->p", tangents, w))
    return grad


def _default_excitation(s):
    return np.eye(s.n_source, dtype=complex)


@dataclass
class EvalResult:
    y: np.ndarray
    loss: float
    beta: complex
    a_e: np.ndarray


def evaluate(model, s, topology, cells, state, spec, a_s=None):
    """Forward-evaluate the loss under a coupling model.

    ``a_s`` defaults to the identity excitation (one unit column per source
    port).  Works for both continuous and discrete states.
    """
    a_s = _default_excitation(s) if a_s is None else np.asarray(a_s, complex)
    ctx = CouplingModel(model, s, topology)
    fwd = ctx.path(cells, state).forward(a_s)
    value, beta = loss(fwd.y, spec)
    return EvalResult(y=fwd.y, loss=value, beta=beta, a_e=fwd.a_e)


def _loss_and_gradient(ctx, cells, state, spec, a_s):
    path = ctx.path(cells, state)
    fwd = path.forward(a_s)
    value, beta = loss(fwd.y, spec)
    # beta is held fixed while differentiating; under optimal rescale the
    # envelope argument makes this the exact total derivative.
    e = beta * fwd.y - spec.y_target
    q = ctx.s.s_re.conj().T @ (np.conj(beta) * e)
    terms = path.gradient_terms(fwd, q)
    grad = _contract_tangents(tangent_blocks(cells, state),
                              ctx.topology.port_pairs, terms)
    return value, beta, grad, fwd


def gradient(model, s, topology, cells, state, spec, a_s=None):
    """Adjoint gradient of the loss with respect to all cell phases."""
    a_s = _default_excitation(s) if a_s is None else np.asarray(a_s, complex)
    ctx = CouplingModel(model, s, topology)
    return _loss_and_gradient(ctx, cells, state, spec, a_s)[2]


@dataclass(frozen=True)
class DescentConfig:
    initial_step: float = 1.0
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    max_iters: int = 2000
    grad_tol: float = 1e-8
    rng_seed: int = 7


@dataclass
class DescentResult:
    state: TuningState
    loss: float
    beta: complex
    trace: list
    status: str
    y: np.ndarray


def random_phases(n_cells, rng_seed):
    """Uniform phases on (-pi, pi] for a fresh optimization start."""
    rng = np.random.default_rng(rng_seed)
    return wrap_phases(rng.uniform(-np.pi, np.pi, n_cells))


def descend(model, s, topology, cells, spec, config=None, eta0=None,
            a_s=None):
    """Minimize the loss over continuous phases by backtracking descent.

    Steps along the negative adjoint gradient with Armijo acceptance
    L(eta - t g) <= L(eta) - c t |g|^2, halving t until accepted.  Phases
    are re-wrapped after every step.  Terminates when the gradient norm
    falls below ``grad_tol``, the step underflows 1e-14, or ``max_iters``
    is exhausted.  ``eta0`` defaults to uniform random phases drawn from
    ``config.rng_seed``.

    The trace holds one (iteration, loss, step, grad_norm) row per iterate
    with the step taken from it (0.0 on the terminating row); the loss
    column is non-increasing by construction.
    """
    config = config or DescentConfig()
    a_s = _default_excitation(s) if a_s is None else np.asarray(a_s, complex)
    ctx = CouplingModel(model, s, topology)
    if eta0 is None:
        eta = random_phases(topology.total_cells, config.rng_seed)
    else:
        eta = wrap_phases(np.asarray(eta0, dtype=float))
    trace = []
    status = "max_iterations"
    value = beta = fwd = None
    for it in range(config.max_iters):
        value, beta, grad, fwd = _loss_and_gradient(ctx, cells,
                                                    TuningState(phases=eta),
                                                    spec, a_s)
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= config.grad_tol:
            trace.append((it, value, 0.0, gnorm))
            status = "gradient_converged"
            break
        step = config.initial_step
        accepted = False
        while step >= STEP_UNDERFLOW:
            eta_new = wrap_phases(eta - step * grad)
            path = ctx.path(cells, TuningState(phases=eta_new))
            fwd_new = path.forward(a_s)
            value_new, beta_new = loss(fwd_new.y, spec)
            if value_new <= value - config.armijo_c * step * gnorm ** 2:
                accepted = True
                break
            step *= config.backtrack_factor
        if not accepted:
            trace.append((it, value, 0.0, gnorm))
            status = "step_underflow"
            break
        trace.append((it, value, step, gnorm))
        eta = eta_new
        value, beta, fwd = value_new, beta_new, fwd_new
    else:
        value, beta, grad, fwd = _loss_and_gradient(ctx, cells,
                                                    TuningState(phases=eta),
                                                    spec, a_s)
        trace.append((config.max_iters, value, 0.0,
                      float(np.linalg.norm(grad))))
    return DescentResult(state=TuningState(phases=eta), loss=value,
                         beta=beta, trace=trace, status=status, y=fwd.y)


# ---------------------------------------------------------------------------
# discrete optimization


def _inv2(block, what="2x2 block"):
    det = block[0, 0] * block[1, 1] - block[0, 1] * block[1, 0]
    if abs(det) <= CELL_DET_TOL * max(1.0, float(np.abs(block).max()) ** 2):
        raise InfeasibleCandidateError(f"{what} is singular")
    return np.array([[block[1, 1], -block[0, 1]],
                     [-block[1, 0], block[0, 0]]], dtype=complex) / det


@dataclass
class CellUpdateContext:
    """Precomputed quantities for scanning candidates of one cell.

    ``a_inv_cols`` holds the two columns of the current core inverse at the
    cell's ports; everything else is derived from them and the current
    solution so each candidate costs O(ports) to evaluate.
    """

    pair: np.ndarray
    a_inv_cols: np.ndarray
    x0_rows: np.ndarray
    v_cols: np.ndarray
    y_current: np.ndarray
    current_inv_block: np.ndarray
    extras: dict = field(default_factory=dict)


def woodbury_candidate_loss(ctx, candidate_block, spec):
    """Exact loss if one cell switched to ``candidate_block``.

    Uses the rank-2 update of the core inverse in the pivot form
    K = C (I + R C)^-1, which stays valid when the inverse-block change C
    is singular; a candidate equal to the current state returns the
    current loss unchanged.  Returns (loss, beta, y).  Raises
    InfeasibleCandidateError when the candidate state or the 2x2 update
    pivot is singular.
    """
    cand = np.asarray(candidate_block, dtype=complex)
    c = _inv2(cand, "candidate state") - ctx.current_inv_block
    if not np.any(c):
        value, beta = loss(ctx.y_current, spec)
        return value, beta, ctx.y_current
    r = ctx.a_inv_cols[ctx.pair]
    pivot = np.eye(2) + r @ c
    kmat = c @ _inv2(pivot, "update pivot")
    y_new = ctx.y_current - ctx.v_cols @ (kmat @ ctx.x0_rows)
    value, beta = loss(y_new, spec)
    return value, beta, y_new


class _PlainSweep:
    """Candidate scanning for the dense and banded models."""

    def __init__(self, ctx, codebook, levels, spec, a_s):
        self.ctx = ctx
        self.codebook = codebook
        self.levels = levels
        self.spec = spec
        self.a_s = a_s
        self.z = ctx.s.s_et @ a_s
        self.n_rebuilds = 0
        self.rebuild()

    def _factorize(self, gamma_inv):
        ctx = self.ctx
        if ctx.model == MODEL_DENSE:
            return DenseFactor(gamma_inv - ctx.s_ee_eff, ctx.cond_cap,
                               "coupling core")
        tri = assemble_core_tridiagonal(ctx.topology, gamma_inv,
                                        ctx.s_ee_eff)
        return thomas_factorize(tri)

    def rebuild(self):
        ctx = self.ctx
        gamma = assemble_gamma(ctx.topology, self.codebook,
                               TuningState(levels=self.levels))
        gamma_inv = invert_gamma_blockwise(ctx.topology, gamma)
        pairs = ctx.topology.port_pairs
        self.inv_blocks = gamma_inv[pairs[:, :, None], pairs[:, None, :]]
        self.fact = self._factorize(gamma_inv)
        self.x0 = self.fact.solve(self.z)
        self.y = ctx.s.s_rt @ self.a_s + ctx.s.s_re @ self._t_of_z()
        self.loss, self.beta = loss(self.y, self.spec)
        self.n_rebuilds += 1

    def _t_of_z(self):
        return self.x0

    def _unit_cols(self, pair):
        e = np.zeros((self.ctx.topology.total_ports, 2), dtype=complex)
        e[pair[0], 0] = 1.0
        e[pair[1], 1] = 1.0
        return self.fact.solve(e)

    def cell_context(self, p0):
        pair = self.ctx.topology.port_pairs[p0]
        cols = self._unit_cols(pair)
        return CellUpdateContext(
            pair=pair, a_inv_cols=cols, x0_rows=self.x0[pair],
            v_cols=self.ctx.s.s_re @ cols, y_current=self.y,
            current_inv_block=self.inv_blocks[p0])

    def candidate_loss(self, context, candidate_block):
        return woodbury_candidate_loss(context, candidate_block, self.spec)[0]


class _WeakSweep(_PlainSweep):
    """Candidate scanning under the first-order weak-coupling model.

    The rank-2 update acts on the banded core; propagating it through both
    inverse applications of the first-order map keeps each candidate exact
    for this model at O(ports) cost.
    """

    def rebuild(self):
        super().rebuild()
        self.dsx0 = self.ctx.delta_s @ self.x0
        self.x1 = self.fact.solve(self.dsx0)
        self.y = (self.ctx.s.s_rt @ self.a_s
                  + self.ctx.s.s_re @ (self.x0 + self.x1))
        self.loss, self.beta = loss(self.y, self.spec)

    def cell_context(self, p0):
        ctx = super().cell_context(p0)
        s1c = self.fact.solve(self.ctx.delta_s @ ctx.a_inv_cols)
        ctx.extras = {
            "x1_rows": self.x1[ctx.pair],
            "s1c_rows": s1c[ctx.pair],
            "v_s1c": self.ctx.s.s_re @ s1c,
        }
        return ctx

    def candidate_loss(self, context, candidate_block):
        cand = np.asarray(candidate_block, dtype=complex)
        c = _inv2(cand, "candidate state") - context.current_inv_block
        if not np.any(c):
            return self.loss
        r = context.a_inv_cols[context.pair]
        kmat = c @ _inv2(np.eye(2) + r @ c, "update pivot")
        t1 = kmat @ context.x0_rows
        ex = context.extras
        corr = (context.v_cols @ t1 + ex["v_s1c"] @ t1
                + context.v_cols @ (kmat @ (ex["x1_rows"]
                                            - ex["s1c_rows"] @ t1)))
        return loss(self.y - corr, self.spec)[0]


@dataclass
class SweepResult:
    state: TuningState
    loss: float
    beta: complex
    trace: list
    status: str
    y: np.ndarray
    n_sweeps: int
    n_rebuilds: int


def coordinate_descent(model, s, topology, codebook, init, spec,
                       max_sweeps=20, a_s=None, rel_margin=1e-12):
    """Cyclic exhaustive coordinate descent over codebook states.

    Visits cells in flat order; for each cell every codebook state is
    scored by the exact rank-2 candidate update, and the best strictly
    improving state (relative margin ``rel_margin``) is adopted.  After
    each adopted change the core factorization is rebuilt and the loss
    re-evaluated from scratch; a rebuild that fails to confirm the
    improvement is reverted, so the recorded loss never increases.  Stops
    after a full sweep without changes or ``max_sweeps``.

    The trace rows are (sweep, cell, loss) with 1-based cell indices of
    adopted changes, starting with a (0, 0, initial_loss) row.
    """
    if not init.is_discrete:
        raise ValueError("coordinate descent needs a discrete initial state")
    if init.n_cells != topology.total_cells:
        raise ValueError("initial state size does not match the topology")
    a_s = _default_excitation(s) if a_s is None else np.asarray(a_s, complex)
    ctx = CouplingModel(model, s, topology)
    levels = init.levels.copy()
    sweep_cls = _WeakSweep if ctx.model == MODEL_WEAK else _PlainSweep
    engine = sweep_cls(ctx, codebook, levels, spec, a_s)
    trace = [(0, 0, engine.loss)]
    status = "max_sweeps"
    n_sweeps = 0
    for sweep in range(1, max_sweeps + 1):
        n_sweeps = sweep
        changed = False
        for p0 in range(topology.total_cells):
            context = engine.cell_context(p0)
            margin = rel_margin * max(abs(engine.loss), 1e-300)
            best_val, best_level = engine.loss, int(levels[p0])
            for level in range(1, codebook.size + 1):
                if level == levels[p0]:
                    continue
                block = codebook.state(p0, level)
                try:
                    val = engine.candidate_loss(context, block)
                except InfeasibleCandidateError as exc:
                    log.debug("cell %d state %d skipped: %s",
                              p0 + 1, level, exc)
                    continue
                if val < best_val - margin:
                    best_val, best_level = val, level
            if best_level != levels[p0]:
                previous_loss = engine.loss
                previous_level = int(levels[p0])
                levels[p0] = best_level
                engine.rebuild()
                if engine.loss > previous_loss:
                    log.debug("cell %d: rebuilt loss %.3e regressed past "
                              "%.3e, reverting", p0 + 1, engine.loss,
                              previous_loss)
                    levels[p0] = previous_level
                    engine.rebuild()
                    continue
                changed = True
                trace.append((sweep, p0 + 1, engine.loss))
        if not changed:
            status = "converged"
            break
    return SweepResult(state=TuningState(levels=levels), loss=engine.loss,
                       beta=engine.beta, trace=trace, status=status,
                       y=engine.y, n_sweeps=n_sweeps,
                       n_rebuilds=engine.n_rebuilds)
