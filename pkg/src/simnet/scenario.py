"""Synthetic scenario generation and end-use metrics.

Builds physically plausible multiport scattering instances from element
geometry (free-space kernel with a broadside pattern factor), plus the
communication and localization figures of merit evaluated on optimized
terminations.
"""

import concurrent.futures
from dataclasses import dataclass

import numpy as np

from .errors import EstimationError, GeometryError
from .netcore import PartitionedScattering
from .optim import CouplingModel, LossSpec
from .solvers import sim_i_mask

DEFAULT_WAVELENGTH = 0.0107  # meters at the 28 GHz design point


@dataclass(frozen=True)
class Isolation:
    """Inter-block isolation assumption used during synthesis.

    "infinite_ground" zeroes every coupling the layer-banded model forbids
    (keeping the source-to-first-layer and last-layer-to-output links);
    "finite_ground" attenuates those forbidden couplings by ``leak_db``
    instead of removing them; "none" keeps the raw kernel.
    """

    kind: str = "infinite_ground"
    leak_db: float = None

    def __post_init__(self):
        if self.kind not in ("infinite_ground", "finite_ground", "none"):
            raise ValueError(f"unknown isolation kind {self.kind!r}")
        if self.kind == "finite_ground" and self.leak_db is None:
            raise ValueError("finite_ground isolation needs leak_db")


@dataclass(frozen=True)
class Geometry:
    """Element layout of the stacked surface and its terminals.

    Layers are stacked along +x at ``layer_spacing``; each layer carries a
    receive-side array and, ``array_separation`` behind it, a transmit-side
    array, both uniform rectangular arrays of ``layer_shape`` = (n_y, n_z)
    elements spaced (element_spacing_y, element_spacing_z) and centered on
    the x axis.  Flat cell index k runs y-fastest.  ``tx_positions`` and
    ``rx_positions`` are (L, 3) and (M, 3) coordinate arrays in meters.
    """

    layer_shape: tuple
    tx_positions: np.ndarray
    rx_positions: np.ndarray
    wavelength: float = DEFAULT_WAVELENGTH
    layer_spacing: float = None
    array_separation: float = None
    element_spacing_y: float = None
    element_spacing_z: float = None

    def __post_init__(self):
        lam = self.wavelength
        defaults = {
            "layer_spacing": 1.5 * lam,
            "array_separation": 0.5 * lam,
            "element_spacing_y": 0.5 * lam,
            "element_spacing_z": 0.75 * lam,
        }
        for name, value in defaults.items():
            if getattr(self, name) is None:
                object.__setattr__(self, name, value)
        object.__setattr__(self, "tx_positions",
                           np.atleast_2d(np.asarray(self.tx_positions, float)))
        object.__setattr__(self, "rx_positions",
                           np.atleast_2d(np.asarray(self.rx_positions, float)))

    @property
    def cells_per_layer(self):
        ny, nz = self.layer_shape
        return ny * nz

    def _array_grid(self):
        ny, nz = self.layer_shape
        iy = np.arange(ny) - (ny - 1) / 2.0
        iz = np.arange(nz) - (nz - 1) / 2.0
        y = np.tile(iy, nz) * self.element_spacing_y
        z = np.repeat(iz, ny) * self.element_spacing_z
        return y, z

    def sim_positions(self, layers):
        """(2*layers*K, 3) port coordinates in layer-wise port order."""
        y, z = self._array_grid()
        k = self.cells_per_layer
        out = np.zeros((2 * layers * k, 3))
        for q in range(layers):
            x_rx = q * self.layer_spacing
            base = 2 * k * q
            out[base:base + k, 0] = x_rx
            out[base:base + k, 1] = y
            out[base:base + k, 2] = z
            out[base + k:base + 2 * k, 0] = x_rx + self.array_separation
            out[base + k:base + 2 * k, 1] = y
            out[base + k:base + 2 * k, 2] = z
        return out

    def aperture(self):
        """Largest transverse extent n*d of one array, in meters."""
        ny, nz = self.layer_shape
        return max(ny * self.element_spacing_y, nz * self.element_spacing_z)

    def far_field_distance(self):
        """Fraunhofer distance 2 D^2 / wavelength of one array."""
        d = self.aperture()
        return 2.0 * d * d / self.wavelength


def _upa_positions(n_y, n_z, spacing_y, spacing_z, x):
    iy = np.arange(n_y) - (n_y - 1) / 2.0
    iz = np.arange(n_z) - (n_z - 1) / 2.0
    y = np.tile(iy, n_z) * spacing_y
    z = np.repeat(iz, n_y) * spacing_z
    return np.stack([np.full(y.shape, x), y, z], axis=1)


def _arc_positions(radius, angles_rad):
    """Points on the xy-plane circle, angles measured from the -x axis."""
    return np.stack([-radius * np.cos(angles_rad),
                     radius * np.sin(angles_rad),
                     np.zeros_like(angles_rad)], axis=1)


def _coupling_kernel(pos_a, pos_b, wavelength, kappa):
    """Free-space coupling with broadside pattern factor.

    s = kappa * (lambda / (4 pi d)) * exp(-j 2 pi d / lambda) * cos(gamma),
    where gamma is the link angle off the stacking axis.  Raises
    GeometryError when two distinct elements coincide.
    """
    diff = pos_a[:, None, :] - pos_b[None, :, :]
    d = np.linalg.norm(diff, axis=2)
    same = d < 1e-12
    if pos_a is pos_b:
        np.fill_diagonal(same, False)
        if np.any(same):
            i, j = np.argwhere(same)[0]
            raise GeometryError(f"elements {i} and {j} coincide")
    elif np.any(same):
        i, j = np.argwhere(same)[0]
        raise GeometryError(f"elements {i} and {j} of different groups "
                            f"coincide")
    with np.errstate(divide="ignore", invalid="ignore"):
        amp = kappa * wavelength / (4.0 * np.pi * d)
        cosg = np.abs(diff[:, :, 0]) / d
        s = amp * cosg * np.exp(-2j * np.pi * d / wavelength)
    if pos_a is pos_b:
        np.fill_diagonal(s, 0.0)
    return s


@dataclass
class SynthDetails:
    """Synthesized network plus everything needed to extend it later."""

    scattering: PartitionedScattering
    scale: float
    tx_positions: np.ndarray
    sim_positions: np.ndarray
    rx_positions: np.ndarray
    isolation: Isolation
    wavelength: float
    kappa: float


def _isolation_factors(topology, n_source, n_output, isolation):
    """(T+E+R)-square multiplier array implementing the isolation rule."""
    n = topology.total_ports
    k = topology.cells_per_layer
    total = n_source + n + n_output
    if isolation.kind == "none":
        return np.ones((total, total))
    allowed = np.zeros((total, total), dtype=bool)
    sl_t = slice(0, n_source)
    sl_e = slice(n_source, n_source + n)
    sl_r = slice(n_source + n, total)
    allowed[sl_e, sl_e] = sim_i_mask(topology)
    # source ports illuminate only the first-layer receive array, outputs
    # observe only the last-layer transmit array
    first_rx = np.arange(k) + n_source
    last_tx = np.arange(n - k, n) + n_source
    allowed[sl_t, first_rx] = True
    allowed[first_rx, sl_t] = True
    allowed[last_tx, sl_r] = True
    allowed[sl_r, last_tx] = True
    if isolation.kind == "infinite_ground":
        return allowed.astype(float)
    factors = np.ones((total, total))
    leak = 10.0 ** (-isolation.leak_db / 20.0)
    factors[~allowed] = leak
    return factors


def synth_details(geometry, topology, isolation, rng_seed, kappa=1.0,
                  coupling_jitter=0.05, passivity_margin=0.95):
    """Synthesize the full network and keep the synthesis context.

    The seeded jitter perturbs only the internal (surface-to-surface)
    coupling amplitudes, so couplings from any external position stay a
    pure function of geometry and can be reproduced for off-grid probes.
    The assembled matrix is reciprocal by construction and rescaled to a
    spectral norm of at most ``passivity_margin``.
    """
    if geometry.cells_per_layer != topology.cells_per_layer:
        raise GeometryError(
            f"geometry has {geometry.cells_per_layer} cells per layer, "
            f"topology expects {topology.cells_per_layer}")
    sim_pos = geometry.sim_positions(topology.layers)
    tx, rx = geometry.tx_positions, geometry.rx_positions
    all_pos = np.concatenate([tx, sim_pos, rx], axis=0)
    s = _coupling_kernel(all_pos, all_pos, geometry.wavelength, kappa)
    if coupling_jitter:
        rng = np.random.default_rng(rng_seed)
        n = topology.total_ports
        g = rng.standard_normal((n, n))
        g = np.triu(g, 1)
        g = g + g.T
        sl = slice(tx.shape[0], tx.shape[0] + n)
        s[sl, sl] *= 1.0 + coupling_jitter * g
    s *= _isolation_factors(topology, tx.shape[0], rx.shape[0], isolation)
    norm = np.linalg.norm(s, 2)
    scale = passivity_margin / norm if norm > passivity_margin else 1.0
    s *= scale
    parts = PartitionedScattering.from_full(s, tx.shape[0],
                                            topology.total_ports,
                                            rx.shape[0])
    return SynthDetails(scattering=parts, scale=scale, tx_positions=tx,
                        sim_positions=sim_pos, rx_positions=rx,
                        isolation=isolation, wavelength=geometry.wavelength,
                        kappa=kappa)


def synth_scattering(geometry, topology, isolation, rng_seed, **kwargs):
    """Synthesized PartitionedScattering for the given scenario geometry."""
    return synth_details(geometry, topology, isolation, rng_seed,
                         **kwargs).scattering


def tx_coupling(details, topology, position):
    """Coupling columns of a probe transmitter at an arbitrary position.

    Returns (s_et column (N,), s_rt column (M,)) consistent with the
    synthesized network: same kernel, isolation rule and passivity scale.
    """
    position = np.asarray(position, float)[None, :]
    sim_col = _coupling_kernel(details.sim_positions, position,
                               details.wavelength, details.kappa)[:, 0]
    rx_col = _coupling_kernel(details.rx_positions, position,
                              details.wavelength, details.kappa)[:, 0]
    k = topology.cells_per_layer
    n = topology.total_ports
    iso = details.isolation
    if iso.kind != "none":
        factor = (0.0 if iso.kind == "infinite_ground"
                  else 10.0 ** (-iso.leak_db / 20.0))
        masked = np.full(n, factor)
        masked[:k] = 1.0
        sim_col = sim_col * masked
        rx_col = rx_col * factor
    return sim_col * details.scale, rx_col * details.scale


# ---------------------------------------------------------------------------
# scenario presets


@dataclass(frozen=True)
class CommTarget:
    """Diagonalization target alpha * I over the streams."""

    streams: int
    alpha: complex = 1.0 + 0j

    def loss_spec(self, n_outputs=None, beta_mode="optimal_rescale"):
        m = self.streams if n_outputs is None else n_outputs
        return LossSpec(y_target=self.alpha * np.eye(m, self.streams),
                        beta_mode=beta_mode)


@dataclass(frozen=True)
class CommScenario:
    name: str
    geometry: Geometry
    topology: "SimTopology"
    target: CommTarget


@dataclass(frozen=True)
class SensingGrid:
    """Candidate parameter grid for single-parameter localization."""

    kind: str  # "range" or "angle"
    parameters: np.ndarray
    radius: float = None  # fixed radius for the angle grid

    def __post_init__(self):
        object.__setattr__(self, "parameters",
                           np.asarray(self.parameters, float))

    def position(self, value):
        """Transmitter coordinates for one parameter value."""
        if self.kind == "range":
            return np.array([-float(value), 0.0, 0.0])
        return np.array([-self.radius * np.cos(value),
                         self.radius * np.sin(value), 0.0])

    def test_parameters(self, count):
        """Evenly spaced test values spanning the grid."""
        lo, hi = self.parameters.min(), self.parameters.max()
        return np.linspace(lo, hi, count)


@dataclass(frozen=True)
class SensingScenario:
    name: str
    geometry: Geometry
    topology: "SimTopology"
    grid: SensingGrid

    def loss_spec(self, beta_mode="optimal_rescale"):
        m = self.geometry.rx_positions.shape[0]
        l = self.geometry.tx_positions.shape[0]
        return LossSpec(y_target=np.eye(m, l), beta_mode=beta_mode)


def comm_scenario(kind, layers=5, cells_y=16, cells_z=4, streams=4,
                  probes_y=4, probes_z=1, wavelength=DEFAULT_WAVELENGTH,
                  tx_radius_wl=220.0, tx_step_deg=12.0, tx_distance_wl=10.0,
                  probe_distance_wl=4.0):
    """Preset multi-stream scenarios: "mu_simo" or "mimo".

    "mu_simo" puts ``streams`` single-antenna users on a far circle of
    radius ``tx_radius_wl`` wavelengths, spaced ``tx_step_deg`` degrees and
    centered on broadside; "mimo" uses a co-located transmit array
    mirroring the probe array at ``tx_distance_wl`` wavelengths.  The probe
    array sits ``probe_distance_wl`` wavelengths behind the last layer.
    """
    from .netcore import SimTopology

    lam = wavelength
    topology = SimTopology(layers=layers, cells_per_layer=cells_y * cells_z)
    if kind == "mu_simo":
        half = (streams - 1) / 2.0
        angles = np.deg2rad((np.arange(streams) - half) * tx_step_deg)
        tx = _arc_positions(tx_radius_wl * lam, angles)
    elif kind == "mimo":
        tx = _upa_positions(streams, 1, 0.5 * lam, 0.75 * lam,
                            -tx_distance_wl * lam)
    else:
        raise ValueError(f"unknown comm scenario kind {kind!r}")
    depth = ((layers - 1) * 1.5 + 0.5) * lam  # last transmit-side array
    rx = _upa_positions(probes_y, probes_z, 0.5 * lam, 0.75 * lam,
                        depth + probe_distance_wl * lam)
    geometry = Geometry(layer_shape=(cells_y, cells_z), tx_positions=tx,
                        rx_positions=rx, wavelength=lam)
    return CommScenario(name=kind, geometry=geometry, topology=topology,
                        target=CommTarget(streams=streams))


def sensing_scenario(kind, layers=5, cells_y=64, cells_z=1, grid_size=8,
                     probes=8, wavelength=DEFAULT_WAVELENGTH, max_range=1.0,
                     tx_radius_wl=1000.0, probe_distance_wl=4.0):
    """Preset localization scenarios: "range" or "angle".

    "range" places ``grid_size`` candidate transmitters on the axis at
    distances max_range/n (near field of the aperture); "angle" places
    them on a far circle of ``tx_radius_wl`` wavelengths at angles
    arcsin(n/32).  One grid transmitter exists per candidate so the
    optimization target is one distinctive output signature per location.
    """
    from .netcore import SimTopology

    lam = wavelength
    topology = SimTopology(layers=layers, cells_per_layer=cells_y * cells_z)
    n = np.arange(1, grid_size + 1)
    if kind == "range":
        params = max_range / n
        grid = SensingGrid(kind="range", parameters=params)
        tx = np.stack([grid.position(p) for p in params])
    elif kind == "angle":
        params = np.arcsin(n / 32.0)
        grid = SensingGrid(kind="angle", parameters=params,
                           radius=tx_radius_wl * lam)
        tx = np.stack([grid.position(p) for p in params])
    else:
        raise ValueError(f"unknown sensing scenario kind {kind!r}")
    depth = ((layers - 1) * 1.5 + 0.5) * lam
    rx = _upa_positions(probes, 1, 0.5 * lam, 0.75 * lam,
                        depth + probe_distance_wl * lam)
    geometry = Geometry(layer_shape=(cells_y, cells_z), tx_positions=tx,
                        rx_positions=rx, wavelength=lam)
    return SensingScenario(name=kind, geometry=geometry, topology=topology,
                           grid=grid)


# ---------------------------------------------------------------------------
# metrics


def sinr_per_stream(y, sigma_sq):
    """Per-stream SINR of a square channel: diagonal is signal, same-row
    off-diagonal entries are interference."""
    y = np.asarray(y, dtype=complex)
    if y.ndim != 2 or y.shape[0] != y.shape[1]:
        raise ValueError(f"channel must be square, got {y.shape}")
    power = np.abs(y) ** 2
    signal = np.diag(power)
    interference = power.sum(axis=1) - signal
    return signal / (sigma_sq + interference)


def capacity(y, snr_db):
    """Sum rate sum_l log2(1 + SINR_l) in bits per channel use.

    The noise power is referenced to the average per-stream diagonal
    power: sigma^2 = mean(|y_ll|^2) / 10^(snr_db/10).
    """
    y = np.asarray(y, dtype=complex)
    if y.ndim != 2 or y.shape[0] != y.shape[1]:
        raise ValueError(f"channel must be square, got {y.shape}")
    diag_power = np.mean(np.abs(np.diag(y)) ** 2)
    sigma_sq = diag_power / 10.0 ** (snr_db / 10.0)
    return float(np.sum(np.log2(1.0 + sinr_per_stream(y, sigma_sq))))


def offdiag_suppression_db(y):
    """Mean diagonal power over mean off-diagonal power, in dB."""
    y = np.asarray(y, dtype=complex)
    power = np.abs(y) ** 2
    diag = np.mean(np.diag(power))
    mask = ~np.eye(y.shape[0], dtype=bool)
    off = np.mean(power[mask])
    if off == 0:
        return np.inf
    return float(10.0 * np.log10(diag / off))


@dataclass(frozen=True)
class NoiseModel:
    """Circular complex observation noise at a given reference SNR."""

    snr_db: float
    sigma_n_sq: float

    @classmethod
    def referenced(cls, clean_outputs, snr_db):
        """Noise power from the weakest test location.

        ``clean_outputs`` is (n_locations, M); the per-location signal
        power is the mean |y|^2 across output ports, and sigma^2 is set so
        the weakest location sits at ``snr_db``.
        """
        clean = np.atleast_2d(np.asarray(clean_outputs, complex))
        powers = np.mean(np.abs(clean) ** 2, axis=1)
        weakest = float(powers.min())
        if weakest == 0:
            raise EstimationError("a test location receives zero signal")
        return cls(snr_db=float(snr_db),
                   sigma_n_sq=weakest / 10.0 ** (snr_db / 10.0))

    def draw(self, rng, shape):
        scale = np.sqrt(self.sigma_n_sq / 2.0)
        return scale * (rng.standard_normal(shape)
                        + 1j * rng.standard_normal(shape))


def estimate_parameter(signatures, observed, grid):
    """Matched-signature estimate of the grid parameter.

    Correlates the observation against each grid signature (normalized
    magnitude correlation), takes the best grid point and refines it by
    the vertex of the quadratic through the peak and its two neighbors.
    The refinement is clamped to the grid span and skipped at the grid
    boundary or on an exact signature match, so noiseless on-grid
    observations return their grid value exactly.
    """
    signatures = np.asarray(signatures, dtype=complex)
    observed = np.asarray(observed, dtype=complex).ravel()
    obs_norm = np.linalg.norm(observed)
    if obs_norm == 0:
        raise EstimationError("observation is identically zero")
    sig_norms = np.linalg.norm(signatures, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.abs(signatures.conj().T @ observed) / (sig_norms * obs_norm)
    rho = np.nan_to_num(rho, nan=0.0)
    params = grid.parameters
    g = int(np.argmax(rho))
    if rho[g] >= 1.0 - 1e-12 or g == 0 or g == len(params) - 1:
        return float(params[g])
    coeff = np.polyfit(params[g - 1:g + 2], rho[g - 1:g + 2], 2)
    if coeff[0] >= 0:
        return float(params[g])
    vertex = -coeff[1] / (2.0 * coeff[0])
    return float(np.clip(vertex, params.min(), params.max()))


def error_std(estimates, truths):
    """Population standard deviation of the estimation error."""
    estimates = np.asarray(estimates, float)
    truths = np.asarray(truths, float)
    if estimates.size < 2:
        raise ValueError("error spread needs at least 2 test points")
    return float(np.std(estimates - truths))


# ---------------------------------------------------------------------------
# sensing evaluation


def grid_signatures(details, topology, model, cells, state):
    """Optimized output columns, one per grid transmitter."""
    s = details.scattering
    path = CouplingModel(model, s, topology).path(cells, state)
    return path.forward(np.eye(s.n_source, dtype=complex)).y


def test_point_outputs(details, topology, model, cells, state, positions):
    """Clean output vectors for probe transmitters at arbitrary positions.

    Reuses one factorized solve path for all positions; each position
    contributes one coupling column consistent with the synthesis.
    """
    s = details.scattering
    path = CouplingModel(model, s, topology).path(cells, state)
    cols = [tx_coupling(details, topology, pos) for pos in positions]
    z = np.stack([c[0] for c in cols], axis=1)
    direct = np.stack([c[1] for c in cols], axis=1)
    a_e = path.solve_internal(z)
    return (direct + s.s_re @ a_e).T  # (n_positions, M)


def sensing_error_spread(details, scenario, model, cells, state, snr_db,
                         n_test_points=25, draws_per_point=20, rng_seed=1234,
                         threads=1):
    """Monte-Carlo spread of the localization error at one SNR.

    Draws ``draws_per_point`` noisy observations at each of
    ``n_test_points`` locations spanning the grid, estimates the parameter
    for each, and returns the population std of (estimate - truth).  The
    noise power is referenced to the weakest test location.  Per-point
    random substreams keep the result independent of thread scheduling.
    """
    grid = scenario.grid
    truths = grid.test_parameters(n_test_points)
    positions = [grid.position(t) for t in truths]
    signatures = grid_signatures(details, scenario.topology, model, cells,
                                 state)
    clean = test_point_outputs(details, scenario.topology, model, cells,
                               state, positions)
    noise = NoiseModel.referenced(clean, snr_db)
    seeds = np.random.SeedSequence(rng_seed).spawn(len(truths))

    def run_point(i):
        rng = np.random.default_rng(seeds[i])
        out = np.empty(draws_per_point)
        for d in range(draws_per_point):
            observed = clean[i] + noise.draw(rng, clean[i].shape)
            out[d] = estimate_parameter(signatures, observed, grid)
        return out

    if threads and threads > 1:
        with concurrent.futures.ThreadPoolExecutor(threads) as pool:
            estimates = list(pool.map(run_point, range(len(truths))))
    else:
        estimates = [run_point(i) for i in range(len(truths))]
    estimates = np.concatenate(estimates)
    truth_rep = np.repeat(truths, draws_per_point)
    return error_std(estimates, truth_rep)
