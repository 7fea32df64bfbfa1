"""End-to-end experiment orchestration.

``run_experiment`` drives scenario synthesis (or a Touchstone load),
continuous phase optimization, optional codebook projection plus
coordinate descent, and metric evaluation over an SNR sweep, writing
every artifact (resolved config, traces, states, channels, metric
tables) under the configured output directory.  All randomness flows
from config seeds, so a fixed config produces byte-identical CSV/JSON
outputs on every run.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from .cells import CellCodebook, CellModel, TuningState, project_to_codebook
from .config import ExperimentConfig
from .errors import ConfigurationError
from .ioutil import complex_to_pairs, pairs_to_complex, write_csv, write_json
from .netcore import PartitionedScattering, SimTopology, cell_port_indices
from .optim import LossSpec, coordinate_descent, descend, random_phases
from .scenario import (Isolation, capacity, comm_scenario,
                       offdiag_suppression_db, sensing_error_spread,
                       sensing_scenario, synth_details)
from .solvers import split_coupling
from .touchstone import TouchstoneFile, parse_touchstone, write_touchstone

_STAGES = ("synth", "optimize", "evaluate", "pipeline")


def thread_count(environ=None):
    """Worker cap from SIMNET_THREADS (default 1)."""
    environ = os.environ if environ is None else environ
    raw = environ.get("SIMNET_THREADS")
    if raw is None or not raw.strip():
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(
            f"SIMNET_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigurationError("SIMNET_THREADS must be >= 1")
    return n


@dataclass
class _Problem:
    family: str
    topology: SimTopology
    scattering: PartitionedScattering
    spec: LossSpec
    details: object = None  # SynthDetails for synthetic scenarios
    scenario: object = None


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    out_dir: str
    topology: SimTopology
    scattering: PartitionedScattering
    details: object = None
    scenario: object = None
    cell_model: CellModel = None
    codebook: CellCodebook = None
    continuous: object = None  # DescentResult
    discrete: object = None  # SweepResult
    metric_rows: list = field(default_factory=list)
    files: dict = field(default_factory=dict)

    @property
    def final(self):
        return self.discrete if self.discrete is not None else self.continuous


def _build_problem(config):
    sc = config.scenario
    if sc.family == "touchstone":
        ts = parse_touchstone(sc.touchstone_path)
        _, matrix = ts.nearest(sc.center_frequency_hz)
        topology = SimTopology(layers=sc.layers,
                               cells_per_layer=sc.cells_per_layer)
        expected = sc.source_ports + topology.total_ports + sc.output_ports
        if ts.n_ports != expected:
            raise ConfigurationError(
                f"{sc.touchstone_path} has {ts.n_ports} ports; scenario "
                f"dimensions require {expected}")
        parts = PartitionedScattering.from_full(matrix, sc.source_ports,
                                                topology.total_ports,
                                                sc.output_ports)
        spec = LossSpec(np.eye(sc.output_ports, sc.source_ports))
        return _Problem(family="touchstone", topology=topology,
                        scattering=parts, spec=spec)

    isolation = Isolation(
        kind=sc.isolation,
        leak_db=sc.leak_db if sc.isolation == "finite_ground" else None)
    try:
        if sc.family == "comm":
            scn = comm_scenario(sc.kind, **sc.overrides)
            m = scn.geometry.rx_positions.shape[0]
            spec = scn.target.loss_spec(n_outputs=m)
        else:
            scn = sensing_scenario(sc.kind, **sc.overrides)
            spec = scn.loss_spec()
    except TypeError as exc:
        raise ConfigurationError(f"bad scenario override: {exc}") from exc
    details = synth_details(scn.geometry, scn.topology, isolation, sc.seed,
                            kappa=sc.kappa,
                            coupling_jitter=sc.coupling_jitter)
    return _Problem(family=sc.family, topology=scn.topology,
                    scattering=details.scattering, spec=spec,
                    details=details, scenario=scn)


def _out(result, name, path):
    result.files[name] = path
    return path


def _write_synth_artifacts(result, config, problem):
    out_dir = result.out_dir
    _out(result, "config", os.path.join(out_dir, "resolved_config.json"))
    write_json(result.files["config"], config.resolved())
    if problem.details is None:
        return
    s = problem.scattering
    total = s.n_source + s.n_internal + s.n_output
    ts = TouchstoneFile(n_ports=total,
                        frequency_points=[config.scenario.center_frequency_hz],
                        data=s.assemble()[None, :, :], format="RI")
    path = _out(result, "scattering",
                os.path.join(out_dir, f"scattering.s{total}p"))
    write_touchstone(ts, path)
    decomp = split_coupling(s.s_ee, problem.topology)
    meta = {
        "scale": problem.details.scale,
        "spectral_norm": float(np.linalg.norm(s.assemble(), 2)),
        "weak_ratio": float(decomp.weak_ratio),
        "ports": {"source": s.n_source, "internal": s.n_internal,
                  "output": s.n_output},
        "layers": problem.topology.layers,
        "cells_per_layer": problem.topology.cells_per_layer,
    }
    _out(result, "synth_meta", os.path.join(out_dir, "synth_meta.json"))
    write_json(result.files["synth_meta"], meta)


def _run_optimization(result, config, problem):
    opt = config.optimizer
    cells = CellModel(kind=config.cells.kind,
                      insertion_loss_db=config.cells.insertion_loss_db,
                      return_loss_db=config.cells.return_loss_db)
    result.cell_model = cells
    levels = config.cells.levels
    if not opt.run_continuous and levels is None:
        raise ConfigurationError(
            "nothing to optimize: enable run_continuous or set cell levels")
    s, topology, spec = problem.scattering, problem.topology, problem.spec
    model = config.model

    if opt.run_continuous:
        result.continuous = descend(model, s, topology, cells, spec,
                                    config=opt.descent_config())
    if levels is not None:
        codebook = CellCodebook.uniform_phase(levels, model=cells)
        result.codebook = codebook
        if result.continuous is not None:
            start = result.continuous.state.phases
        else:
            start = random_phases(topology.total_cells, opt.rng_seed)
        init = TuningState(levels=project_to_codebook(cells.block(start),
                                                      codebook))
        result.discrete = coordinate_descent(model, s, topology, codebook,
                                             init, spec,
                                             max_sweeps=opt.sweeps)

    out_dir = result.out_dir
    if result.continuous is not None:
        write_csv(_out(result, "trace_continuous",
                       os.path.join(out_dir, "trace_continuous.csv")),
                  ["iteration", "loss", "step", "grad_norm"],
                  result.continuous.trace)
    if result.discrete is not None:
        write_csv(_out(result, "trace_discrete",
                       os.path.join(out_dir, "trace_discrete.csv")),
                  ["sweep", "cell", "loss"], result.discrete.trace)

    states = {
        "phases": (None if result.continuous is None
                   else list(result.continuous.state.phases)),
        "levels": (None if result.discrete is None
                   else [int(v) for v in result.discrete.state.levels]),
    }
    write_json(_out(result, "states", os.path.join(out_dir, "states.json")),
               states)

    channels = {}
    for label, run in (("continuous", result.continuous),
                       ("discrete", result.discrete)):
        if run is None:
            continue
        channels[label] = {
            "y": complex_to_pairs(run.y),
            "beta": [run.beta.real, run.beta.imag],
            "loss": run.loss,
            "status": run.status,
        }
    write_json(_out(result, "channels",
                    os.path.join(out_dir, "channels.json")), channels)

    if result.discrete is not None:
        path = _out(result, "gamma_states",
                    os.path.join(out_dir, "gamma_states.json"))
        export_gamma_states(result.discrete.state, result.codebook,
                            topology, path)


def _run_metrics(result, config, problem):
    final = result.final
    rows = []
    if problem.family in ("comm", "touchstone"):
        runs = [(label, run) for label, run in
                (("continuous", result.continuous),
                 ("discrete", result.discrete)) if run is not None]
        for _, run in runs:
            if run.y.shape[0] != run.y.shape[1]:
                raise ConfigurationError(
                    "capacity needs as many output probes as streams, "
                    f"got channel shape {run.y.shape}")
        for snr in config.metrics.snr_db:
            row = {"snr_db": snr}
            for label, run in runs:
                row[f"capacity_{label}_bits"] = capacity(run.y, snr)
            rows.append(row)
    else:
        threads = thread_count()
        for snr in config.metrics.snr_db:
            sigma = sensing_error_spread(
                problem.details, problem.scenario, config.model,
                result.codebook if final is result.discrete
                else result.cell_model,
                final.state, snr,
                n_test_points=config.metrics.test_points,
                draws_per_point=config.metrics.draws_per_point,
                rng_seed=config.metrics.mc_seed, threads=threads)
            rows.append({"snr_db": snr, "sigma": sigma})
    result.metric_rows = rows

    out_dir = result.out_dir
    header = list(rows[0].keys())
    write_csv(_out(result, "metrics", os.path.join(out_dir, "metrics.csv")),
              header, [[row[h] for h in header] for row in rows])

    summary = {
        "name": config.name,
        "model": config.model,
        "family": problem.family,
        "kind": config.scenario.kind,
        "ports": {"source": problem.scattering.n_source,
                  "internal": problem.scattering.n_internal,
                  "output": problem.scattering.n_output},
        "layers": problem.topology.layers,
        "cells_per_layer": problem.topology.cells_per_layer,
    }
    for label, run in (("continuous", result.continuous),
                       ("discrete", result.discrete)):
        if run is None:
            continue
        entry = {"loss": run.loss, "status": run.status,
                 "beta": [run.beta.real, run.beta.imag]}
        if problem.family in ("comm", "touchstone"):
            entry["offdiag_suppression_db"] = offdiag_suppression_db(run.y)
        summary[label] = entry
    write_json(_out(result, "summary", os.path.join(out_dir, "summary.json")),
               summary)


def run_experiment(config, stage="pipeline"):
    """Run the experiment through ``stage`` and write its artifacts.

    Stages are cumulative: "synth" builds and saves the network,
    "optimize" adds continuous/discrete optimization, "evaluate" adds the
    metric sweep, "pipeline" additionally renders figures.
    """
    if stage not in _STAGES:
        raise ValueError(f"stage must be one of {_STAGES}")
    rank = _STAGES.index(stage)
    problem = _build_problem(config)
    result = ExperimentResult(config=config, out_dir=config.output.out_dir,
                              topology=problem.topology,
                              scattering=problem.scattering,
                              details=problem.details,
                              scenario=problem.scenario)
    _write_synth_artifacts(result, config, problem)
    if rank < 1:
        return result
    _run_optimization(result, config, problem)
    if rank < 2:
        return result
    _run_metrics(result, config, problem)
    if rank < 3:
        return result
    if config.output.figures:
        from . import report

        report.render_figures(result)
    return result


def export_gamma_states(state, codebook, topology, path):
    """Write the per-cell state manifest for a discrete tuning.

    One entry per cell: layer, in-layer cell number, 1-based port pair,
    selected codebook level and the 2x2 scattering block, enough to
    regenerate the termination matrix without the codebook.
    """
    if not state.is_discrete:
        raise ConfigurationError(
            "state export requires a discrete (codebook-indexed) state")
    if state.n_cells != topology.total_cells:
        raise ValueError("state size does not match the topology")
    entries = []
    k = topology.cells_per_layer
    for p, level in enumerate(state.levels):
        q, kk = p // k + 1, p % k + 1
        m, n = cell_port_indices(topology, q, kk)
        block = codebook.state(p, int(level))
        entries.append({
            "layer": q, "cell": kk, "ports": [m, n], "level": int(level),
            "scattering": complex_to_pairs(block),
        })
    manifest = {
        "layers": topology.layers,
        "cells_per_layer": topology.cells_per_layer,
        "codebook_size": codebook.size,
        "entries": entries,
    }
    write_json(path, manifest)
    return path


def import_gamma_states(path):
    """Read a state manifest back: (topology, state, termination matrix).

    The termination matrix is rebuilt from the stored scattering blocks,
    bit-identical to the one the exporting run assembled.
    """
    import json

    with open(path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    topology = SimTopology(layers=manifest["layers"],
                           cells_per_layer=manifest["cells_per_layer"])
    entries = manifest["entries"]
    if len(entries) != topology.total_cells:
        raise ValueError(f"manifest has {len(entries)} entries for a "
                         f"{topology.total_cells}-cell topology")
    n = topology.total_ports
    gamma = np.zeros((n, n), dtype=complex)
    levels = np.zeros(topology.total_cells, dtype=int)
    for entry in entries:
        m, nn = entry["ports"]
        block = pairs_to_complex(entry["scattering"])
        gamma[np.ix_([m - 1, nn - 1], [m - 1, nn - 1])] = block
        q, kk = entry["layer"], entry["cell"]
        levels[(q - 1) * topology.cells_per_layer + (kk - 1)] = entry["level"]
    return topology, TuningState(levels=levels), gamma
