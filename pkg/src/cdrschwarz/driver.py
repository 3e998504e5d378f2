"""Experiment pipeline: reference runs, training, hybrid runs, comparison.

The full study wires together five stages, each also exposed as its own
command: a monolithic finite element reference, an all-FE coupled run, the
training of per-subdomain reduced operators from a short coupled run, the
hybrid (FE + reduced) coupled run, and a monolithic reduced model trained on
the reference snapshots. ``cmd_compare`` runs all of them and produces a
three-model table of solve times and errors against the reference.
"""

import os
import platform
import time
from dataclasses import dataclass

import numpy as np

from . import kernels, matio
from .config import GLOBAL_RECT, RunConfig
from .errors import ConfigurationError, DivergenceError
from .fem import assemble, boundary_values
from .mesh import build_mesh
from .rom import (OpInfOperators, PodBasis, RomStepper, compute_pod,
                  reconstruct, train_opinf)
from .schwarz import (FESubdomainSolver, RomSubdomainSolver, RunResult,
                      StitchPlan, run_coupled)
from .timestep import Trajectory, factorize, integrate, n_steps_for

#: Reference-norm floor below which a time is skipped by the error metric.
ZERO_NORM_FLOOR = 1e-14

#: Default regularization grid: unregularized plus a log sweep of [1e-6, 1].
DEFAULT_LAMBDA_GRID = (0.0,) + tuple(np.logspace(-6.0, 0.0, 13))


# ---------------------------------------------------------------------------
# Error metric
# ---------------------------------------------------------------------------

def _coerce_history(obj):
    """Accept a Trajectory, a (times, states) pair, or a bare states array."""
    if isinstance(obj, Trajectory):
        return obj.times, obj.states
    if isinstance(obj, tuple) and len(obj) == 2:
        return np.asarray(obj[0], dtype=float), np.asarray(obj[1], dtype=float)
    return None, np.asarray(obj, dtype=float)


def error_metric_detail(model, reference):
    """Error value plus degeneracy bookkeeping.

    Returns ``(value, used_absolute, n_skipped)``: the time-averaged
    relative L2 error over the shared grid, skipping times where the
    reference norm is below ``ZERO_NORM_FLOOR``. A reference that is zero
    at every time has no relative scale, so the mean absolute L2 error is
    returned with ``used_absolute`` set.
    """
    t_m, u_m = _coerce_history(model)
    t_r, u_r = _coerce_history(reference)
    if u_m.shape != u_r.shape:
        raise ConfigurationError(
            f"trajectory shapes differ: {u_m.shape} vs {u_r.shape}")
    if t_m is not None and t_r is not None:
        if t_m.shape != t_r.shape or np.max(np.abs(t_m - t_r)) > 1e-9:
            raise ConfigurationError("trajectory time grids differ")
    diff = np.linalg.norm(u_m - u_r, axis=0)
    ref = np.linalg.norm(u_r, axis=0)
    include = ref >= ZERO_NORM_FLOOR
    n_skipped = int(np.count_nonzero(~include))
    if not include.any():
        return float(np.mean(diff)), True, n_skipped
    value = float(np.mean(diff[include] / ref[include]))
    return value, False, n_skipped


def error_metric(model, reference):
    """Time-averaged relative L2 error of a trajectory against a reference."""
    return error_metric_detail(model, reference)[0]


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------

def build_global_mesh(cfg):
    return build_mesh(GLOBAL_RECT, cfg.nx, cfg.ny)


def nodal_history(system, trajectory):
    """Merge interior states and boundary traces into full nodal columns."""
    n_nodes = system.mesh.n_nodes
    full = np.empty((n_nodes, trajectory.n_times))
    full[system.interior_map] = trajectory.states
    full[system.boundary_map] = trajectory.boundary_traces
    return full


def solver_nodal_history(solver, trajectory):
    full = np.empty((solver.mesh.n_nodes, trajectory.n_times))
    full[solver.interior_map] = trajectory.states
    full[solver.boundary_map] = trajectory.boundary_traces
    return full


def stitch_history(run, global_mesh):
    """Stitch a coupled run's per-subdomain histories onto a global mesh."""
    plan = StitchPlan(run.config, global_mesh, run.meshes)
    fields = [solver_nodal_history(s, traj)
              for s, traj in zip(run.solvers, run.trajectories)]
    return plan.apply(fields)


def fe_factory(params):
    """Coupled-solver factory assigning finite elements everywhere."""
    def factory(spec, mesh, entry, config):
        return FESubdomainSolver(spec, mesh, params, config.dt,
                                 entry.gamma_positions, t0=config.t_begin)
    return factory


def hybrid_factory(params, trained):
    """Coupled-solver factory honoring each subdomain's model assignment."""
    def factory(spec, mesh, entry, config):
        if spec.model == "fe":
            return FESubdomainSolver(spec, mesh, params, config.dt,
                                     entry.gamma_positions,
                                     t0=config.t_begin)
        if entry.index not in trained:
            raise ConfigurationError(
                f"subdomain {entry.index + 1} is reduced but has no "
                f"trained operators; run training first")
        item = trained[entry.index]
        return RomSubdomainSolver(spec, mesh, params, config.dt,
                                  entry.gamma_positions, item.basis,
                                  item.ops, t0=config.t_begin)
    return factory


def _time_index(cfg, t):
    idx = int(round((t - 0.0) / cfg.dt))
    if abs(idx * cfg.dt - t) > 1e-9 * max(1.0, abs(t)):
        raise ConfigurationError(
            f"output time {t} is not on the dt={cfg.dt} grid")
    return idx


def _export_stitched_fields(cfg, run, global_mesh, out_dir, prefix):
    plan = StitchPlan(run.config, global_mesh, run.meshes)
    for t in cfg.resolved_field_times():
        j = _time_index(cfg, t)
        fields = [solver_nodal_history(s, traj)[:, j]
                  for s, traj in zip(run.solvers, run.trajectories)]
        stitched = plan.apply(fields)
        matio.export_field_csv(
            os.path.join(out_dir, f"{prefix}_field_t{t:g}.csv"),
            global_mesh, stitched)


# ---------------------------------------------------------------------------
# Monolithic reference
# ---------------------------------------------------------------------------

@dataclass
class MonolithicResult:
    mesh: object
    system: object
    trajectory: Trajectory
    nodal_states: np.ndarray
    timings: dict


def cmd_run_fom(cfg, out_dir=None):
    """Monolithic finite element reference over the full horizon."""
    params = cfg.params()
    mesh = build_global_mesh(cfg)
    t0 = time.perf_counter()
    system = assemble(mesh, params)
    stepper = factorize(system, cfg.dt)
    setup_seconds = time.perf_counter() - t0

    initial = np.zeros(system.n_interior)
    t1 = time.perf_counter()
    trajectory = integrate(stepper, 0.0, cfg.t_end, initial,
                           lambda t: boundary_values(system, params, t))
    solve_seconds = time.perf_counter() - t1
    result = MonolithicResult(
        mesh=mesh, system=system, trajectory=trajectory,
        nodal_states=nodal_history(system, trajectory),
        timings={"setup_seconds": setup_seconds,
                 "solve_seconds": solve_seconds})
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        matio.save_matrix(os.path.join(out_dir, "fom_times.bin"),
                          trajectory.times)
        matio.save_matrix(os.path.join(out_dir, "fom_states.bin"),
                          trajectory.states)
        matio.save_matrix(os.path.join(out_dir, "fom_traces.bin"),
                          trajectory.boundary_traces)
        matio.export_field_csv(os.path.join(out_dir, "fom_field_final.csv"),
                               mesh, result.nodal_states[:, -1])
    return result


# ---------------------------------------------------------------------------
# Coupled runs
# ---------------------------------------------------------------------------

def cmd_run_schwarz(cfg, out_dir=None):
    """All-FE coupled run over the full horizon."""
    params = cfg.params()
    run = run_coupled(cfg.schwarz_config(force_model="fe"),
                      fe_factory(params))
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        _export_stitched_fields(cfg, run, build_global_mesh(cfg), out_dir,
                                "schwarz")
    return run


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TrainedSubdomain:
    index: int
    basis: PodBasis
    ops: OpInfOperators
    lam: float
    energy: float


@dataclass
class TrainingResult:
    run: RunResult
    trained: dict
    timings: dict


def _retained_energy(svals, r):
    total = float(np.sum(svals ** 2))
    if total == 0.0:
        return 1.0
    return float(np.sum(svals[:r] ** 2) / total)


def cmd_train(cfg, out_dir=None):
    """Train per-subdomain reduced operators from a short all-FE run.

    The training data come from an all-FE coupled run over the training
    horizon, so each subdomain's recorded boundary trace has exactly the
    layout its reduced model sees online.
    """
    params = cfg.params()
    specs = cfg.subdomain_specs()
    training_cfg = cfg.schwarz_config(force_model="fe",
                                      t_end=cfg.training_t_end)
    run = run_coupled(training_cfg, fe_factory(params))
    trained = {}
    t0 = time.perf_counter()
    for i, spec in enumerate(specs):
        if spec.model != "rom":
            continue
        traj = run.trajectories[i]
        basis = compute_pod(traj.states, spec.rom_dim)
        ops = train_opinf(basis, traj.states, traj.boundary_traces,
                          cfg.dt, spec.rom_lambda)
        trained[i] = TrainedSubdomain(
            index=i, basis=basis, ops=ops, lam=spec.rom_lambda,
            energy=_retained_energy(basis.svals, spec.rom_dim))
    train_seconds = time.perf_counter() - t0
    result = TrainingResult(
        run=run, trained=trained,
        timings={"data_run_seconds": run.timings["solve_seconds"],
                 "train_seconds": train_seconds})
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        for i, item in trained.items():
            tag = f"sub{i + 1}"
            matio.save_matrix(os.path.join(out_dir, f"{tag}_basis.bin"),
                              item.basis.Psi)
            matio.save_matrix(os.path.join(out_dir, f"{tag}_svals.bin"),
                              item.basis.svals)
            matio.save_matrix(os.path.join(out_dir, f"{tag}_khat.bin"),
                              item.ops.Khat)
            matio.save_matrix(os.path.join(out_dir, f"{tag}_bhat.bin"),
                              item.ops.Bhat)
            matio.save_matrix(os.path.join(out_dir, f"{tag}_fhat.bin"),
                              item.ops.fhat)
            matio.save_meta(
                os.path.join(out_dir, f"{tag}_meta.txt"),
                {"r": item.basis.r, "lambda": item.lam,
                 "retained_energy": item.energy,
                 "snapshot_frobenius_sq": float(np.sum(item.basis.svals ** 2))})
    return result


def load_trained(cfg, out_dir):
    """Load persisted reduced operators for every reduced subdomain."""
    trained = {}
    for i, spec in enumerate(cfg.subdomain_specs()):
        if spec.model != "rom":
            continue
        tag = f"sub{i + 1}"
        paths = {name: os.path.join(out_dir, f"{tag}_{name}.bin")
                 for name in ("basis", "svals", "khat", "bhat", "fhat")}
        for name, p in paths.items():
            if not os.path.exists(p):
                raise ConfigurationError(
                    f"missing trained operator file {p}; run training first")
        basis = PodBasis(Psi=matio.load_matrix(paths["basis"]),
                         svals=matio.load_matrix(paths["svals"]).ravel())
        meta = matio.load_meta(os.path.join(out_dir, f"{tag}_meta.txt"))
        ops = OpInfOperators(Khat=matio.load_matrix(paths["khat"]),
                             Bhat=matio.load_matrix(paths["bhat"]),
                             fhat=matio.load_matrix(paths["fhat"]).ravel(),
                             lam=float(meta.get("lambda", "0")))
        trained[i] = TrainedSubdomain(
            index=i, basis=basis, ops=ops,
            lam=float(meta.get("lambda", "0")),
            energy=float(meta.get("retained_energy", "nan")))
    return trained


# ---------------------------------------------------------------------------
# Hybrid run
# ---------------------------------------------------------------------------

def cmd_run_hybrid(cfg, out_dir=None, trained=None):
    """Coupled run with the configured FE/reduced model assignment."""
    params = cfg.params()
    if trained is None:
        specs = cfg.subdomain_specs()
        needs = any(s.model == "rom" for s in specs)
        if needs:
            if out_dir is not None and all(
                    os.path.exists(os.path.join(out_dir, f"sub{i + 1}_khat.bin"))
                    for i, s in enumerate(specs) if s.model == "rom"):
                trained = load_trained(cfg, out_dir)
            else:
                trained = cmd_train(cfg, out_dir).trained
        else:
            trained = {}
    run = run_coupled(cfg.schwarz_config(), hybrid_factory(params, trained))
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        _export_stitched_fields(cfg, run, build_global_mesh(cfg), out_dir,
                                "hybrid")
    return run


# ---------------------------------------------------------------------------
# Monolithic reduced model
# ---------------------------------------------------------------------------

@dataclass
class MonoOpinfResult:
    basis: PodBasis
    ops: OpInfOperators
    lam: float
    grid: tuple
    grid_errors: np.ndarray
    times: np.ndarray
    nodal_states: np.ndarray
    diverged: bool
    timings: dict


def _mono_reprojection_error(basis, ops, cfg, train_states, train_traces):
    """Training-window error of a candidate monolithic reduced model."""
    stepper = RomStepper(ops, cfg.dt)
    n_t = train_states.shape[1]
    vhat = basis.Psi.T @ train_states[:, 0]
    lifted = np.empty((basis.n, n_t))
    lifted[:, 0] = reconstruct(basis, vhat)
    for j in range(1, n_t):
        vhat = stepper.step(vhat, train_traces[:, j])
        if not np.all(np.isfinite(vhat)):
            return np.inf
        lifted[:, j] = reconstruct(basis, vhat)
    value, _, _ = error_metric_detail(lifted, train_states)
    return value


def cmd_run_mono_opinf(cfg, out_dir=None, fom=None, lambda_grid=None):
    """Monolithic reduced model trained on reference snapshots.

    With a fixed ``mono.lambda`` that value is used directly; otherwise
    every candidate on the grid is trained and the one with the smallest
    training-window reprojection error wins (first on ties, so the grid
    order is part of the contract). The winner is integrated to the full
    horizon driven by the physical boundary trace.
    """
    if fom is None:
        fom = cmd_run_fom(cfg, out_dir=None)
    params = cfg.params()
    system = fom.system
    traj = fom.trajectory
    n_train = n_steps_for(0.0, cfg.training_t_end, cfg.dt) + 1
    train_states = traj.states[:, :n_train]
    train_traces = traj.boundary_traces[:, :n_train]

    t0 = time.perf_counter()
    basis = compute_pod(train_states, cfg.mono_r)
    if lambda_grid is not None:
        grid = tuple(float(l) for l in lambda_grid)
    elif cfg.mono_lambda is not None:
        grid = (float(cfg.mono_lambda),)
    else:
        grid = DEFAULT_LAMBDA_GRID
    grid_errors = np.empty(len(grid))
    candidates = []
    for k, lam in enumerate(grid):
        ops = train_opinf(basis, train_states, train_traces, cfg.dt, lam)
        candidates.append(ops)
        grid_errors[k] = _mono_reprojection_error(basis, ops, cfg,
                                                  train_states, train_traces)
    best = int(np.argmin(grid_errors))
    ops = candidates[best]
    lam = grid[best]
    train_seconds = time.perf_counter() - t0

    n_t = traj.n_times
    times = traj.times
    t1 = time.perf_counter()
    stepper = RomStepper(ops, cfg.dt)
    vhat = basis.Psi.T @ traj.states[:, 0]
    reduced = np.empty((cfg.mono_r, n_t))
    reduced[:, 0] = vhat
    diverged = False
    for j in range(1, n_t):
        g = boundary_values(system, params, times[j])
        vhat = stepper.step(vhat, g)
        reduced[:, j] = vhat
        if not np.all(np.isfinite(vhat)):
            diverged = True
            reduced[:, j:] = np.nan
            break
    solve_seconds = time.perf_counter() - t1

    nodal = np.empty((fom.mesh.n_nodes, n_t))
    nodal[system.interior_map] = basis.Psi @ reduced
    for j in range(n_t):
        nodal[system.boundary_map, j] = boundary_values(system, params,
                                                        times[j])
    result = MonoOpinfResult(
        basis=basis, ops=ops, lam=lam, grid=grid, grid_errors=grid_errors,
        times=times, nodal_states=nodal, diverged=diverged,
        timings={"train_seconds": train_seconds,
                 "solve_seconds": solve_seconds})
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        matio.save_matrix(os.path.join(out_dir, "mono_basis.bin"), basis.Psi)
        matio.save_matrix(os.path.join(out_dir, "mono_khat.bin"), ops.Khat)
        matio.save_matrix(os.path.join(out_dir, "mono_bhat.bin"), ops.Bhat)
        matio.save_matrix(os.path.join(out_dir, "mono_fhat.bin"), ops.fhat)
        matio.save_meta(os.path.join(out_dir, "mono_meta.txt"),
                        {"r": cfg.mono_r, "lambda": lam,
                         "diverged": diverged,
                         "grid": ",".join(f"{l:g}" for l in grid)})
    return result


# ---------------------------------------------------------------------------
# Comparison
# ---------------------------------------------------------------------------

@dataclass
class ModelReport:
    name: str
    error: float
    error_is_absolute: bool
    solve_seconds: float
    setup_seconds: float = 0.0
    train_seconds: float = 0.0
    iters_mean: float = float("nan")
    iters_max: float = float("nan")
    converged: bool = True
    note: str = ""


@dataclass
class ComparisonReport:
    """Three-model summary: solve-phase seconds and error vs the reference."""

    models: list
    reference_self_error: float
    reference_solve_seconds: float
    environment: str

    def to_text(self):
        lines = []
        header = f"{'metric':<24}" + "".join(f"{m.name:>16}"
                                             for m in self.models)
        lines.append(header)
        lines.append("-" * len(header))
        lines.append(f"{'solve seconds':<24}" + "".join(
            f"{m.solve_seconds:>16.3f}" for m in self.models))
        lines.append(f"{'error vs reference':<24}" + "".join(
            f"{m.error:>16.3e}" for m in self.models))
        lines.append(f"{'setup seconds':<24}" + "".join(
            f"{m.setup_seconds:>16.3f}" for m in self.models))
        lines.append(f"{'training seconds':<24}" + "".join(
            f"{m.train_seconds:>16.3f}" for m in self.models))
        lines.append(f"{'iterations mean':<24}" + "".join(
            f"{m.iters_mean:>16.2f}" for m in self.models))
        lines.append(f"{'iterations max':<24}" + "".join(
            f"{m.iters_max:>16.0f}" for m in self.models))
        notes = [m.note for m in self.models if m.note]
        lines.append("")
        lines.append(f"reference solve seconds: "
                     f"{self.reference_solve_seconds:.3f}")
        lines.append(f"reference self error: {self.reference_self_error:g}")
        lines.append(self.environment)
        for note in notes:
            lines.append(f"note: {note}")
        return "\n".join(lines)

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8") as handle:
            handle.write("metric," + ",".join(
                m.name.replace(" ", "_") for m in self.models) + "\n")
            handle.write("solve_seconds," + ",".join(
                f"{m.solve_seconds:.17g}" for m in self.models) + "\n")
            handle.write("error_vs_reference," + ",".join(
                f"{m.error:.17g}" for m in self.models) + "\n")
            handle.write("error_is_absolute," + ",".join(
                str(m.error_is_absolute).lower() for m in self.models) + "\n")
            handle.write("setup_seconds," + ",".join(
                f"{m.setup_seconds:.17g}" for m in self.models) + "\n")
            handle.write("train_seconds," + ",".join(
                f"{m.train_seconds:.17g}" for m in self.models) + "\n")
            handle.write("iterations_mean," + ",".join(
                f"{m.iters_mean:.17g}" for m in self.models) + "\n")
            handle.write("iterations_max," + ",".join(
                f"{m.iters_max:.17g}" for m in self.models) + "\n")
            handle.write("converged," + ",".join(
                str(m.converged).lower() for m in self.models) + "\n")


def _environment_note():
    return (f"environment: {platform.platform()}, python "
            f"{platform.python_version()}, numpy {np.__version__}, "
            f"kernels {kernels.backend_name()}, single-threaded")


def cmd_compare(cfg, out_dir=None, lambda_grid=None):
    """Run the full study and build the comparison report.

    Timings separate solve, setup, and training phases; only solve-phase
    seconds are comparable across models. Kernels are warmed up first so
    compilation never lands inside a timed phase.
    """
    kernels.warmup()
    global_mesh = build_global_mesh(cfg)
    fom = cmd_run_fom(cfg, out_dir=out_dir)
    ref = (fom.trajectory.times, fom.nodal_states)

    schwarz_run = cmd_run_schwarz(cfg, out_dir=out_dir)
    schwarz_hist = (schwarz_run.times, stitch_history(schwarz_run,
                                                      global_mesh))
    training = cmd_train(cfg, out_dir=out_dir)
    hybrid_run = cmd_run_hybrid(cfg, out_dir=out_dir,
                                trained=training.trained)
    hybrid_hist = (hybrid_run.times, stitch_history(hybrid_run, global_mesh))
    mono = cmd_run_mono_opinf(cfg, out_dir=out_dir, fom=fom,
                              lambda_grid=lambda_grid)
    mono_hist = (mono.times, mono.nodal_states)

    err_schwarz, abs_schwarz, _ = error_metric_detail(schwarz_hist, ref)
    err_hybrid, abs_hybrid, _ = error_metric_detail(hybrid_hist, ref)
    if mono.diverged:
        err_mono, abs_mono = float("inf"), False
    else:
        err_mono, abs_mono, _ = error_metric_detail(mono_hist, ref)
    self_error = error_metric(ref, ref)

    models = [
        ModelReport(
            name="all-fe-dd", error=err_schwarz,
            error_is_absolute=abs_schwarz,
            solve_seconds=schwarz_run.timings["solve_seconds"],
            setup_seconds=schwarz_run.timings["setup_seconds"],
            iters_mean=float(np.mean(schwarz_run.iterations)),
            iters_max=float(np.max(schwarz_run.iterations)),
            converged=schwarz_run.converged),
        ModelReport(
            name="hybrid-dd", error=err_hybrid,
            error_is_absolute=abs_hybrid,
            solve_seconds=hybrid_run.timings["solve_seconds"],
            setup_seconds=hybrid_run.timings["setup_seconds"],
            train_seconds=(training.timings["train_seconds"]
                           + training.timings["data_run_seconds"]),
            iters_mean=float(np.mean(hybrid_run.iterations)),
            iters_max=float(np.max(hybrid_run.iterations)),
            converged=hybrid_run.converged),
        ModelReport(
            name="mono-opinf", error=err_mono, error_is_absolute=abs_mono,
            solve_seconds=mono.timings["solve_seconds"],
            train_seconds=mono.timings["train_seconds"],
            converged=not mono.diverged,
            note=(f"monolithic reduced model diverged before t_end"
                  if mono.diverged else
                  f"monolithic lambda = {mono.lam:g}")),
    ]
    report = ComparisonReport(
        models=models, reference_self_error=self_error,
        reference_solve_seconds=fom.timings["solve_seconds"],
        environment=_environment_note())
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        report.write_csv(os.path.join(out_dir, "comparison.csv"))
        with open(os.path.join(out_dir, "comparison.txt"), "w",
                  encoding="utf-8") as handle:
            handle.write(report.to_text() + "\n")
    return report
