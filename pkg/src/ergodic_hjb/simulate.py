"""Monte Carlo validation of the eigenvalue via the controlled switching diffusion.

Simulates the regime-switching diffusion whose extended generator matches the
discretized operator: under a feedback field xi the continuous component
moves with drift ``-xi(X, S)`` and diffusion ``sqrt(2) dW`` (the unit
Laplacian in the generator fixes the noise scale), while the discrete
component switches 1 <-> 2 with intensities ``alpha_k(X)``.  The long-run
average of ``f_S(X) + l_S(X, xi(X, S))`` estimates the eigenvalue when xi is
the extracted optimal feedback, and strictly exceeds it for other fields.

Randomness comes from one counter-based Philox stream per path, keyed by
``(seed, path index)``; accumulation is an ordered reduction over the path
axis, so estimates are bit-identical across serial and threaded runs.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtri

from .discretize import Grid
from .dual_lp import ControlMesh, OccupationMeasure
from .errors import ParameterError
from .model import ProblemSpec, STATES


def _bilinear(grid: Grid, values: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of a node field at arbitrary points."""
    h, r = grid.h, grid.radius
    rel = np.clip((pts + r) / h, 0.0, grid.n_axis - 1.0)
    lo = np.minimum(rel.astype(int), grid.n_axis - 2)
    frac = rel - lo
    v = values.reshape(grid.shape)
    if grid.dim == 1:
        i = lo[:, 0]
        return v[i] * (1 - frac[:, 0]) + v[i + 1] * frac[:, 0]
    i, j = lo[:, 0], lo[:, 1]
    fx, fy = frac[:, 0], frac[:, 1]
    return (v[i, j] * (1 - fx) * (1 - fy) + v[i + 1, j] * fx * (1 - fy)
            + v[i, j + 1] * (1 - fx) * fy + v[i + 1, j + 1] * fx * fy)


@dataclass(frozen=True)
class FeedbackControl:
    """Feedback field evaluated along paths: grid-interpolated or analytic.

    ``kind`` is one of ``grid`` (multilinear interpolation of a stored node
    field, exact at the nodes), ``zero``, or ``linear`` (xi(x) = c x).
    ``radius`` bounds the box on which paths are considered valid.
    """

    kind: str
    radius: float
    grid: Grid | None = None
    values: np.ndarray | None = None     # (2, n_nodes, dim) for kind == "grid"
    coefficient: float = 0.0

    @staticmethod
    def from_fields(grid: Grid, values: np.ndarray) -> "FeedbackControl":
        return FeedbackControl(kind="grid", radius=grid.radius, grid=grid,
                               values=np.asarray(values, dtype=float))

    @staticmethod
    def zero(radius: float) -> "FeedbackControl":
        return FeedbackControl(kind="zero", radius=radius)

    @staticmethod
    def linear(radius: float, coefficient: float) -> "FeedbackControl":
        return FeedbackControl(kind="linear", radius=radius, coefficient=coefficient)

    def __call__(self, x: np.ndarray, k: int) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(x)
        if self.kind == "linear":
            return self.coefficient * x
        out = np.empty_like(x)
        for j in range(x.shape[-1]):
            out[:, j] = _bilinear(self.grid, self.values[k - 1][:, j], x)
        return out


@dataclass(frozen=True)
class SimulationSamples:
    """Thinned (state, position, control) stream kept for measure estimation."""

    x: np.ndarray
    state: np.ndarray
    control: np.ndarray
    stride: int


@dataclass(frozen=True)
class SimulationEstimate:
    avg_cost: float
    std_error: float
    tail_averages: np.ndarray
    switch_count: int
    clamp_count: int
    state_fraction: tuple[float, float]
    switch_intensity: tuple[float, float]
    mean_rate: tuple[float, float]
    horizon: float
    dt: float
    paths: int
    burn_in: float
    seed: int
    mode: str
    pde_verified: bool
    samples: SimulationSamples | None = None

    def to_dict(self) -> dict:
        return {
            "avg_cost": self.avg_cost, "std_error": self.std_error,
            "switch_count": self.switch_count, "clamp_count": self.clamp_count,
            "state_fraction": list(self.state_fraction),
            "switch_intensity": list(self.switch_intensity),
            "horizon": self.horizon, "dt": self.dt, "paths": self.paths,
            "burn_in": self.burn_in, "seed": self.seed, "mode": self.mode,
            "pde_verified": self.pde_verified,
        }


# fixed path-chunk and time-block sizes: the per-path draw layout (and hence
# every estimate) is independent of the thread count and path total
_PATH_CHUNK = 8192
_TIME_BLOCK = 768


def _path_generators(seed: int, lo: int, hi: int):
    return [np.random.Generator(np.random.Philox(key=np.array([seed, p], dtype=np.uint64)))
            for p in range(lo, hi)]


def _simulate_chunk(problem, control, horizon, dt, lo, hi, burn_steps, seed, mode,
                    sample_stride):
    dim = problem.dimension
    n_paths = hi - lo
    n_steps = int(round(horizon / dt))
    gens = _path_generators(seed, lo, hi)
    x = np.zeros((n_paths, dim))
    in1 = np.ones(n_paths, dtype=bool)
    cost_acc = np.zeros(n_paths)
    time_in = np.zeros(2)
    switches_from = np.zeros(2)
    rate_acc = np.zeros(2)
    clamps = 0
    clock = np.array([g.standard_exponential() for g in gens]) if mode == "exponential" else None
    integrated = np.zeros(n_paths)
    radius = control.radius
    alphas = (problem.switch_rate(1), problem.switch_rate(2))
    sources = (problem.source(1), problem.source(2))
    ham = problem.hamiltonian
    ainv = [ham.metric(k)._inv for k in STATES]
    drift = [np.asarray(ham.drift(k).value) for k in STATES]
    cgam = [ham.conjugate_gamma(k) for k in STATES]

    def lagrangian(k, xi):
        d = xi - drift[k]
        s = np.sum((d @ ainv[k]) * d, axis=1)
        return s ** (cgam[k] / 2.0) / cgam[k]

    alpha_const = None
    if all(a.form == "constant" for a in problem.switch_rates):
        alpha_const = (problem.switch_rates[0].c, problem.switch_rates[1].c)
        # switching by thinning: U < rate dt realized as Z < ndtri(rate dt)
        thresholds = (ndtri(alpha_const[0] * dt), ndtri(alpha_const[1] * dt))

    noise = np.sqrt(2.0 * dt)
    kept = []
    block_cap = min(n_steps, _TIME_BLOCK)
    step = 0
    draws = np.empty((n_paths, block_cap, dim + 1))
    while step < n_steps:
        block = min(block_cap, n_steps - step)
        for i, g in enumerate(gens):
            draws[i, :block] = g.standard_normal((block, dim + 1))
        for b in range(block):
            tallied = step + b >= burn_steps
            xi = np.where(in1[:, None], control(x, 1), control(x, 2))
            if tallied:
                run = np.where(in1, sources[0](x) + lagrangian(0, xi),
                               sources[1](x) + lagrangian(1, xi))
                cost_acc += run * dt
                n1 = int(np.count_nonzero(in1))
                time_in[0] += n1 * dt
                time_in[1] += (n_paths - n1) * dt
                if sample_stride and (step + b) % sample_stride == 0:
                    kept.append((x.copy(), np.where(in1, 1, 2), xi.copy()))
            z = draws[:, b, dim]
            if alpha_const is not None:
                if tallied:
                    rate_acc[0] += alpha_const[0] * n1 * dt
                    rate_acc[1] += alpha_const[1] * (n_paths - n1) * dt
                if mode == "thinning":
                    flip = z < np.where(in1, thresholds[0], thresholds[1])
                else:
                    rate = np.where(in1, alpha_const[0], alpha_const[1])
            else:
                rate = np.where(in1, alphas[0](x), alphas[1](x))
                if tallied:
                    rate_acc[0] += float(np.sum(rate[in1])) * dt
                    rate_acc[1] += float(np.sum(rate[~in1])) * dt
                if mode == "thinning":
                    flip = z < ndtri(rate * dt)
            if mode == "exponential":
                if alpha_const is not None:
                    rate = np.where(in1, alpha_const[0], alpha_const[1])
                integrated += rate * dt
                flip = integrated >= clock
                if np.any(flip):
                    integrated[flip] = 0.0
                    # Phi(Z) is uniform, so -log Phi(Z) is a fresh Exp(1) clock
                    clock[flip] = -log_ndtr(z[flip])
            if np.any(flip):
                if tallied:
                    switches_from[0] += int(np.count_nonzero(flip & in1))
                    switches_from[1] += int(np.count_nonzero(flip & ~in1))
                in1 = in1 ^ flip
            x = x - xi * dt + noise * draws[:, b, :dim]
            out = np.abs(x) > radius
            if np.any(out):
                clamps += int(np.sum(out))
                x = np.clip(x, -radius, radius)
        step += block
    return {
        "cost": cost_acc, "time_in": time_in, "switches_from": switches_from,
        "rate_acc": rate_acc, "clamps": clamps,
        "switches": int(switches_from.sum()), "kept": kept,
    }


def simulate_paths(problem: ProblemSpec, control: FeedbackControl, horizon: float,
                   dt: float, paths: int, burn_in: float = 0.1, seed: int = 0,
                   mode: str = "thinning", record_samples: bool = False,
                   sample_target: int = 200_000, threads: int = 1) -> SimulationEstimate:
    """Estimate the long-run average running cost under a feedback field.

    ``burn_in`` is the fraction of the horizon discarded before cost
    accumulation.  Switching uses first-order thinning by default (guarded by
    ``dt * max rate <= 0.1``) or an integrated-intensity exponential clock as
    a cross-check mode.  Paths leaving the box are clamped and counted; a
    nonzero ``clamp_count`` marks the estimate as unreliable (enlarge the
    box).  With ``record_samples`` a thinned (X, S, xi) stream is kept for
    occupation-measure estimation.
    """
    if mode not in ("thinning", "exponential"):
        raise ParameterError(f"unknown switching mode {mode!r}")
    if horizon <= 0 or dt <= 0 or paths <= 0:
        raise ParameterError("horizon, step and path count must be positive")
    if not 0.0 <= burn_in < 1.0:
        raise ParameterError("burn-in must be a fraction of the horizon in [0, 1)")
    axis = np.linspace(-control.radius, control.radius, 33)
    grids = np.meshgrid(*([axis] * problem.dimension), indexing="ij")
    probe = np.stack([g.ravel() for g in grids], axis=-1)
    alpha_max = max(float(np.max(problem.switch_rate(k)(probe))) for k in STATES)
    if dt * alpha_max > 0.1:
        raise ParameterError(
            f"dt * max switching rate = {dt * alpha_max:.3g} > 0.1; shrink the step")
    gammas = [problem.hamiltonian.gamma(k) for k in STATES]
    pde_verified = gammas[0] == gammas[1]

    n_steps = int(round(horizon / dt))
    burn_steps = int(round(burn_in * n_steps))
    stride = 0
    if record_samples:
        stride = max(1, (n_steps - burn_steps) * paths // max(sample_target, 1))

    bounds = [(lo, min(lo + _PATH_CHUNK, paths)) for lo in range(0, paths, _PATH_CHUNK)]
    args = [(problem, control, horizon, dt, lo, hi, burn_steps, seed, mode, stride)
            for lo, hi in bounds]
    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda a: _simulate_chunk(*a), args))
    else:
        results = [_simulate_chunk(*a) for a in args]

    tail_time = horizon - burn_in * horizon
    tails = np.concatenate([r["cost"] for r in results]) / tail_time
    time_in = np.sum([r["time_in"] for r in results], axis=0)
    switches_from = np.sum([r["switches_from"] for r in results], axis=0)
    rate_acc = np.sum([r["rate_acc"] for r in results], axis=0)
    total_time = float(np.sum(time_in))
    avg = float(np.mean(tails))
    se = float(np.std(tails, ddof=1) / np.sqrt(paths)) if paths > 1 else float("inf")
    samples = None
    if record_samples:
        xs = np.concatenate([s[0] for r in results for s in r["kept"]])
        ss = np.concatenate([s[1] for r in results for s in r["kept"]])
        cs = np.concatenate([s[2] for r in results for s in r["kept"]])
        samples = SimulationSamples(x=xs, state=ss, control=cs, stride=stride)
    return SimulationEstimate(
        avg_cost=avg,
        std_error=se,
        tail_averages=tails,
        switch_count=int(sum(r["switches"] for r in results)),
        clamp_count=int(sum(r["clamps"] for r in results)),
        state_fraction=tuple(float(t / total_time) for t in time_in),
        switch_intensity=tuple(
            float(switches_from[i] / time_in[i]) if time_in[i] > 0 else 0.0
            for i in range(2)),
        mean_rate=tuple(
            float(rate_acc[i] / time_in[i]) if time_in[i] > 0 else 0.0 for i in range(2)),
        horizon=horizon, dt=dt, paths=paths, burn_in=burn_in, seed=seed, mode=mode,
        pde_verified=pde_verified, samples=samples)


def empirical_measure(samples: SimulationSamples, grid: Grid, mesh: ControlMesh) -> OccupationMeasure:
    """Histogram of the sampled (position, control, state) stream on
    grid x control-mesh x state, normalized to unit mass."""
    if samples is None or samples.x.shape[0] == 0:
        raise ParameterError("no samples recorded; rerun with record_samples=True")
    n = samples.x.shape[0]
    m = (grid.n_axis - 1) // 2
    idx = np.clip(np.rint(samples.x / grid.h).astype(int) + m, 0, grid.n_axis - 1)
    flat_nodes = np.ravel_multi_index(tuple(idx.T), grid.shape) if grid.dim > 1 else idx[:, 0]
    weights = np.zeros((2, grid.n_nodes, mesh.n_controls))
    for lo in range(0, n, 65536):
        sl = slice(lo, min(lo + 65536, n))
        ctrl_idx = mesh.nearest(samples.control[sl])
        np.add.at(weights, (samples.state[sl] - 1, flat_nodes[sl], ctrl_idx), 1.0)
    weights /= n
    return OccupationMeasure(grid=grid, mesh=mesh, weights=weights, mass=1.0)
