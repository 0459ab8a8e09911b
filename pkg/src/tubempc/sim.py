"""Closed-loop simulation, Monte Carlo statistics, and feasibility scans.

Disturbances are sampled with counter-based generators (Philox) keyed by
a per-run seed derived from the master seed and the run index, so runs
are reproducible individually and independent of scheduling.
"""

import csv
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleError, InvalidArgumentError
from .mpc import (
    BaselineController,
    TrackingController,
    steady_theta_for_reference,
)


@dataclass(frozen=True)
class DisturbanceSpec:
    """Uniform [-beta, beta] noise injected on the ``pattern`` coordinates."""

    beta: float
    pattern: tuple
    seed: int

    def __post_init__(self):
        if self.beta < 0.0:
            raise InvalidArgumentError("beta must be nonnegative")
        object.__setattr__(self, "pattern", tuple(int(i) for i in self.pattern))

    def generator(self):
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(self.seed)))

    def sample(self, rng, n):
        w = np.zeros(n)
        if self.beta > 0.0 and self.pattern:
            w[list(self.pattern)] = rng.uniform(-self.beta, self.beta, len(self.pattern))
        return w


@dataclass
class SimTrace:
    """Per-step record of a closed-loop run; arrays have T+1 rows."""

    x: np.ndarray
    x_nom: np.ndarray
    u: np.ndarray
    w: np.ndarray
    cost: np.ndarray
    feasible: np.ndarray
    iterations: np.ndarray
    solve_seconds: np.ndarray
    candidate_feasible: np.ndarray
    truncated: bool = False

    @property
    def horizon(self):
        return self.x.shape[0] - 1

    def replay_check(self, sys, tol=0.0):
        """x(t+1) = A x(t) + B u(t) + w(t) exactly as recorded."""
        pred = self.x[:-1] @ sys.A.T + self.u[:-1] @ sys.B.T + self.w[:-1]
        return float(np.max(np.abs(pred - self.x[1:]), initial=0.0)) <= tol


def simulate(art, x0, r, x_des, u_des, T, dist, controller=None):
    """Run T+1 control steps of the closed loop from x0.

    Infeasibility at the first step raises InfeasibleError (consumed by
    feasibility scans); a later infeasibility truncates the trace and
    flags it (it indicates a broken invariant, not a usage error).
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    n, p = art.sys.n, art.sys.p
    ctrl = controller if controller is not None else TrackingController(art)
    ctrl.reset()
    rng = dist.generator()

    steps = T + 1
    x = np.zeros((steps, n))
    x_nom = np.zeros((steps, n))
    u = np.zeros((steps, p))
    w = np.zeros((steps, n))
    cost = np.zeros(steps)
    feasible = np.zeros(steps, dtype=bool)
    iters = np.zeros(steps, dtype=int)
    solve_s = np.zeros(steps)
    cand = np.zeros(steps, dtype=bool)

    xk = x0.copy()
    truncated = False
    for t in range(steps):
        x[t] = xk
        try:
            res = ctrl.control_step(xk, r, x_des, u_des)
        except InfeasibleError:
            if t == 0:
                raise
            truncated = True
            x = x[:t + 1]
            x_nom, u, w = x_nom[:t + 1], u[:t + 1], w[:t + 1]
            cost, feasible = cost[:t + 1], feasible[:t + 1]
            iters, solve_s, cand = iters[:t + 1], solve_s[:t + 1], cand[:t + 1]
            break
        x_nom[t] = res.x0_star
        u[t] = res.u_applied
        cost[t] = res.cost_star
        feasible[t] = True
        iters[t] = res.qp_stats["iterations"]
        solve_s[t] = res.qp_stats["solve_seconds"]
        cand[t] = res.qp_stats["candidate_feasible"] is not False
        w[t] = dist.sample(rng, n)
        xk = art.sys.A @ xk + art.sys.B @ u[t] + w[t]
    return SimTrace(x=x, x_nom=x_nom, u=u, w=w, cost=cost, feasible=feasible,
                    iterations=iters, solve_seconds=solve_s,
                    candidate_feasible=cand, truncated=truncated)


def performance_index(trace, x_ref):
    """Time-averaged squared distance to the reference state.

    Sums over the T+1 recorded samples and divides by T (the run length),
    matching the reported index definition.
    """
    x_ref = np.asarray(x_ref, dtype=float).ravel()
    T = trace.horizon
    if T < 1:
        raise InvalidArgumentError("trace too short for a performance index")
    return float(np.sum((trace.x - x_ref) ** 2) / T)


@dataclass(frozen=True)
class MonteCarloProtocol:
    """Run-count, horizon, disturbance, and initial-condition sampling."""

    runs: int
    T: int
    beta: float
    pattern: tuple
    r: np.ndarray
    x_des: np.ndarray
    u_des: np.ndarray
    master_seed: int
    x0_mode: str = "fixed"  # "fixed" | "position-intervals"
    x0: np.ndarray | None = None
    intervals: tuple = ()
    position_indices: tuple = (0, 2, 4)

    def __post_init__(self):
        object.__setattr__(self, "r", np.asarray(self.r, dtype=float).ravel())
        object.__setattr__(self, "x_des", np.asarray(self.x_des, dtype=float).ravel())
        object.__setattr__(self, "u_des", np.asarray(self.u_des, dtype=float).ravel())
        if self.x0_mode == "fixed":
            if self.x0 is None:
                raise InvalidArgumentError("fixed protocol needs x0")
            object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).ravel())
        elif self.x0_mode == "position-intervals":
            if len(self.intervals) != len(self.position_indices):
                raise InvalidArgumentError("one interval per sampled position")
        else:
            raise InvalidArgumentError(f"unknown x0_mode '{self.x0_mode}'")


@dataclass
class MonteCarloSummary:
    runs: list = field(default_factory=list)  # per-run dict rows
    skipped: int = 0
    step_mean: np.ndarray | None = None
    step_std: np.ndarray | None = None
    pi_mean: float = np.nan
    pi_std: float = np.nan
    x_ref: np.ndarray | None = None

    def finalize(self, sum_x, sumsq_x, count):
        self.step_mean = sum_x / count
        var = np.maximum(sumsq_x / count - self.step_mean ** 2, 0.0)
        self.step_std = np.sqrt(var)
        pis = np.array([row["pi"] for row in self.runs])
        self.pi_mean = float(pis.mean())
        self.pi_std = float(pis.std())


def _run_seeds(master_seed, runs):
    children = np.random.SeedSequence(master_seed).spawn(runs)
    out = []
    for child in children:
        sub = child.spawn(2)
        out.append((sub[0], int(sub[1].generate_state(1, np.uint64)[0])))
    return out


def _sample_x0(protocol, x0_rng, n):
    if protocol.x0_mode == "fixed":
        sigmas = protocol.x0[list(protocol.position_indices)]
        return protocol.x0.copy(), sigmas
    x0 = np.zeros(n)
    sigmas = np.array([x0_rng.uniform(lo, hi) for lo, hi in protocol.intervals])
    x0[list(protocol.position_indices)] = sigmas
    return x0, sigmas


def _single_run(art, protocol, run_idx, seed_pair, controller=None):
    x0_ss, dist_seed = seed_pair
    x0_rng = np.random.Generator(np.random.Philox(x0_ss))
    x0, sigmas = _sample_x0(protocol, x0_rng, art.sys.n)
    dist = DisturbanceSpec(beta=protocol.beta, pattern=protocol.pattern, seed=dist_seed)
    trace = simulate(art, x0, protocol.r, protocol.x_des, protocol.u_des,
                     protocol.T, dist, controller=controller)
    theta_r = steady_theta_for_reference(art.ssp, protocol.r)
    x_ref = art.ssp.M1 @ theta_r
    pi = performance_index(trace, x_ref)
    state_resid = np.max(art.X.normals @ trace.x.T - art.X.offsets[:, None])
    input_resid = np.max(art.U.normals @ trace.u.T - art.U.offsets[:, None])
    row = {
        "run": run_idx,
        "seed": dist_seed,
        "sigmas": sigmas,
        "beta": protocol.beta,
        "pi": pi,
        "max_violation": float(max(state_resid, input_resid)),
        "min_margin": float(-max(state_resid, input_resid)),
        "truncated": trace.truncated,
        "candidate_ok": bool(trace.candidate_feasible.all()),
    }
    return row, trace, x_ref


_PAR_ART = None
_PAR_PROTO = None


def _par_init(art, protocol):
    global _PAR_ART, _PAR_PROTO
    _PAR_ART = art
    _PAR_PROTO = protocol


def _par_run(args):
    run_idx, seed_pair = args
    row, trace, _ = _single_run(_PAR_ART, _PAR_PROTO, run_idx, seed_pair)
    return row, trace.x


def monte_carlo(art, protocol, parallel=1):
    """Independent closed-loop runs with derived per-run seeds.

    Initial infeasibility skips the run and is counted (the reference
    protocols must report zero skips).  The summary carries per-run rows
    plus streaming per-step state statistics.
    """
    seeds = _run_seeds(protocol.master_seed, protocol.runs)
    summary = MonteCarloSummary()
    sum_x = np.zeros((protocol.T + 1, art.sys.n))
    sumsq_x = np.zeros_like(sum_x)
    count = 0
    theta_r = steady_theta_for_reference(art.ssp, protocol.r)
    summary.x_ref = art.ssp.M1 @ theta_r

    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel, initializer=_par_init,
                                 initargs=(art, protocol)) as pool:
            for row, xs in pool.map(_par_run, enumerate(seeds), chunksize=8):
                summary.runs.append(row)
                if xs.shape[0] == protocol.T + 1:
                    sum_x += xs
                    sumsq_x += xs ** 2
                    count += 1
    else:
        controller = TrackingController(art)
        for run_idx, seed_pair in enumerate(seeds):
            try:
                row, trace, _ = _single_run(art, protocol, run_idx, seed_pair,
                                            controller=controller)
            except InfeasibleError:
                summary.skipped += 1
                continue
            summary.runs.append(row)
            if trace.x.shape[0] == protocol.T + 1:
                sum_x += trace.x
                sumsq_x += trace.x ** 2
                count += 1
    if count:
        summary.finalize(sum_x, sumsq_x, count)
    return summary


@dataclass(frozen=True)
class RoaGrid:
    """2-D position slice scanned for first-step feasibility."""

    x_values: np.ndarray
    y_values: np.ndarray
    template: np.ndarray  # remaining coordinates (velocities, z position)
    x_index: int = 0
    y_index: int = 2

    @classmethod
    def default(cls, template=None):
        template = np.array([0.0, 0.0, 0.0, 0.0, 1.5, 0.0]) if template is None else template
        return cls(x_values=np.linspace(-3.0, 3.0, 61),
                   y_values=np.linspace(-2.5, 2.5, 51),
                   template=np.asarray(template, dtype=float))


class _FeasibilityOracle:
    """Exact step-problem feasibility with Farkas-ray and point caching.

    Across grid points only the tube block of h changes, so a Farkas ray
    y (y >= 0, y'G = 0) certifying one infeasible point certifies every
    point with y'h(x_t) < 0, and a feasible decision vector certifies
    every point it remains feasible for; both checks are single dot
    products, leaving the LP for a handful of boundary cells.
    """

    def __init__(self, G, h_const, tube_rows, Fn, Fb, candidate_fn):
        self.G = G
        self.h_const = h_const
        self.tube_rows = tube_rows
        self.Fn = Fn
        self.Fb = Fb
        self.candidate_fn = candidate_fn
        self.rays = []
        self.points = []

    def h_vector(self, x_t):
        h = self.h_const.copy()
        h[self.tube_rows] = self.Fb + self.Fn @ x_t
        return h

    def query(self, x_t):
        from .qp.simplex import feasible_point

        h = self.h_vector(x_t)
        for y in self.rays:
            if y @ h < -1e-9:
                return False
        for z in self.points:
            if np.max(self.G @ z - h) <= 0.0:
                return True
        cand = self.candidate_fn(x_t)
        if cand is not None:
            self._remember_point(cand)
            return True
        point, ray = feasible_point(self.G, h)
        if point is not None:
            self._remember_point(point)
            return True
        if ray is not None and np.abs(ray @ self.G).max() < 1e-7:
            self.rays.append(ray)
        return False

    def _remember_point(self, z):
        self.points.append(z)
        if len(self.points) > 8:
            self.points.pop(0)


def roa_scan(art, base_art, grid, r=None, x_des=None, u_des=None):
    """First-step feasibility of both controllers over the grid.

    Cheap sufficient tests (terminal-set membership of a rollout
    candidate, cached feasible points, cached infeasibility rays)
    resolve almost every cell; the remainder fall back to an exact
    feasibility LP.  Returns a list of per-point records.
    """
    tctrl = TrackingController(art)
    bctrl = BaselineController(base_art)
    c_t = art.condensed()
    c_b = base_art.condensed()
    oracle_t = _FeasibilityOracle(c_t["G"], c_t["h_const"], c_t["tube_rows"],
                                  c_t["Fn"], c_t["Fb"], tctrl._cold_candidate)
    oracle_b = _FeasibilityOracle(c_b["G"], c_b["h_const"], c_b["tube_rows"],
                                  c_b["Fn"], c_b["Fb"], bctrl._cold_candidate)
    records = []
    for px in grid.x_values:
        for py in grid.y_values:
            x_t = grid.template.copy()
            x_t[grid.x_index] = px
            x_t[grid.y_index] = py
            records.append({"px": float(px), "py": float(py),
                            "feasible_rssa": oracle_t.query(x_t),
                            "feasible_base": oracle_b.query(x_t)})
    return records


def write_trace_csv(trace, path, provenance=""):
    n = trace.x.shape[1]
    p = trace.u.shape[1]
    with open(path, "w", newline="") as fh:
        if provenance:
            fh.write(f"# {provenance}\n")
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"x{i+1}" for i in range(n)]
                        + [f"xbar{i+1}" for i in range(n)]
                        + [f"u{i+1}" for i in range(p)]
                        + [f"w{i+1}" for i in range(n)]
                        + ["cost", "feasible", "iters", "solve_ms"])
        for t in range(trace.x.shape[0]):
            writer.writerow([t] + [repr(v) for v in trace.x[t]]
                            + [repr(v) for v in trace.x_nom[t]]
                            + [repr(v) for v in trace.u[t]]
                            + [repr(v) for v in trace.w[t]]
                            + [repr(float(trace.cost[t])), int(trace.feasible[t]),
                               int(trace.iterations[t]),
                               repr(float(trace.solve_seconds[t] * 1e3))])


def write_summary_csv(summary, path, provenance=""):
    with open(path, "w", newline="") as fh:
        if provenance:
            fh.write(f"# {provenance}\n")
        writer = csv.writer(fh)
        n_sig = len(summary.runs[0]["sigmas"]) if summary.runs else 3
        writer.writerow(["run_id", "seed"] + [f"sigma{i+1}" for i in range(n_sig)]
                        + ["beta", "PI", "max_violation"])
        for row in summary.runs:
            writer.writerow([row["run"], row["seed"]]
                            + [repr(v) for v in row["sigmas"]]
                            + [repr(row["beta"]), repr(row["pi"]),
                               repr(row["max_violation"])])


def write_step_stats_csv(summary, path, provenance=""):
    with open(path, "w", newline="") as fh:
        if provenance:
            fh.write(f"# {provenance}\n")
        writer = csv.writer(fh)
        n = summary.step_mean.shape[1]
        writer.writerow(["t"] + [f"mean_x{i+1}" for i in range(n)]
                        + [f"std_x{i+1}" for i in range(n)])
        for t in range(summary.step_mean.shape[0]):
            writer.writerow([t] + [repr(v) for v in summary.step_mean[t]]
                            + [repr(v) for v in summary.step_std[t]])


def write_roa_csv(records, path, provenance=""):
    with open(path, "w", newline="") as fh:
        if provenance:
            fh.write(f"# {provenance}\n")
        writer = csv.writer(fh)
        writer.writerow(["px", "py", "feasible_rssa", "feasible_base"])
        for rec in records:
            writer.writerow([repr(rec["px"]), repr(rec["py"]),
                             int(rec["feasible_rssa"]), int(rec["feasible_base"])])
