"""Block-coordinate descent for the static and incremental problems.

The magnetization block is a Riemannian gradient method on the product of
unit spheres (tangent gradient, step, renormalize); the deformation block is
a gradient method on the free nodes with a determinant guard.  Both use
Armijo backtracking with a Barzilai-Borwein trial step.

The dissipation and the TV regularizer are pseudo-Huber smoothed inside the
solver only.  Every reported value and every inequality check uses the exact
nonsmooth quantities.
"""
import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .dissipation import dissipation_distance, smoothed_dissipation
from .energy import energy_terms, total_energy
from .errors import LineSearchStalled, NonPositiveDeterminant, ConfigError
from .fields import State, DeformationField, MagnetizationField, nodal_gradient_at_qp
from .kinematics import det

log = logging.getLogger("chiralmag.optimizer")


@dataclass(frozen=True)
class OptimizerConfig:
    max_outer_iters: int = 2000
    grad_tol: float = 1e-6
    c1: float = 1e-4
    backtrack: float = 0.5
    step_cap_y: float = 0.25        # max nodal displacement per step, in cell widths
    step_cap_mu: float = 0.3        # max nodal change of mu per step
    huber_eps_D: float = 1e-4
    huber_eps_TV: float = 1e-3
    det_floor: float = 1e-6
    max_backtracks: int = 60
    stall_window: int = 50          # stop when the objective fell by less than
    stall_rtol: float = 1e-10       # stall_rtol * max(1, |f|) over stall_window iterations
    regularize: bool = True
    continuation: int = 3           # smoothing levels eps, eps/10, ... for incremental steps

    def __post_init__(self):
        for name in ("grad_tol", "c1", "backtrack", "step_cap_y", "step_cap_mu",
                     "huber_eps_D", "huber_eps_TV", "det_floor"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"optimizer.{name} must be positive", field=f"optimizer.{name}")
        if not 0 < self.backtrack < 1 or not 0 < self.c1 < 1:
            raise ConfigError("optimizer.backtrack and optimizer.c1 must lie in (0, 1)", field="optimizer")
        if self.max_outer_iters < 1:
            raise ConfigError("optimizer.max_outer_iters must be at least 1", field="optimizer.max_outer_iters")


@dataclass
class Problem:
    """Objective ``E~(t, q) [+ D(anchor, q)]`` with its smoothed surrogate."""

    t: float
    M: object
    loads: object = None
    stray: object = None
    anchor: State = None
    regularize: bool = True
    eps_D: float = 1e-4
    eps_TV: float = 1e-3

    def smoothed(self, q, gradient=False):
        br, grads = energy_terms(self.t, q, self.M, self.loads, self.stray, regularize=self.regularize,
                                 tv_eps=self.eps_TV, gradient=gradient)
        val = br.total
        if self.anchor is not None:
            d, gd = smoothed_dissipation(self.anchor, q, self.eps_D, gradient)
            val += d
            if gradient:
                grads = (grads[0] + gd[0], grads[1] + gd[1])
        return val, grads

    def energy(self, q):
        """Exact regularized total energy breakdown."""
        return total_energy(self.t, q, self.M, self.loads, self.stray, regularize=self.regularize)

    def exact(self, q):
        """Exact objective value."""
        val = self.energy(q).total
        if self.anchor is not None:
            val += dissipation_distance(self.anchor, q)
        return val


@dataclass
class OptimizeResult:
    state: State
    breakdown: object
    iterations: int
    converged: bool
    history: list = field(default_factory=list)
    message: str = ""

    def __iter__(self):
        return iter((self.state, self.breakdown, self.iterations))


def _node_norm(g, grid, mask):
    """Discrete L2 norm of a nodal gradient density: ``sqrt(sum g^2 / V_cell)``."""
    gg = np.where(mask[..., None], 0.0, g)
    return float(np.sqrt(np.sum(gg * gg) / grid.cell_volume))


def _tangent(g, mu):
    return g - np.sum(g * mu, axis=-1, keepdims=True) * mu


def _min_det(q):
    return float(det(nodal_gradient_at_qp(q.grid, q.y.nodes)).min())


class _Evaluator:
    def __init__(self, problem):
        self.problem = problem
        self.count = 0

    def value(self, q):
        self.count += 1
        try:
            return self.problem.smoothed(q)[0]
        except (NonPositiveDeterminant, ValueError):
            return np.inf

    def value_grad(self, q):
        self.count += 1
        return self.problem.smoothed(q, gradient=True)


def _line_search(ev, f0, x0, d, make_state, alpha0, cfg, block, guard=None):
    """Armijo backtracking along ``d`` from ``x0``; returns ``(alpha, state, f)``.

    Returns ``alpha = 0`` when the achievable decrease is at round-off level.
    """
    dd = float(np.sum(d * d))
    alpha = alpha0
    f_last = None
    for _ in range(cfg.max_backtracks):
        q = make_state(x0 + alpha * d)
        ok = guard is None or guard(q)
        f = ev.value(q) if ok else np.inf
        if np.isfinite(f):
            f_last = f
            if f <= f0 - cfg.c1 * alpha * dd:
                return alpha, q, f
        alpha *= cfg.backtrack
    if f_last is not None and f_last - f0 <= 1e-12 * max(1.0, abs(f0)):
        return 0.0, None, f0
    raise LineSearchStalled(f"line search stalled in the {block} block (|d|^2 = {dd:.3e})", block=block)


def _descend(problem, q0, cfg, mu_fixed=None, log_path=None, max_iters=None):
    """Block-coordinate descent on the smoothed objective."""
    grid = q0.grid
    y_fixed = grid.dirichlet_mask
    mu_fixed = np.zeros(grid.node_shape, dtype=bool) if mu_fixed is None else np.asarray(mu_fixed, bool)
    h = float(np.min(grid.spacing))
    ev = _Evaluator(problem)
    q = q0
    f, (gy, gm) = ev.value_grad(q)
    history = []
    prev = {"y": None, "mu": None}
    alphas = {"y": None, "mu": None}
    trace = [f]
    converged, message = False, "max_outer_iters reached"
    max_iters = cfg.max_outer_iters if max_iters is None else max_iters
    y_bc = q0.y.nodes[y_fixed].copy()
    it = 0
    for it in range(1, max_iters + 1):
        # magnetization block
        gmt = np.where(mu_fixed[..., None], 0.0, _tangent(gm, q.mu.nodes))
        nm = _node_norm(gmt, grid, mu_fixed)
        step_mu = 0.0
        if nm > 0:
            d = -gmt
            a0 = _bb(prev["mu"], q.mu.nodes, gmt, alphas["mu"])
            a0 = min(a0, cfg.step_cap_mu / max(np.max(np.linalg.norm(d, axis=-1)), 1e-300))
            y_nodes = q.y.nodes

            def make_mu(x, y_nodes=y_nodes):
                return State(q.y, MagnetizationField(grid, x / np.linalg.norm(x, axis=-1, keepdims=True)))

            alpha, qn, fn = _line_search(ev, f, q.mu.nodes, d, make_mu, a0, cfg, "mu")
            if alpha > 0:
                prev["mu"] = (q.mu.nodes, gmt)
                alphas["mu"] = alpha
                step_mu = alpha * float(np.max(np.linalg.norm(d, axis=-1)))
                q, f = qn, fn
                f, (gy, gm) = ev.value_grad(q)

        # deformation block
        gyf = np.where(y_fixed[..., None], 0.0, gy)
        ny = _node_norm(gyf, grid, y_fixed)
        step_y = 0.0
        if ny > 0:
            d = -gyf
            a0 = _bb(prev["y"], q.y.nodes, gyf, alphas["y"])
            a0 = min(a0, cfg.step_cap_y * h / max(np.max(np.linalg.norm(d, axis=-1)), 1e-300))
            mu_now = q.mu

            def make_y(x, mu_now=mu_now):
                return State(DeformationField(grid, x), mu_now)

            def guard(qq):
                try:
                    return _min_det(qq) > cfg.det_floor
                except Exception:
                    return False

            alpha, qn, fn = _line_search(ev, f, q.y.nodes, d, make_y, a0, cfg, "y", guard)
            if alpha > 0:
                prev["y"] = (q.y.nodes, gyf)
                alphas["y"] = alpha
                step_y = alpha * float(np.max(np.linalg.norm(d, axis=-1)))
                q, f = qn, fn
                f, (gy, gm) = ev.value_grad(q)
        if not np.array_equal(q.y.nodes[y_fixed], y_bc):
            raise AssertionError("Dirichlet nodes moved")

        gmt = np.where(mu_fixed[..., None], 0.0, _tangent(gm, q.mu.nodes))
        nm = _node_norm(gmt, grid, mu_fixed)
        ny = _node_norm(np.where(y_fixed[..., None], 0.0, gy), grid, y_fixed)
        history.append({"iteration": it, "objective": f, "grad_y": ny, "grad_mu": nm,
                        "step_y": step_y, "step_mu": step_mu})
        if nm < cfg.grad_tol and ny < cfg.grad_tol:
            converged, message = True, "gradient tolerance reached"
            break
        if step_mu == 0.0 and step_y == 0.0:
            converged, message = True, "no further decrease above round-off"
            break
        trace.append(f)
        if len(trace) > cfg.stall_window and \
                trace[-cfg.stall_window - 1] - f < cfg.stall_rtol * max(1.0, abs(f)):
            converged, message = True, "objective stagnated"
            break
    if log_path is not None:
        write_convergence_log(history, log_path)
    log.debug("descent finished after %d iterations (%s), %d evaluations", it, message, ev.count)
    return q, it, converged, history, message


def _bb(prev, x, g, alpha_prev):
    """Barzilai-Borwein trial step from the previous iterate of a block."""
    if prev is None:
        return 1.0 if alpha_prev is None else 2.0 * alpha_prev
    s = x - prev[0]
    yk = g - prev[1]
    sy = float(np.sum(s * yk))
    if sy > 0:
        return float(np.sum(s * s)) / sy
    return 2.0 * alpha_prev if alpha_prev else 1.0


def write_convergence_log(history, path):
    cols = ["iteration", "objective", "grad_y", "grad_mu", "step_y", "step_mu"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in history:
            w.writerow([row[c] if c == "iteration" else repr(float(row[c])) for c in cols])


def _bind(stray, q):
    if stray is not None and getattr(stray, "egrid", None) is None and stray.route == "deposit":
        return stray.bind(q)
    return stray


def minimize_static(t, q0, M, loads=None, stray=None, cfg=OptimizerConfig(), mu_fixed=None, log_path=None):
    """Minimize ``E~(t, .)`` from ``q0``; returns ``(state, breakdown, iterations)``-unpackable result."""
    q0.check_admissible()
    stray = _bind(stray, q0)
    prob = Problem(t, M, loads, stray, None, cfg.regularize, cfg.huber_eps_D, cfg.huber_eps_TV)
    q, it, conv, hist, msg = _descend(prob, q0, cfg, mu_fixed, log_path)
    q.check_admissible()
    return OptimizeResult(q, prob.energy(q), it, conv, hist, msg)


@dataclass
class IncrementalResult:
    state: State
    breakdown: object
    dissipation: float
    objective: float
    stay_put_objective: float
    iterations: int
    levels: int
    fallback: bool
    history: list = field(default_factory=list)

    @property
    def stay_put_gap(self):
        """``E~(t,q) + D(q_prev,q) - E~(t,q_prev)``; should be <= 0."""
        return self.objective - self.stay_put_objective


def minimize_incremental(t, q_prev, M, loads=None, stray=None, cfg=OptimizerConfig(), start=None,
                         mu_fixed=None, log_path=None, tol=1e-8):
    """Minimize ``E~(t, .) + D(q_prev, .)`` warm-started at ``start`` (default ``q_prev``).

    The smoothing of D and TV is reduced by factors of 10 until the exact
    objective does not exceed the stay-put value ``E~(t, q_prev)`` by more
    than ``tol * scale``.  The previous state is returned unless a descent
    result undercuts the stay-put value by more than ``tol * scale``.
    """
    q_prev.check_admissible()
    stray = _bind(stray, q_prev)
    q = q_prev if start is None else start
    prob0 = Problem(t, M, loads, stray, q_prev, cfg.regularize, cfg.huber_eps_D, cfg.huber_eps_TV)
    stay = prob0.exact(q_prev)
    scale = max(1.0, abs(stay))
    total_it, hist_all = 0, []
    best_q, best_val = q_prev, stay
    level = 0
    for level in range(1, cfg.continuation + 1):
        f = 10.0 ** (-(level - 1))
        prob = replace(prob0, eps_D=cfg.huber_eps_D * f, eps_TV=cfg.huber_eps_TV * f)
        q, it, _, hist, _ = _descend(prob, q, cfg, mu_fixed)
        total_it += it
        hist_all += hist
        val = prob0.exact(q)
        # a move must beat staying put by more than the tolerance
        if val < best_val and val < stay - tol * scale:
            best_q, best_val = q, val
        if val <= stay + tol * scale:
            break
    fallback = best_q is q_prev
    if log_path is not None:
        write_convergence_log(hist_all, log_path)
    best_q.check_admissible()
    br = prob0.energy(best_q)
    return IncrementalResult(best_q, br, dissipation_distance(q_prev, best_q), best_val, stay,
                             total_it, level, fallback, hist_all)


# stability -----------------------------------------------------------------

@dataclass
class StabilityReport:
    energy: float
    margins: list
    labels: list
    scale: float
    competitors: list = field(default_factory=list, repr=False)

    @property
    def worst_margin(self):
        return float(min(self.margins)) if self.margins else 0.0

    @property
    def worst_index(self):
        return int(np.argmin(self.margins))

    def passed(self, rtol=1e-6):
        return self.worst_margin >= -rtol * self.scale

    def to_dict(self):
        return {"energy": self.energy, "worst_margin": self.worst_margin, "scale": self.scale,
                "n_competitors": len(self.margins)}


def rotate_state(q, R, c=(0.0, 0.0, 0.0)):
    """Rigid motion ``y -> R y + c``, ``mu -> R mu``."""
    R = np.asarray(R, dtype=float)
    y = DeformationField(q.grid, q.y.nodes @ R.T + np.asarray(c, float))
    mu = MagnetizationField(q.grid, q.mu.nodes @ R.T)
    return State(y, mu)


def random_rotation(rng):
    qv = rng.standard_normal(4)
    a, b, c, d = qv / np.linalg.norm(qv)
    return np.array([
        [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
        [2 * (b * c + a * d), a * a - b * b + c * c - d * d, 2 * (c * d - a * b)],
        [2 * (b * d - a * c), 2 * (c * d + a * b), a * a - b * b - c * c + d * d],
    ])


def sample_competitors(q, n=50, rng=None, mu_amplitudes=(1e-3, 1e-2, 1e-1), y_amplitudes=(1e-3, 1e-2, 1e-1),
                       previous=(), field_direction=None, rotations=0, mu_fixed=None):
    """Competitor states for the stability audit.

    Random tangent perturbations of ``mu`` and random interior perturbations of
    ``y`` (amplitudes in units of the cell width) are drawn in alternation until
    ``n`` random competitors exist; previous states, uniform states aligned
    with ``+-field_direction`` and ``rotations`` rigid rotations are appended.
    Perturbations that would make the state inadmissible are halved.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    grid = q.grid
    free_y = ~grid.dirichlet_mask
    mu_free = np.ones(grid.node_shape, bool) if mu_fixed is None else ~np.asarray(mu_fixed, bool)
    h = float(np.min(grid.spacing))
    out, labels = [], []
    k = 0
    while len(out) < n:
        if k % 2 == 0:
            a = mu_amplitudes[(k // 2) % len(mu_amplitudes)]
            d = _tangent(rng.standard_normal(q.mu.nodes.shape), q.mu.nodes) * mu_free[..., None]
            raw = q.mu.nodes + a * d
            cand = State(q.y, MagnetizationField(grid, raw / np.linalg.norm(raw, axis=-1, keepdims=True)))
            label = f"mu_perturbation(a={a:g})"
        else:
            a = y_amplitudes[(k // 2) % len(y_amplitudes)]
            d = rng.standard_normal(q.y.nodes.shape) * free_y[..., None]
            cand = None
            for _ in range(20):
                trial = State(DeformationField(grid, q.y.nodes + a * h * d), q.mu)
                if _min_det(trial) > 0:
                    cand = trial
                    break
                a *= 0.5
            label = f"y_perturbation(a={a:g})"
        k += 1
        if cand is not None:
            out.append(cand)
            labels.append(label)
    for j, p in enumerate(previous):
        out.append(p)
        labels.append(f"previous[{j}]")
    if field_direction is not None and np.linalg.norm(field_direction) > 0:
        e = np.asarray(field_direction, float) / np.linalg.norm(field_direction)
        for s in (1.0, -1.0):
            out.append(State(q.y, MagnetizationField.constant(grid, s * e)))
            labels.append(f"uniform({'+' if s > 0 else '-'}field)")
    for _ in range(rotations):
        out.append(rotate_state(q, random_rotation(rng)))
        labels.append("rigid_rotation")
    return out, labels


def stability_audit(t, q, M, loads=None, stray=None, competitors=None, labels=None, regularize=True, **sample_kw):
    """Margins ``E~(t,qh) + D(q,qh) - E~(t,q)`` over competitor states."""
    if competitors is None:
        competitors, labels = sample_competitors(q, **sample_kw)
    labels = labels or [f"competitor[{i}]" for i in range(len(competitors))]
    e0 = total_energy(t, q, M, loads, stray, regularize=regularize).total
    margins = []
    for c in competitors:
        try:
            ec = total_energy(t, c, M, loads, stray, regularize=regularize).total
        except NonPositiveDeterminant:
            ec = np.inf
        margins.append(float(ec + dissipation_distance(q, c) - e0))
    return StabilityReport(e0, margins, list(labels), max(1.0, abs(e0)), competitors)
