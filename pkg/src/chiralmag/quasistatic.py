"""Incremental minimization in time, with per-step audits.

Each step solves ``min E~(t_i, q) + D(q_{i-1}, q)`` warm-started at the
previous state and then audits discrete stability against sampled
competitors, the per-step energy inequality and the a-priori Gronwall bound.
A competitor that violates stability is, by the triangle inequality for D,
strictly better for the incremental problem, so the step is re-solved from it.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from .dissipation import dissipation_distance
from .energy import DET_BOUND, coercivity_constants, load_power, total_energy
from .errors import CertificationFailed, ChiralmagError, StepFailed
from .optimizer import OptimizerConfig, minimize_incremental, sample_competitors, stability_audit

log = logging.getLogger("chiralmag.quasistatic")

GAUSS5_NODES, GAUSS5_WEIGHTS = np.polynomial.legendre.leggauss(5)


@dataclass(frozen=True)
class Partition:
    times: tuple

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or len(t) < 2:
            raise ValueError("a partition needs at least two times")
        if t[0] != 0.0:
            raise ValueError("a partition must start at t = 0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("partition times must be strictly increasing")
        object.__setattr__(self, "times", tuple(float(x) for x in t))

    @classmethod
    def uniform(cls, N, T=1.0):
        if N < 1:
            raise ValueError("the number of steps must be at least 1")
        return cls(tuple(np.linspace(0.0, T, N + 1)))

    @property
    def N(self):
        return len(self.times) - 1

    @property
    def T(self):
        return self.times[-1]

    @property
    def fineness(self):
        return float(np.max(np.diff(self.times)))


def integrate_power(q, t0, t1, loads):
    """``int_{t0}^{t1} dE~/dt (tau, q) dtau`` by 5-point Gauss (exact for degree <= 9 loads)."""
    if loads is None or t1 == t0:
        return 0.0
    mid, half = 0.5 * (t0 + t1), 0.5 * (t1 - t0)
    return float(half * sum(w * load_power(mid + half * x, q, loads)
                            for x, w in zip(GAUSS5_NODES, GAUSS5_WEIGHTS)))


# Gronwall constants ----------------------------------------------------------

@dataclass(frozen=True)
class GronwallConstants:
    L: float
    M: float
    details: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not (self.L > 0 and self.M > 0):
            raise ValueError("Gronwall constants must be positive")

    def bound(self, E0, t):
        """Right-hand side ``(E0 + M) exp(L t)`` of the a-priori estimate."""
        return (E0 + self.M) * np.exp(self.L * t)

    def certify(self, states, times, M, loads, stray=None, regularize=True):
        """Assert ``|dE~/dt| <= L (E~ + M)`` on every (state, time) sample."""
        worst = np.inf
        for q in states:
            for t in times:
                e = total_energy(t, q, M, loads, stray, regularize=regularize).total
                dp = abs(load_power(t, q, loads)) if loads is not None else 0.0
                slack = self.L * (e + self.M) - dp
                worst = min(worst, slack)
                if slack < -1e-12 * max(1.0, dp):
                    raise CertificationFailed(
                        f"|dE/dt| = {dp:.6e} exceeds L(E + M) = {self.L * (e + self.M):.6e} at t = {t:.6g}")
        return float(worst)


def _sup_poly(coeffs, T, deriv=False):
    """Upper bound of ``|sum c_k t^k|`` (or its derivative) on ``[0, T]``."""
    c = np.asarray(coeffs, dtype=float).reshape(-1, 3)
    norms = np.linalg.norm(c, axis=1)
    if deriv:
        return float(sum(k * norms[k] * T ** (k - 1) for k in range(1, len(c))))
    return float(sum(norms[k] * T ** k for k in range(len(c))))


def _young(c, beta, theta):
    """``max_x>=0 (c x^beta - theta x)`` for ``0 < beta < 1``."""
    if c <= 0:
        return 0.0
    return theta * (1.0 - beta) / beta * (c * beta / theta) ** (1.0 / (1.0 - beta))


def _work_coefficients(grid, y_bc_max, Ff, Fg, Fh, p):
    """Coefficients ``(c0, c1, c3)`` of ``|work| <= c0 + c1 P^(1/p) + c3 P^(3/p)``.

    ``P = int |grad y|^p``.  Uses a Poincare inequality along the normal of a
    Dirichlet face, a one-dimensional trace inequality on each Neumann face,
    Hoelder, and ``det F <= |F|^3 / 3^(3/2)``.
    """
    vol = grid.volume
    pp = p / (p - 1.0)
    lengths = grid.lengths
    d = "xyz".index(sorted(grid.dirichlet_faces)[0][0])
    ell = lengths[d]
    # ||y||_p <= Ybar vol^(1/p) + ell P^(1/p)
    yp0, yp1 = y_bc_max * vol ** (1.0 / p), ell
    c0 = Ff * y_bc_max * vol
    c1 = Ff * vol ** (1.0 / pp) * ell
    for face in grid.neumann_faces:
        e = "xyz".index(face[0])
        le = lengths[e]
        area = vol / le
        a = area ** (1.0 / pp)
        c0 += Fg * a * le ** (-1.0 / p) * yp0
        c1 += Fg * a * (le ** (-1.0 / p) * yp1 + le ** (1.0 / pp))
    c3 = Fh * DET_BOUND * vol ** (1.0 - 3.0 / p)
    return c0, c1, c3


def estimate_gronwall_constants(q_scale, loads, M, L=None):
    """Assemble ``(L, M)`` with ``|dE~/dt| <= L (E~ + M)`` for all admissible states.

    The rate and the work of the loads are bounded by
    ``c0 + c1 P^(1/p) + c3 P^(3/p)`` with ``P = int |grad y|^p``; the energy
    is bounded below by ``C1 P - C3 + gamma_min |Omega| - |work|``.  Young's
    inequality absorbs the sublinear powers into ``L C1 P``.
    """
    grid = q_scale.grid
    T = loads.T if loads is not None else 1.0
    L = 1.0 / T if L is None else float(L)
    p = M.p
    ybar = float(np.max(np.linalg.norm(q_scale.y.nodes[grid.dirichlet_mask], axis=-1)))
    if loads is None:
        sups = rates = (0.0, 0.0, 0.0)
    else:
        sups = tuple(_sup_poly(getattr(loads, k), T) for k in "fgh")
        rates = tuple(_sup_poly(getattr(loads, k), T, deriv=True) for k in "fgh")
    w0, w1, w3 = _work_coefficients(grid, ybar, *sups, p)
    a0, a1, a3 = _work_coefficients(grid, ybar, *rates, p)
    C1, C2, C3 = coercivity_constants(M, grid.volume)
    C3p = C3 - min(0.0, M.gamma_min()) * grid.volume
    theta = 0.5 * L * C1
    y1 = _young(a1 + L * w1, 1.0 / p, theta)
    y3 = _young(a3 + L * w3, 3.0 / p, theta)
    Mc = C3p + w0 + (a0 + y1 + y3) / L
    details = {"C1": C1, "C2": C2, "C3": C3, "work": (w0, w1, w3), "rate": (a0, a1, a3),
               "sup_loads": sups, "sup_rates": rates}
    return GronwallConstants(L, max(Mc, 1e-12), details)


# trajectory ------------------------------------------------------------------

@dataclass
class StepAudit:
    t: float
    energies: dict
    dissipation_increment: float
    cumulative_dissipation: float
    stability_margin: float
    stability_scale: float
    stability_passed: bool
    worst_competitor: str
    energy_inequality_gap: float
    energy_inequality_passed: bool
    apriori_gap: float
    apriori_passed: bool
    restarts: int = 0
    iterations: int = 0

    def to_dict(self):
        return {
            "t": self.t,
            "energies": self.energies,
            "dissipation_increment": self.dissipation_increment,
            "cumulative_dissipation": self.cumulative_dissipation,
            "stability_margin": self.stability_margin,
            "inequality_gaps": {"energy_inequality": self.energy_inequality_gap, "apriori": self.apriori_gap},
            "passed": {"stability": self.stability_passed, "energy_inequality": self.energy_inequality_passed,
                       "apriori": self.apriori_passed},
            "restarts": self.restarts,
            "iterations": self.iterations,
        }

    @property
    def passed(self):
        return self.stability_passed and self.energy_inequality_passed and self.apriori_passed


@dataclass
class Trajectory:
    partition: Partition
    states: list
    breakdowns: list
    increments: list
    audits: list
    gronwall: GronwallConstants = None

    @property
    def total_dissipation(self):
        return float(sum(self.increments))

    @property
    def cumulative_dissipation(self):
        return np.concatenate([[0.0], np.cumsum(self.increments)])

    def all_passed(self):
        return all(a.passed for a in self.audits)

    def records(self):
        return [a.to_dict() for a in self.audits]


@dataclass(frozen=True)
class AuditSettings:
    n_competitors: int = 50
    tol_stab: float = 1e-6          # relative to max(1, |E~|)
    tol_ineq: float = 1e-8
    max_restarts: int = 3
    seed: int = 0
    rotations: int = 0


def _field_direction(loads, t):
    if loads is None:
        return None
    h = loads.field(t)
    return h if np.linalg.norm(h) > 0 else None


def _stable_step(t, q_prev, M, loads, stray, cfg, audit, rng, previous, mu_fixed=None):
    """Solve one incremental problem and restart from violating competitors."""
    res = minimize_incremental(t, q_prev, M, loads, stray, cfg, mu_fixed=mu_fixed)
    iters = res.iterations
    restarts = 0
    while True:
        comps, labels = sample_competitors(res.state, audit.n_competitors, rng, previous=previous,
                                           field_direction=_field_direction(loads, t),
                                           rotations=audit.rotations, mu_fixed=mu_fixed)
        rep = stability_audit(t, res.state, M, loads, stray, comps, labels, regularize=cfg.regularize)
        if rep.passed(audit.tol_stab) or restarts >= audit.max_restarts:
            return res, rep, restarts, iters
        restarts += 1
        log.info("t=%.4g: competitor %s violates stability by %.3e; restarting",
                 t, rep.labels[rep.worst_index], rep.worst_margin)
        trial = minimize_incremental(t, q_prev, M, loads, stray, cfg, start=rep.competitors[rep.worst_index],
                                     mu_fixed=mu_fixed)
        iters += trial.iterations
        if trial.objective < res.objective:
            res = trial


def prepare_initial(q0_raw, M, loads=None, stray=None, cfg=OptimizerConfig(), audit=AuditSettings(),
                    mu_fixed=None, return_report=False):
    """Stabilize a raw initial datum at ``t = 0``."""
    rng = np.random.default_rng(audit.seed)
    res, rep, _, _ = _stable_step(0.0, q0_raw, M, loads, stray, cfg, audit, rng, [q0_raw], mu_fixed)
    return (res.state, rep) if return_report else res.state


def evolve(q0, partition, M, loads=None, stray=None, cfg=OptimizerConfig(), audit=AuditSettings(),
           gronwall=None, mu_fixed=None, callback=None):
    """Run the incremental scheme over ``partition`` from the stable datum ``q0``."""
    if stray is not None and stray.route == "deposit" and stray.egrid is None:
        stray = stray.bind(q0)
    rng = np.random.default_rng(audit.seed)
    times = partition.times
    reg = cfg.regularize
    if gronwall is None:
        gronwall = estimate_gronwall_constants(q0, loads, M)
    br0 = total_energy(times[0], q0, M, loads, stray, regularize=reg)
    E0 = br0.total
    comps, labels = sample_competitors(q0, audit.n_competitors, rng, field_direction=_field_direction(loads, 0.0),
                                       rotations=audit.rotations, mu_fixed=mu_fixed)
    rep0 = stability_audit(times[0], q0, M, loads, stray, comps, labels, regularize=reg)
    a0 = gronwall.bound(E0, 0.0)
    audits = [StepAudit(times[0], br0.to_dict(), 0.0, 0.0, rep0.worst_margin, rep0.scale,
                        rep0.passed(audit.tol_stab), rep0.labels[rep0.worst_index], 0.0, True,
                        E0 + gronwall.M - a0, True)]
    states, breakdowns, increments = [q0], [br0], []
    cum = 0.0
    for i in range(1, len(times)):
        t0, t1 = times[i - 1], times[i]
        q_prev = states[-1]
        try:
            res, rep, restarts, iters = _stable_step(t1, q_prev, M, loads, stray, cfg, audit, rng,
                                                     states, mu_fixed)
        except ChiralmagError as exc:
            raise StepFailed(i, exc) from exc
        q = res.state
        dinc = dissipation_distance(q_prev, q)
        cum += dinc
        e_new = res.breakdown.total
        e_old = breakdowns[-1].total
        scale = max(1.0, abs(e_new), abs(e_old))
        gap = e_new - e_old + dinc - integrate_power(q_prev, t0, t1, loads)
        apr = e_new + gronwall.M + cum - gronwall.bound(E0, t1)
        audits.append(StepAudit(
            t1, res.breakdown.to_dict(), dinc, cum, rep.worst_margin, rep.scale, rep.passed(audit.tol_stab),
            rep.labels[rep.worst_index], gap, bool(gap <= audit.tol_ineq * scale), apr,
            bool(apr <= 1e-12 * max(1.0, abs(gronwall.bound(E0, t1)))), restarts, iters))
        states.append(q)
        breakdowns.append(res.breakdown)
        increments.append(dinc)
        log.info("step %d/%d t=%.4g E=%.6g D=%.3e margin=%.3e", i, len(times) - 1, t1, e_new, dinc,
                 rep.worst_margin)
        if callback is not None:
            callback(i, q, audits[-1])
    traj = Trajectory(partition, states, breakdowns, increments, audits, gronwall)
    sample_t = np.linspace(0.0, partition.T, 5)
    gronwall.certify(states, sample_t, M, loads, stray, regularize=reg)
    return traj


@dataclass
class EnergyBalanceReport:
    times: list
    lhs: list
    rhs: list
    lower_rhs: list
    tol: float

    @property
    def gaps(self):
        """Signed ``lhs - rhs`` per step; the upper estimate requires <= 0."""
        return [a - b for a, b in zip(self.lhs, self.rhs)]

    @property
    def lower_gaps(self):
        """``lhs - rhs`` with the integrand at the new state; >= 0 when every step is stable."""
        return [a - b for a, b in zip(self.lhs, self.lower_rhs)]

    @property
    def upper_holds(self):
        return all(g <= self.tol for g in self.gaps)

    @property
    def worst_lower_gap(self):
        return float(max(abs(g) for g in self.lower_gaps))

    def to_dict(self):
        return {"times": self.times, "gaps": self.gaps, "lower_gaps": self.lower_gaps,
                "upper_holds": self.upper_holds, "tol": self.tol}


def energy_balance_report(traj, M, loads=None, stray=None, regularize=True, rtol=1e-6):
    """Two-sided energy balance along a computed trajectory.

    ``lhs_i = E~(t_i, q_i) + Var_D(q; [0, t_i])`` against
    ``E~(0, q_0) + int_0^{t_i} dE~/dt (tau, q(tau))`` where the state is held
    from the left on each interval (``rhs``) or from the right (``lower_rhs``).
    """
    times = list(traj.partition.times)
    E = [b.total for b in traj.breakdowns]
    cum = traj.cumulative_dissipation
    lhs = [E[i] + cum[i] for i in range(len(times))]
    rhs, low = [E[0]], [E[0]]
    for i in range(1, len(times)):
        rhs.append(rhs[-1] + integrate_power(traj.states[i - 1], times[i - 1], times[i], loads))
        low.append(low[-1] + integrate_power(traj.states[i], times[i - 1], times[i], loads))
    tol = rtol * max(1.0, max(abs(e) for e in E))
    return EnergyBalanceReport(times, lhs, rhs, low, tol)
