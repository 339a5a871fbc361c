"""Energy-ledger verification, ensemble statistics and scaling studies.

The per-step inequalities are re-checked from ledger entries alone, in
two forms:

* the sharp form, keeping the pressure work as the signed number it is
  and bounding the stochastic pairing with the explicit Young weights
  (1, 1/4) on the fluid side and (2, 1/8 -> 1/4 + 1/4) on the structure
  side; no unknown constants appear;

* the classical form with the pressure work absorbed into half the
  dissipation through the per-step trace constant, and the stochastic
  bound written as C_G * ||dW||^2 * ||G||_HS^2 with C_G = 2 max(1/delta, 1).

Both must hold at every step of every path up to roundoff.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, PicardDivergence, SolverFailure
from .scheme import PathProblem, Trajectory, run_path


def energy(u_free, v_beam, eta_free, forms) -> float:
    """Kinetic + elastic energy of one state against assembled forms:
    1/2 ( Int (R+eta*)|u|^2 + ||v||^2 + ||d_z eta||^2 + ||d_zz eta||^2 )."""
    S = forms.S1 + forms.S2
    return 0.5 * float(u_free @ (forms.M_eta @ u_free)) \
        + 0.5 * float(v_beam @ (forms.M_s @ v_beam)) \
        + 0.5 * float(eta_free @ (S @ eta_free))


# ----------------------------------------------------------------------
# inequality checks (all return signed violations; <= 0 means satisfied)


def _scale(led) -> np.ndarray:
    return np.maximum.reduce([led.E[:-1], led.E[1:], led.E_half, np.ones_like(led.D)])


def structure_identity_residuals(traj: Trajectory) -> np.ndarray:
    """|E^{n+1/2} + C1 - E^n| / scale; exact algebra up to roundoff."""
    led = traj.ledger
    res = led.E_half + led.C1 - led.E[: traj.n_steps]
    return np.abs(res) / _scale(led)


def fluid_inequality_sharp(traj: Trajectory) -> np.ndarray:
    """Signed, scale-normalized violation of the pre-absorption estimate

    E^{n+1} + D + C2 <= E^{n+1/2} + dt*PW + S_bound + |(G dW, U^n)|
                         + 1/4 ||v^{n+1/2} - v^n||^2.
    """
    led = traj.ledger
    lhs = led.E[1:] + led.D + led.C2
    rhs = (led.E_half + traj.dt * led.pressure_work + led.S_bound
           + np.abs(led.stoch_work) + 0.25 * led.vhalf_gap_sq)
    return (lhs - rhs) / _scale(led)


def fluid_inequality_classical(traj: Trajectory, delta: float) -> np.ndarray:
    """Signed violation of the estimate in its classical shape,

    E^{n+1} + D/2 + C2 <= E^{n+1/2} + C_P dt (P_in^2 + P_out^2)
        + C_G ||dW||^2 ||G||_HS^2 + |(G dW, U^n)| + 1/4 ||v^{n+1/2}-v^n||^2,

    with C_P = trace_const/2 (per step) and C_G = 2 max(1/delta, 1).
    Absorbing the inlet/outlet trace costs half the dissipation; that is
    the sharpest constant the Cauchy-Schwarz/Young chain provides.
    """
    led = traj.ledger
    c_g = 2.0 * max(1.0 / delta, 1.0)
    lhs = led.E[1:] + 0.5 * led.D + led.C2
    rhs = (led.E_half
           + 0.5 * led.trace_const * traj.dt * (led.P_in**2 + led.P_out**2)
           + c_g * led.incr_norm**2 * led.g_hs_sq
           + np.abs(led.stoch_work) + 0.25 * led.vhalf_gap_sq)
    return (lhs - rhs) / _scale(led)


def combined_step_violations(traj: Trajectory, delta: float, sharp: bool = True) -> np.ndarray:
    """One-step inequality with both substeps folded together,
    E^{n+1} + D' + C1 + C2 <= E^n + (pressure) + (noise) + |(G dW, U^n)| + 1/4 gap."""
    led = traj.ledger
    if sharp:
        lhs = led.E[1:] + led.D + led.C1 + led.C2
        rhs = (led.E[: traj.n_steps] + traj.dt * led.pressure_work + led.S_bound
               + np.abs(led.stoch_work) + 0.25 * led.vhalf_gap_sq)
    else:
        c_g = 2.0 * max(1.0 / delta, 1.0)
        lhs = led.E[1:] + 0.5 * led.D + led.C1 + led.C2
        rhs = (led.E[: traj.n_steps]
               + 0.5 * led.trace_const * traj.dt * (led.P_in**2 + led.P_out**2)
               + c_g * led.incr_norm**2 * led.g_hs_sq
               + np.abs(led.stoch_work) + 0.25 * led.vhalf_gap_sq)
    return (lhs - rhs) / _scale(led)


def summed_inequality_violations(traj: Trajectory, delta: float, sharp: bool = True) -> np.ndarray:
    """Violations of the summed pathwise estimate for every horizon m <= N:
    E^m + sum(D' + C1 + C2) <= E^0 + sum(rhs terms)."""
    led = traj.ledger
    if sharp:
        diss = led.D + led.C1 + led.C2
        gain = (traj.dt * led.pressure_work + led.S_bound
                + np.abs(led.stoch_work) + 0.25 * led.vhalf_gap_sq)
    else:
        c_g = 2.0 * max(1.0 / delta, 1.0)
        diss = 0.5 * led.D + led.C1 + led.C2
        gain = (0.5 * led.trace_const * traj.dt * (led.P_in**2 + led.P_out**2)
                + c_g * led.incr_norm**2 * led.g_hs_sq
                + np.abs(led.stoch_work) + 0.25 * led.vhalf_gap_sq)
    lhs = led.E[1:] + np.cumsum(diss)
    rhs = led.E[0] + np.cumsum(gain)
    scale = np.maximum(np.maximum(np.maximum.accumulate(led.E[1:]), led.E[0]), 1.0)
    return (lhs - rhs) / scale


def ledger_positivity_min(traj: Trajectory) -> float:
    led = traj.ledger
    return float(min(led.E.min(), led.E_half.min(), led.D.min(),
                     led.C1.min(), led.C2.min()))


# ----------------------------------------------------------------------
# time-shift norms (tightness diagnostic)


def time_shift_norm(dt: float, values: np.ndarray, gram, h: float, T: float | None = None) -> float:
    """Exact Int_h^T || X(t-h) - X(t) ||^2 dt for a piecewise-constant X.

    ``values`` holds X's value on each subinterval [n dt, (n+1) dt);
    ``gram`` is the spatial Gram matrix of the norm.  The integrand is
    piecewise constant between the merged breakpoints {n dt} u {n dt + h},
    so the integral is a finite sum of overlap lengths times squared
    differences; no quadrature error.
    """
    n = values.shape[0]
    if T is None:
        T = n * dt
    if not 0 < h < T:
        raise ConfigError(f"time shift h must lie in (0, T), got {h}")
    breaks = np.concatenate([np.arange(n + 1) * dt, np.arange(n + 1) * dt + h])
    breaks = np.unique(np.clip(breaks, h, T))
    total = 0.0
    for a, b in zip(breaks[:-1], breaks[1:]):
        if b - a <= 0:
            continue
        tm = 0.5 * (a + b)
        i1 = min(int(tm / dt), n - 1)
        i0 = min(int((tm - h) / dt), n - 1)
        if i0 == i1:
            continue
        d = values[i1] - values[i0]
        total += (b - a) * float(d @ (gram @ d))
    return total


def tightness_diagnostic(traj: Trajectory, gram_u, gram_v, k_max: int = 8) -> dict:
    """sup over the dyadic grid h = 2^-k T of h^(-1/32) * (shift integral of
    the shifted fluid and wall velocities).  Reported, not thresholded:
    the exponent is a proof artifact and only boundedness is meaningful.
    """
    T = traj.n_steps * traj.dt
    out = {"h": [], "integral": [], "scaled": []}
    for k in range(1, k_max + 1):
        h = T * 0.5**k
        if h <= 0 or h >= T:
            continue
        iu = time_shift_norm(traj.dt, traj.u[1:], gram_u, h, T)
        iv = time_shift_norm(traj.dt, traj.v[1:], gram_v, h, T)
        out["h"].append(h)
        out["integral"].append(iu + iv)
        out["scaled"].append((iu + iv) * h ** (-1.0 / 32.0))
    out["sup_scaled"] = max(out["scaled"]) if out["scaled"] else 0.0
    return out


# ----------------------------------------------------------------------
# stochastic discretization error


def stochastic_error(traj: Trajectory, refinement: int) -> float:
    """Estimate of Int_0^T || E_N(t) ||^2 dt, the defect between the
    increment-based forcing and the true stochastic integral with the
    coefficient frozen at each level.

    Within step m the defect is G(U^m, eta*^m) applied to
    (t - t^m)/dt * dW_m - (W(t) - W(t^m)); the path is refined in place
    by Brownian bridges keyed by the same seed, so this is an honest
    sub-sampling of the very realization the scheme consumed.
    """
    if refinement < 2:
        raise ConfigError(f"refinement: must be >= 2, got {refinement}")
    spec = traj.noise.spec
    if spec.K == 0:
        return 0.0
    dt = traj.dt
    total = 0.0
    jfrac = np.arange(refinement + 1) / refinement
    for m in range(traj.n_steps):
        sub = traj.noise.refine(m, refinement)
        beta = np.concatenate([[0.0], np.cumsum(sub @ spec.amplitude)])
        defect = jfrac * traj.ledger.xi[m] - beta
        integral = float(np.trapezoid(defect**2, dx=dt / refinement))
        total += traj.ledger.g_state_sq[m] * integral
    return total


# ----------------------------------------------------------------------
# ensembles


class Welford:
    """Streaming mean/variance accumulation in fixed visit order."""

    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self.m2 = 0.0

    def add(self, x: float):
        self.n += 1
        d = x - self.mean
        self.mean += d / self.n
        self.m2 += d * (x - self.mean)

    @property
    def var(self) -> float:
        return self.m2 / (self.n - 1) if self.n > 1 else 0.0

    @property
    def ci95(self) -> float:
        return 1.96 * np.sqrt(self.var / self.n) if self.n else 0.0

    def summary(self) -> dict:
        return {"mean": self.mean, "var": self.var, "ci95": self.ci95, "n": self.n}


_STAT_NAMES = ("max_E", "sum_D", "sum_C1", "sum_C2", "div_sq_int")


def path_statistics(traj: Trajectory) -> dict:
    led = traj.ledger
    return {
        "max_E": float(led.E[1:].max()) if traj.n_steps else float(led.E[0]),
        "sum_D": float(led.D.sum()),
        "sum_C1": float(led.C1.sum()),
        "sum_C2": float(led.C2.sum()),
        "div_sq_int": float(traj.dt * np.sum(led.div_residual**2)),
        "stopped": bool(traj.stopped),
        "tau_time": float(traj.tau_time),
        "tau_idx": int(traj.tau_idx),
    }


@dataclass
class EnsembleReport:
    M: int
    stats: dict
    frac_stopped: float
    mean_tau: float
    failures: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "M": self.M,
            "stats": self.stats,
            "frac_stopped": self.frac_stopped,
            "mean_tau": self.mean_tau,
            "failures": self.failures,
        }


def _run_one(args):
    problem, idx = args
    try:
        traj = run_path(problem, idx)
        return idx, path_statistics(traj), None
    except (PicardDivergence, SolverFailure) as exc:
        return idx, None, f"{type(exc).__name__}: {exc}"


def ensemble_run(problem: PathProblem, M: int, keep: str = "none"):
    """Run M seeded paths and aggregate ledger statistics in path order.

    Per-path failures are recorded, never fatal.  With keep="trajectory"
    the full trajectories come back too (single-process only); the
    STOCHFSI_THREADS environment variable caps the worker count and can
    only change speed, not results, because paths are keyed by index.
    """
    if M < 1:
        raise ConfigError(f"run.M: must be >= 1, got {M}")
    workers = int(os.environ.get("STOCHFSI_THREADS", "1") or "1")
    results = []
    trajectories = []
    if workers > 1 and keep == "none":
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_one, [(problem, i) for i in range(M)]))
    else:
        for i in range(M):
            if keep != "none":
                try:
                    traj = run_path(problem, i)
                    trajectories.append(traj)
                    results.append((i, path_statistics(traj), None))
                except (PicardDivergence, SolverFailure) as exc:
                    trajectories.append(None)
                    results.append((i, None, f"{type(exc).__name__}: {exc}"))
            else:
                results.append(_run_one((problem, i)))
    results.sort(key=lambda r: r[0])

    acc = {name: Welford() for name in _STAT_NAMES}
    stopped = Welford()
    tau = Welford()
    failures = []
    for idx, stats, err in results:
        if err is not None:
            failures.append({"path": idx, "error": err})
            continue
        for name in _STAT_NAMES:
            acc[name].add(stats[name])
        stopped.add(1.0 if stats["stopped"] else 0.0)
        tau.add(stats["tau_time"])
    report = EnsembleReport(
        M=M,
        stats={name: acc[name].summary() for name in _STAT_NAMES},
        frac_stopped=stopped.mean if stopped.n else 0.0,
        mean_tau=tau.mean if tau.n else 0.0,
        failures=failures,
    )
    if keep != "none":
        return report, trajectories
    return report


# ----------------------------------------------------------------------
# sweeps


@dataclass
class SweepResult:
    axis: str
    values: list
    rows: list
    slope: float | None

    def monitored(self) -> list:
        key = "div_l2t" if self.axis == "epsilon" else "max_E_mean"
        return [row[key] for row in self.rows]


def sweep(config, axis: str, values, M: int | None = None) -> SweepResult:
    """Re-run the ensemble for each value of N or epsilon with common
    per-path seeds, and fit the log-log slope of the monitored statistic.

    For the epsilon axis the monitored statistic is the ensemble mean of
    ||div^{eta*} u||_{L^2(0,T;L^2)} (target slope 1/2); for the N axis it
    is the estimated E[max_n E^n] (target: flat).
    """
    from . import cli as _cli

    if axis not in ("N", "epsilon"):
        raise ConfigError(f"sweep.axis: must be 'N' or 'epsilon', got {axis!r}")
    values = list(values)
    if len(values) < 1:
        raise ConfigError("sweep.values: need at least one value")
    if sorted(values) != values and sorted(values, reverse=True) != values:
        raise ConfigError("sweep.values: must be sorted")

    rows = []
    for val in values:
        cfg = _cli.with_axis_value(config, axis, val)
        problem = _cli.build_problem(cfg)
        report = ensemble_run(problem, M or cfg.run["M"])
        div_mean_sq = report.stats["div_sq_int"]["mean"]
        rows.append({
            "value": val,
            "div_l2t": float(np.sqrt(max(div_mean_sq, 0.0))),
            "max_E_mean": report.stats["max_E"]["mean"],
            "sum_D_mean": report.stats["sum_D"]["mean"],
            "frac_stopped": report.frac_stopped,
        })

    slope = None
    if len(values) >= 2:
        x = np.log(np.asarray(values, dtype=float))
        key = "div_l2t" if axis == "epsilon" else "max_E_mean"
        y = np.asarray([row[key] for row in rows], dtype=float)
        if np.all(y > 0):
            slope = float(np.polyfit(x, np.log(y), 1)[0])
    return SweepResult(axis=axis, values=values, rows=rows, slope=slope)
