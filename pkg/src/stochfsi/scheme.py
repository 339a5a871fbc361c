"""Lie splitting time loop for the penalized, stochastically forced model.

Per step, first the wall is advanced implicitly holding the fluid fixed
(structure substep), then the fluid and the wall velocity are advanced
together on the frozen artificial geometry (fluid substep).  The wall
velocity lives in the clamped Hermite space at every level; its interior
nodal values *are* the fluid's top-row vertical DOFs (kinematic coupling,
exact at the top-boundary nodes) and its nodal slopes are carried as
extra unknowns of the coupled solve.  Keeping one velocity space on both
sides of the splitting is what makes the scheme a consistent first-order
discretization: no step-wise projection between non-nested spaces.

The artificial displacement eta* follows the cutoff rule: a 0/1 flag
theta tracks whether every displacement so far stayed inside the
admissible band  inf(R+eta) > delta,  ||R+eta||_{H^s} < 1/delta;  once
any candidate leaves the band the flag drops for good and eta* freezes
at the last admissible displacement, so every fluid solve sees a
Jacobian bounded below by delta.

The fluid substep's nonlinearity (transport field u - v r e_r) is
resolved by Picard iteration on the frozen transport only.  Because the
assembled advection operator is skew for *any* frozen field, testing the
solved system with its own solution yields the discrete energy balance
exactly at every iterate, converged or not; the ledger records every
quantity appearing in that balance so the inequalities can be re-checked
offline, term by term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import cho_factor, cho_solve

from .discretization import (
    AssembledForms,
    CoupledLayout,
    FluidSpace,
    HsForm,
    StructureSpace,
    assemble_advection,
    assemble_all,
)
from .errors import InitialDataError, PicardDivergence, SolverFailure
from .noise import NoisePath, NoiseSpec, sample_path


@dataclass
class SchemeParams:
    nu: float
    delta: float
    epsilon: float
    s: float
    dt: float
    tol_picard: float = 1e-10
    max_picard: int = 50
    damping: float = 0.5
    damping_after: int = 20
    compute_trace_constant: bool = True


@dataclass
class PicardStats:
    iterations: int
    rel_update: float
    converged: bool


@dataclass
class CutoffState:
    """Running cutoff flag and the frozen artificial displacement.

    theta is non-increasing along a trajectory; once it drops, eta_star
    never changes again and frozen_at records the index of the first
    inadmissible displacement.
    """

    theta: int
    eta_star: np.ndarray
    frozen_at: int | None
    delta: float
    s: float


def update_cutoff(
    state: CutoffState,
    eta_candidate: np.ndarray,
    structure: StructureSpace,
    R: float,
    hs_form: HsForm,
    step: int | None = None,
):
    """Fold one candidate displacement into the cutoff history.

    Returns (new_state, min_gap, hs_value) where min_gap = inf_z (R+eta)
    computed exactly from the piecewise cubic and hs_value is the
    fractional Sobolev norm entering the admissibility band.
    """
    profile = structure.profile(eta_candidate)
    min_gap = R + profile.min_value()
    hs_value = hs_form.norm(eta_candidate, R)
    admissible = 1 if (min_gap > state.delta and hs_value < 1.0 / state.delta) else 0
    theta_new = min(state.theta, admissible)
    if theta_new == 1:
        return (
            CutoffState(1, np.array(eta_candidate, dtype=float, copy=True), None,
                        state.delta, state.s),
            min_gap,
            hs_value,
        )
    frozen_at = state.frozen_at if state.frozen_at is not None else step
    return (
        CutoffState(0, state.eta_star, frozen_at, state.delta, state.s),
        min_gap,
        hs_value,
    )


def structure_step(eta: np.ndarray, v: np.ndarray, dt: float,
                   structure: StructureSpace):
    """Implicit wall update holding the fluid fixed.

    Substituting the displacement update eta_half = eta + dt*v_half into
    the velocity equation gives the SPD system

        (M_s + dt^2 (S1+S2)) v_half = M_s v - dt (S1+S2) eta.
    """
    S = structure.S1 + structure.S2
    A = structure.M + dt * dt * S
    b = structure.M @ v - dt * (S @ eta)
    try:
        v_half = cho_solve(cho_factor(A), b)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - assembly corruption
        raise SolverFailure(f"structure solve failed: {exc}") from exc
    if not np.all(np.isfinite(v_half)):
        raise SolverFailure("structure solve produced non-finite values")
    eta_half = eta + dt * v_half
    return eta_half, v_half


def _pad_fluid(mat: sp.spmatrix, n_x: int) -> sp.csr_matrix:
    out = sp.lil_matrix((n_x, n_x))
    out[: mat.shape[0], : mat.shape[1]] = mat
    return out.tocsr()


def fluid_step(
    fluid: FluidSpace,
    layout: CoupledLayout,
    forms: AssembledForms,
    params: SchemeParams,
    u_n: np.ndarray,
    v_n: np.ndarray,
    v_half: np.ndarray,
    dW: np.ndarray,
    P_in: float,
    P_out: float,
    spec: NoiseSpec,
):
    """Coupled implicit fluid/wall-velocity solve on the frozen geometry.

    Unknown vector x = [fluid free DOFs | interior wall slopes]; the wall
    velocity block is tested with the Hermite functions, so the mass
    coupling is the beam mass embedded at the shared/slope positions.
    Picard freezes the transport field a = u - v r e_r at the previous
    iterate; every other term is implicit.  Initial iterate: u_n with the
    wall-velocity block overwritten by the half-step wall velocity.
    """
    dt = params.dt
    n_free, n_x = fluid.n_free, layout.n_x

    Ms_emb = layout.embed_beam_matrix(forms.M_s)
    A_fluid = (forms.M_eta + 0.5 * forms.M_delta
               + params.nu * dt * forms.K
               + (dt / params.epsilon) * forms.P)
    A0 = (_pad_fluid(A_fluid, n_x) + Ms_emb).tocsr()
    M_norm = (_pad_fluid(forms.M_eta, n_x) + Ms_emb).tocsr()

    xi = float(spec.amplitude @ dW) if spec.K else 0.0
    rhs = np.zeros(n_x)
    rhs[:n_free] = (1.0 + xi) * (forms.M_eta @ u_n) \
        + dt * (P_in * forms.flux_in - P_out * forms.flux_out)
    rhs += layout.embed_beam_vector(forms.M_s @ v_half)
    rhs += xi * layout.embed_beam_vector(forms.M_s @ v_n)

    x = np.zeros(n_x)
    x[:n_free] = u_n
    x[layout.beam_to_x] = v_half

    rel = np.inf
    for it in range(1, params.max_picard + 1):
        B = assemble_advection(fluid, layout, forms, x[:n_free], layout.extract_v(x))
        A = (A0 + dt * _pad_fluid(B, n_x)).tocsc()
        try:
            x_new = spla.splu(A).solve(rhs)
        except RuntimeError as exc:
            raise SolverFailure(f"fluid solve failed: {exc}") from exc
        if not np.all(np.isfinite(x_new)):
            raise SolverFailure("fluid solve produced non-finite values")
        if it > params.damping_after:
            x_new = params.damping * x_new + (1 - params.damping) * x
        d = x_new - x
        num = float(np.sqrt(max(d @ (M_norm @ d), 0.0)))
        den = float(np.sqrt(max(x_new @ (M_norm @ x_new), 0.0)))
        rel = num / max(den, 1e-30)
        x = x_new
        if rel <= params.tol_picard:
            return x[:n_free].copy(), layout.extract_v(x), PicardStats(it, rel, True)
    raise PicardDivergence(
        f"fluid Picard iteration did not converge: rel update {rel:.3e} "
        f"after {params.max_picard} iterations"
    )


def trace_dissipation_constant(forms: AssembledForms, params: SchemeParams) -> float:
    """Largest ratio of (inlet flux)^2 + (outlet flux)^2 to the dissipation
    rate form nu*K + (1/eps)*P over the free fluid space.

    The numerator is rank two, so the maximum is the top eigenvalue of the
    2x2 Gram matrix of the two flux functionals in the dissipation inner
    product - two sparse solves, computed per step because the form moves
    with eta*.  Used to absorb the pressure work into half the dissipation
    with an explicit constant.
    """
    A = (params.nu * forms.K + (1.0 / params.epsilon) * forms.P).tocsc()
    try:
        lu = spla.splu(A)
        x_in = lu.solve(forms.flux_in)
        x_out = lu.solve(forms.flux_out)
    except RuntimeError as exc:
        raise SolverFailure(f"trace-constant solve failed: {exc}") from exc
    a = float(forms.flux_in @ x_in)
    b = float(forms.flux_in @ x_out)
    c = float(forms.flux_out @ x_out)
    return (a + c) / 2 + np.hypot((a - c) / 2, b)


# ----------------------------------------------------------------------
# trajectory containers


@dataclass
class EnergyLedger:
    """Per-step records of every quantity in the discrete energy balance."""

    E: np.ndarray            # (n+1,) energy at integer levels
    E_half: np.ndarray       # (n,)
    D: np.ndarray            # viscous + penalty dissipation
    C1: np.ndarray           # structure-substep numerical dissipation
    C2: np.ndarray           # fluid-substep numerical dissipation
    div_residual: np.ndarray
    theta: np.ndarray        # flag after folding this step's candidate
    min_gap: np.ndarray      # inf_z (R + eta^{n+1})
    hs_norm: np.ndarray      # ||R + eta^{n+1}||_{H^s}
    stoch_work: np.ndarray   # (G dW, U^n)
    incr_norm: np.ndarray    # Cameron-Martin norm of dW
    xi: np.ndarray
    S_bound: np.ndarray      # explicit Young bound on (G dW, U^{n+1}-U^n)
    g_hs_sq: np.ndarray      # ||G(U^n, eta*^n)||_HS^2
    g_state_sq: np.ndarray   # ||(R+eta*) u||^2 + ||v||^2 at level n
    pressure_work: np.ndarray
    P_in: np.ndarray
    P_out: np.ndarray
    vhalf_gap_sq: np.ndarray  # ||v^{n+1/2} - v^n||^2
    trace_const: np.ndarray
    picard_iters: np.ndarray

    @classmethod
    def allocate(cls, N: int) -> "EnergyLedger":
        f = lambda: np.zeros(N)
        return cls(E=np.zeros(N + 1), E_half=f(), D=f(), C1=f(), C2=f(),
                   div_residual=f(), theta=np.ones(N, dtype=int), min_gap=f(),
                   hs_norm=f(), stoch_work=f(), incr_norm=f(), xi=f(),
                   S_bound=f(), g_hs_sq=f(), g_state_sq=f(), pressure_work=f(),
                   P_in=f(), P_out=f(), vhalf_gap_sq=f(), trace_const=f(),
                   picard_iters=np.zeros(N, dtype=int))

    def truncate(self, n: int) -> "EnergyLedger":
        kw = {}
        for name, arr in self.__dict__.items():
            kw[name] = arr[: n + 1] if name == "E" else arr[:n]
        return EnergyLedger(**kw)


class StepFunction:
    """Piecewise-constant-in-time trajectory component.

    value(t) = values[n] on [n dt, (n+1) dt); shifted families pass the
    already-shifted array so indexing stays uniform.
    """

    def __init__(self, dt: float, values: np.ndarray):
        self.dt = dt
        self.values = values

    def index(self, t: float) -> int:
        return int(np.clip(np.floor(t / self.dt), 0, len(self.values) - 1))

    def at(self, t: float) -> np.ndarray:
        return self.values[self.index(t)]


class LinearInterpolant:
    """Piecewise-linear-in-time interpolant through the step knots."""

    def __init__(self, dt: float, knots: np.ndarray):
        self.dt = dt
        self.knots = knots

    def at(self, t: float) -> np.ndarray:
        n = len(self.knots) - 1
        i = int(np.clip(np.floor(t / self.dt), 0, n - 1))
        w = t / self.dt - i
        return (1 - w) * self.knots[i] + w * self.knots[i + 1]

    def slope(self, t: float) -> np.ndarray:
        n = len(self.knots) - 1
        i = int(np.clip(np.floor(t / self.dt), 0, n - 1))
        return (self.knots[i + 1] - self.knots[i]) / self.dt


@dataclass
class Trajectory:
    """One path of the splitting scheme plus its energy ledger.

    Arrays hold n_steps+1 integer levels (index 0 = initial data) and
    n_steps half levels; wall displacement and both velocities are beam
    vectors.  tau_idx is the index of the first inadmissible displacement
    (n_steps if the cutoff never engaged).  The shared-DOF layout makes
    u[n][shared] and the nodal values of v[n] the same numbers by
    construction.
    """

    dt: float
    n_steps: int
    tau_idx: int
    u: np.ndarray
    v: np.ndarray
    eta: np.ndarray
    eta_half: np.ndarray
    v_half: np.ndarray
    eta_star: np.ndarray
    theta: np.ndarray
    ledger: EnergyLedger
    noise: NoisePath

    @property
    def stopped(self) -> bool:
        return self.tau_idx < self.n_steps or self.theta[-1] == 0

    @property
    def tau_time(self) -> float:
        return self.tau_idx * self.dt

    # -- piecewise-constant families ------------------------------------
    def u_const(self):
        return StepFunction(self.dt, self.u[:-1])

    def u_plus(self):
        return StepFunction(self.dt, self.u[1:])

    def v_const(self):
        return StepFunction(self.dt, self.v[:-1])

    def v_plus(self):
        return StepFunction(self.dt, self.v[1:])

    def v_sharp(self):
        """Half-step wall velocities."""
        return StepFunction(self.dt, self.v_half)

    def v_star(self):
        """theta-gated half-step velocity; the a.e. time derivative of the
        linear interpolant of eta*."""
        return StepFunction(self.dt, self.theta[1:, None] * self.v_half)

    def eta_const(self):
        return StepFunction(self.dt, self.eta[:-1])

    def eta_plus(self):
        return StepFunction(self.dt, self.eta[1:])

    def eta_star_const(self):
        return StepFunction(self.dt, self.eta_star[:-1])

    # -- piecewise-linear families ----------------------------------------
    def u_lin(self):
        return LinearInterpolant(self.dt, self.u)

    def v_lin(self):
        return LinearInterpolant(self.dt, self.v)

    def eta_lin(self):
        return LinearInterpolant(self.dt, self.eta)

    def eta_star_lin(self):
        return LinearInterpolant(self.dt, self.eta_star)


@dataclass
class PathProblem:
    """Everything run_path needs, independent of where the config came from."""

    fluid: FluidSpace
    structure: StructureSpace
    layout: CoupledLayout
    params: SchemeParams
    noise: NoiseSpec
    hs_form: HsForm
    N: int
    P_in: np.ndarray   # (N,) step-averaged inlet pressure
    P_out: np.ndarray
    u0: np.ndarray
    v0: np.ndarray     # beam vector
    eta0: np.ndarray   # beam vector
    halt_at_stop: bool = False

    @property
    def R(self) -> float:
        return self.fluid.domain.R


def check_initial_admissibility(problem: PathProblem) -> None:
    """Enforce the admissibility of the initial configuration: the wall
    gap clears delta and both the H^2 and H^s norms sit inside the band."""
    st, R, delta = problem.structure, problem.R, problem.params.delta
    gap0 = R + st.profile(problem.eta0).min_value()
    if not gap0 > delta:
        raise InitialDataError(
            f"initial wall gap min(R+eta0) = {gap0:.6g} must exceed delta = {delta:.6g}"
        )
    h2 = st.h2_norm_of_gap(problem.eta0, R)
    if not h2 < 1.0 / delta:
        raise InitialDataError(
            f"initial ||R+eta0||_H2 = {h2:.6g} must be below 1/delta = {1/delta:.6g}"
        )
    hs0 = problem.hs_form.norm(problem.eta0, R)
    if not hs0 < 1.0 / delta:
        raise InitialDataError(
            f"initial ||R+eta0||_Hs = {hs0:.6g} must be below 1/delta = {1/delta:.6g}"
        )


def run_path(problem: PathProblem, path_index: int = 0) -> Trajectory:
    """Integrate one seeded path of the splitting scheme.

    The loop keeps marching on the frozen artificial geometry after the
    cutoff engages (halt_at_stop truncates instead).  Ledger entries are
    arranged so that the per-step energy balance telescopes exactly: the
    end-of-step energy is evaluated with the same weighted mass matrices
    that entered the fluid solve.
    """
    check_initial_admissibility(problem)
    fl, st, lay = problem.fluid, problem.structure, problem.layout
    prm, R, N = problem.params, problem.R, problem.N
    dt = prm.dt
    S = st.S1 + st.S2

    noise_path = sample_path(problem.noise, N, dt, path_index)

    u = np.zeros((N + 1, fl.n_free))
    v = np.zeros((N + 1, st.n_free))
    eta = np.zeros((N + 1, st.n_free))
    eta_half = np.zeros((N, st.n_free))
    v_half_arr = np.zeros((N, st.n_free))
    eta_star = np.zeros((N + 1, st.n_free))
    theta = np.ones(N + 1, dtype=int)
    u[0], v[0], eta[0] = problem.u0, problem.v0, problem.eta0
    u[0][lay.shared_free] = v[0][0::2]  # kinematic compatibility at the nodes
    eta_star[0] = problem.eta0
    led = EnergyLedger.allocate(N)

    cut = CutoffState(1, problem.eta0.copy(), None, prm.delta, prm.s)
    forms: AssembledForms | None = None
    cache_key = None
    n_done = 0

    for n in range(N):
        eh, vh = structure_step(eta[n], v[n], dt, st)
        eta_half[n], v_half_arr[n] = eh, vh
        eta[n + 1] = eh

        cut, min_gap, hs_value = update_cutoff(cut, eh, st, R, problem.hs_form, step=n + 1)
        theta[n + 1] = cut.theta
        eta_star[n + 1] = cut.eta_star

        key = (eta_star[n].tobytes(), eta_star[n + 1].tobytes())
        if key != cache_key:
            forms = assemble_all(fl, st, lay,
                                 st.profile(eta_star[n]), st.profile(eta_star[n + 1]))
            cache_key = key

        if n == 0:
            led.E[0] = _energy(u[0], v[0], eta[0], forms, S)

        # structure-substep balance pieces (exact polarization identities)
        dv = vh - v[n]
        vhalf_gap = float(dv @ (forms.M_s @ dv))
        C1 = 0.5 * vhalf_gap + 0.5 * float((eh - eta[n]) @ (S @ (eh - eta[n])))
        E_half = 0.5 * float(u[n] @ (forms.M_eta @ u[n])) \
            + 0.5 * float(vh @ (forms.M_s @ vh)) \
            + 0.5 * float(eh @ (S @ eh))

        dW = noise_path.increments[n]
        Pin, Pout = float(problem.P_in[n]), float(problem.P_out[n])
        u_new, v_new, stats = fluid_step(
            fl, lay, forms, prm, u[n], v[n], vh, dW, Pin, Pout, problem.noise
        )
        u[n + 1], v[n + 1] = u_new, v_new

        du = u_new - u[n]
        dvf = v_new - vh
        led.E_half[n] = E_half
        led.C1[n] = C1
        led.vhalf_gap_sq[n] = vhalf_gap
        led.D[n] = dt * (prm.nu * float(u_new @ (forms.K @ u_new))
                         + (1.0 / prm.epsilon) * float(u_new @ (forms.P @ u_new)))
        led.C2[n] = 0.25 * float(du @ (forms.M_eta @ du)) \
            + 0.25 * float(dvf @ (forms.M_s @ dvf))
        led.div_residual[n] = float(np.sqrt(max(u_new @ (forms.P @ u_new), 0.0)))
        led.theta[n] = cut.theta
        led.min_gap[n] = min_gap
        led.hs_norm[n] = hs_value
        xi = float(problem.noise.amplitude @ dW) if problem.noise.K else 0.0
        g_state = float(u[n] @ (forms.M_sq @ u[n]) + v[n] @ (forms.M_s @ v[n]))
        led.xi[n] = xi
        led.g_state_sq[n] = g_state
        led.g_hs_sq[n] = problem.noise.phi_hs_sq * g_state
        led.stoch_work[n] = xi * float(u[n] @ (forms.M_eta @ u[n])
                                       + v[n] @ (forms.M_s @ v[n]))
        led.S_bound[n] = xi * xi * float(u[n] @ (forms.M_eta @ u[n])
                                         + 2.0 * (v[n] @ (forms.M_s @ v[n])))
        led.incr_norm[n] = float(np.sqrt(noise_path.u0_norm_sq(n)))
        led.pressure_work[n] = Pin * float(forms.flux_in @ u_new) \
            - Pout * float(forms.flux_out @ u_new)
        led.P_in[n], led.P_out[n] = Pin, Pout
        led.picard_iters[n] = stats.iterations
        if prm.compute_trace_constant:
            led.trace_const[n] = trace_dissipation_constant(forms, prm)
        else:
            led.trace_const[n] = np.nan

        M_next = forms.M_eta + forms.M_delta
        led.E[n + 1] = 0.5 * float(u_new @ (M_next @ u_new)) \
            + 0.5 * float(v_new @ (forms.M_s @ v_new)) \
            + 0.5 * float(eh @ (S @ eh))

        n_done = n + 1
        if problem.halt_at_stop and cut.theta == 0:
            break

    tau_idx = cut.frozen_at if cut.frozen_at is not None else n_done
    return Trajectory(
        dt=dt,
        n_steps=n_done,
        tau_idx=tau_idx,
        u=u[: n_done + 1],
        v=v[: n_done + 1],
        eta=eta[: n_done + 1],
        eta_half=eta_half[:n_done],
        v_half=v_half_arr[:n_done],
        eta_star=eta_star[: n_done + 1],
        theta=theta[: n_done + 1],
        ledger=led.truncate(n_done),
        noise=noise_path,
    )


def _energy(u, v, eta, forms: AssembledForms, S) -> float:
    return 0.5 * float(u @ (forms.M_eta @ u)) \
        + 0.5 * float(v @ (forms.M_s @ v)) \
        + 0.5 * float(eta @ (S @ eta))
