"""Sweep drivers, manufactured-solution verification and the closure audit.

Sweeps mirror the three-level construction: mode count up, then the
artificial viscosity down, then the artificial pressure down.  Reports are
pure functions of their plan; wall-clock metadata lives on the report
object only, never in emitted files.
"""

from __future__ import annotations

import concurrent.futures
import time
from dataclasses import dataclass, replace
import enum

import numpy as np

from . import closure as cl
from . import diagnostics as dg
from . import grid as gr
from . import solver as sv
from .errors import DomainError


class SweepAxis(enum.Enum):
    MODES = "modes"
    EPSILON = "epsilon"
    DELTA = "delta"


@dataclass(frozen=True)
class SweepPlan:
    base: sv.SimConfig
    axis: SweepAxis
    values: tuple
    initial: sv.InitialData
    snapshots: int = 32

    def __post_init__(self):
        if len(self.values) < 3:
            raise DomainError("a sweep needs at least 3 parameter values")
        diffs = np.diff(np.asarray(self.values, dtype=float))
        if self.axis is SweepAxis.MODES:
            if not np.all(diffs > 0):
                raise DomainError("mode sweeps must be strictly increasing")
        elif not np.all(diffs < 0):
            raise DomainError(f"{self.axis.value} sweeps must be strictly decreasing")

    def member_config(self, value) -> sv.SimConfig:
        if self.axis is SweepAxis.MODES:
            return replace(self.base, modes=int(value))
        if self.axis is SweepAxis.EPSILON:
            return replace(self.base, epsilon=float(value))
        return replace(self.base, reg=replace(self.base.reg, delta=float(value)))

    def member_initial(self, value) -> sv.InitialData:
        if self.axis is SweepAxis.DELTA:
            return sv.mollify_initial_data(
                self.initial,
                float(value),
                B=self.base.reg.B,
                c0=self.base.closure.c0,
            )
        return self.initial


@dataclass
class SweepReport:
    axis: SweepAxis
    values: tuple
    final_ledgers: list
    member_ledgers: list
    defects: dg.DefectReport | None
    invariants: list          # per member: dict name -> (value, passed)
    all_pass: bool
    wall_clock: float
    failure: str | None = None


def invariant_suite(traj: sv.Trajectory, config: sv.SimConfig) -> dict:
    """The per-run checks every sweep member must satisfy."""
    led = traj.ledgers
    out = {}
    m0_r, m0_n = led[0].mass_rho, led[0].mass_n
    drift_r = abs(led[-1].mass_rho - m0_r - traj.injected_mass_rho) / max(m0_r, 1e-30)
    drift_n = abs(led[-1].mass_n - m0_n - traj.injected_mass_n) / max(m0_n, 1e-30)
    out["mass_rho"] = (drift_r, drift_r <= 1e-10)
    out["mass_n"] = (drift_n, drift_n <= 1e-10)

    ratio_min = min(l.ratio_min for l in led)
    out["ratio"] = (ratio_min, ratio_min >= -1e-10)

    density_min = min(
        min(float(np.min(st.rho.values)), float(np.min(st.n.values)))
        for st in traj.states
    )
    out["positivity"] = (density_min, density_min >= -1e-12)

    div_max = max(l.divH_max for l in led)
    out["divH"] = (div_max, div_max <= 1e-10)

    if config.epsilon == 0.0:
        overshoot = dg.energy_inequality_overshoot(traj, config)
        scale = led[0].total_energy() + sum(l.dissipation_rate for l in led) * config.dt
        allowance = 1e-9 * (1.0 + scale) + config.dt * (1.0 + scale)
        out["energy_inequality"] = (overshoot, overshoot <= allowance)
    else:
        rep = dg.epsilon_energy_report(traj, config)
        out["energy_growth_constant"] = (rep.empirical_growth_constant, True)
    return out


def run_sweep(plan: SweepPlan, *, workers: int = 1) -> SweepReport:
    """Run every member and assemble defects against the finest member."""
    start = time.perf_counter()
    configs = [plan.member_config(v) for v in plan.values]
    initials = [plan.member_initial(v) for v in plan.values]

    def run_member(idx):
        return sv.run_simulation(
            configs[idx], initials[idx], snapshots=plan.snapshots
        )

    trajectories: list = [None] * len(plan.values)
    failure = None
    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(run_member, i): i for i in range(len(plan.values))}
            for fut in concurrent.futures.as_completed(futures):
                i = futures[fut]
                try:
                    trajectories[i] = fut.result()
                except Exception as exc:  # abort with partial report
                    failure = f"member {i} (value {plan.values[i]}): {exc}"
    else:
        for i in range(len(plan.values)):
            try:
                trajectories[i] = run_member(i)
            except Exception as exc:
                failure = f"member {i} (value {plan.values[i]}): {exc}"
                break

    done = [t for t in trajectories if t is not None]
    defects = None
    invariants = []
    all_pass = failure is None
    if failure is None:
        reference = len(trajectories) - 1
        defects = dg.defect_report(trajectories, reference, configs[reference])
        for traj, cfg in zip(trajectories, configs):
            checks = invariant_suite(traj, cfg)
            invariants.append(checks)
            all_pass = all_pass and all(ok for _, ok in checks.values())
    return SweepReport(
        axis=plan.axis,
        values=plan.values,
        final_ledgers=[t.ledgers[-1] for t in done],
        member_ledgers=[t.ledgers for t in done],
        defects=defects,
        invariants=invariants,
        all_pass=all_pass,
        wall_clock=time.perf_counter() - start,
        failure=failure,
    )


# ---------------------------------------------------------------------------
# manufactured-solution verification


@dataclass(frozen=True)
class ConvergenceTable:
    case: str
    labels: tuple          # grid cells or dt per level
    errors: tuple
    orders: tuple

    def min_order(self) -> float:
        return float(min(self.orders))


MANUFACTURED_CASES = ("diffusion", "coupled1d", "dt")


def _weighted_l2(grid, values):
    return float(np.sqrt(np.sum(grid.weight_array() * values**2)))


def _diffusion_case(config: sv.SimConfig) -> ConvergenceTable:
    """Pure diffusion: velocity frozen at zero, analytic cosine decay."""
    eps = config.epsilon if config.epsilon > 0.0 else 0.05
    t_end = 0.1
    errors = []
    cells_list = (32, 64, 128)
    for cells in cells_list:
        g = gr.make_grid(1, 1.0, cells)
        x = g.axis(0)
        dt = g.spacing[0] ** 2
        steps = int(round(t_end / dt))
        cfg = replace(config, grid=g, epsilon=eps, dt=dt, t_end=t_end, modes=4)
        prof = 1.0 + 0.5 * np.cos(np.pi * x)
        data = sv.InitialData(
            rho0=gr.ScalarField(g, prof, gr.NEUMANN),
            n0=gr.ScalarField(g, prof.copy(), gr.NEUMANN),
            u0=gr.VectorField(g, np.zeros((1, g.shape[0])), gr.DIRICHLET),
            magnetic0=gr.ScalarField(g, np.zeros(g.shape), gr.DIRICHLET),
        )
        state = sv.make_state(cfg, data)
        for _ in range(steps):
            state.rho, state.n = sv.step_continuity(state, dt, eps)
        exact = 1.0 + 0.5 * np.cos(np.pi * x) * np.exp(-eps * np.pi**2 * (steps * dt))
        errors.append(_weighted_l2(g, state.rho.values - exact))
    orders = tuple(
        float(np.log2(errors[i] / errors[i + 1])) for i in range(len(errors) - 1)
    )
    return ConvergenceTable("diffusion", cells_list, tuple(errors), orders)


def _coupled_exact(config):
    """Closed-form fields and sources for the forced coupled 1D system."""
    mu, lam, nu = config.mu, config.lam, config.nu
    n_ratio = 0.8

    def R(t):
        return 1.0 + 0.1 * np.sin(2.0 * t)

    def Rdot(t):
        return 0.2 * np.cos(2.0 * t)

    def u_exact(t, x):
        return 0.15 * np.sin(np.pi * x) * np.sin(t)

    def h_exact(t, x):
        return 0.1 * np.sin(np.pi * x) * np.cos(t)

    def f_rho(t, coords):
        x = coords[0]
        return Rdot(t) + R(t) * 0.15 * np.pi * np.cos(np.pi * x) * np.sin(t)

    def f_n(t, coords):
        return n_ratio * f_rho(t, coords)

    def f_h(t, coords):
        x = coords[0]
        dt_h = -0.1 * np.sin(np.pi * x) * np.sin(t)
        adv = 0.015 * np.sin(t) * np.cos(t) * np.pi * np.sin(2.0 * np.pi * x)
        diff = -nu * np.pi**2 * h_exact(t, x)
        return dt_h + adv - diff

    def f_u(t, coords):
        x = coords[0]
        sigma = (1.0 + n_ratio) * R(t)
        sigma_dot = (1.0 + n_ratio) * Rdot(t)
        u = u_exact(t, x)
        du_dt = 0.15 * np.sin(np.pi * x) * np.cos(t)
        conv = sigma * 0.0225 * np.pi * np.sin(2.0 * np.pi * x) * np.sin(t) ** 2
        visc = -(2.0 * mu + lam) * np.pi**2 * u
        lorentz_flux = 0.5 * 0.01 * np.cos(t) ** 2 * np.pi * np.sin(2.0 * np.pi * x)
        return (sigma_dot * u + sigma * du_dt + conv - visc + lorentz_flux)[None, :]

    return R, n_ratio, u_exact, h_exact, sv.Forcing(
        rho=f_rho, n=f_n, velocity=f_u, magnetic=f_h
    )


def _coupled_case(config: sv.SimConfig) -> ConvergenceTable:
    R, n_ratio, u_exact, h_exact, forcing = _coupled_exact(config)
    t_end = 0.1
    errors = []
    cells_list = (32, 64, 128)
    for cells in cells_list:
        g = gr.make_grid(1, 1.0, cells)
        x = g.axis(0)
        dt = 0.5 * g.spacing[0] ** 2
        steps = int(round(t_end / dt))
        cfg = replace(
            config, grid=g, dt=dt, t_end=t_end, modes=8, forcing=forcing
        )
        data = sv.InitialData(
            rho0=gr.ScalarField(g, np.full(g.shape, R(0.0)), gr.NEUMANN),
            n0=gr.ScalarField(g, np.full(g.shape, n_ratio * R(0.0)), gr.NEUMANN),
            u0=gr.VectorField(g, u_exact(0.0, x)[None, :], gr.DIRICHLET),
            magnetic0=gr.ScalarField(g, h_exact(0.0, x), gr.DIRICHLET),
        )
        state = sv.make_state(cfg, data)
        for _ in range(steps):
            state = sv.step(state, dt, cfg)
        t = steps * dt
        err = (
            _weighted_l2(g, state.rho.values - R(t))
            + _weighted_l2(g, state.velocity_values()[0] - u_exact(t, x))
            + _weighted_l2(g, state.magnetic.values - h_exact(t, x))
        )
        errors.append(err)
    orders = tuple(
        float(np.log2(errors[i] / errors[i + 1])) for i in range(len(errors) - 1)
    )
    return ConvergenceTable("coupled1d", cells_list, tuple(errors), orders)


def _dt_case(config: sv.SimConfig) -> ConvergenceTable:
    """Temporal self-convergence on a fixed fine grid."""
    g = gr.make_grid(1, 1.0, 64)
    x = g.axis(0)
    prof = 1.0 + 0.2 * np.cos(np.pi * x)
    data = sv.InitialData(
        rho0=gr.ScalarField(g, prof, gr.NEUMANN),
        n0=gr.ScalarField(g, prof.copy(), gr.NEUMANN),
        u0=gr.VectorField(g, (0.15 * np.sin(np.pi * x))[None, :], gr.DIRICHLET),
        magnetic0=gr.ScalarField(g, 0.1 * np.sin(np.pi * x), gr.DIRICHLET),
    )
    t_end = 0.04
    dts = (4e-3, 2e-3, 1e-3, 5e-4)
    finals = []
    for dt in dts:
        cfg = replace(config, grid=g, dt=dt, t_end=t_end, modes=8, epsilon=1e-2)
        traj = sv.run_simulation(cfg, data, snapshots=2)
        st = traj.final_state()
        finals.append(
            np.concatenate(
                [st.rho.values, st.n.values, st.velocity_values()[0], st.magnetic.values]
            )
        )
    diffs = [
        float(np.max(np.abs(finals[i] - finals[i + 1]))) for i in range(len(dts) - 1)
    ]
    orders = tuple(
        float(np.log2(diffs[i] / diffs[i + 1])) for i in range(len(diffs) - 1)
    )
    return ConvergenceTable("dt", dts[:-1], tuple(diffs), orders)


def verify_manufactured(config: sv.SimConfig, case: str) -> ConvergenceTable:
    if case == "diffusion":
        return _diffusion_case(config)
    if case == "coupled1d":
        return _coupled_case(config)
    if case == "dt":
        return _dt_case(config)
    raise DomainError(f"unknown manufactured case {case!r}; know {MANUFACTURED_CASES}")


# ---------------------------------------------------------------------------
# closure audit


@dataclass(frozen=True)
class AuditPlan:
    samples: int = 10_000
    seed: int = 20240801
    value_max: float = 10.0
    fd_samples: int = 1_500
    exponent_pairs: tuple = ((2.0, 2.0), (3.0, 1.5), (1.8, 1.8), (1.0, 1.8))
    monotone_slopes: int = 20
    monotone_grid: int = 500


@dataclass(frozen=True)
class AuditRow:
    gamma_plus: float
    gamma_minus: float
    worst_slack: dict      # inequality name -> signed slack (>= 0 is good)
    fd_rel_max: float      # worst relative gap analytic vs central differences
    euler_ratio_max: float # worst residual / (1 + P)
    monotone_witness: float

    def passed(self) -> bool:
        return (
            all(v >= -1e-10 for v in self.worst_slack.values())
            and self.fd_rel_max <= 1e-6
            and self.euler_ratio_max <= 1e-5
            and self.monotone_witness >= -1e-10
        )


@dataclass(frozen=True)
class AuditReport:
    rows: tuple
    runtime_s: float

    def passed(self) -> bool:
        return all(r.passed() for r in self.rows)


def _split_coefficient(p: float, q_lo: float, q_hi: float) -> float:
    """Constant c with x**p <= c*(rho**p + n**(p/g)) along the closure bracket."""
    if p >= 0.0:
        split = 1.0 if p <= 1.0 else 2.0 ** (p - 1.0)
        return q_hi**p * split
    return q_lo**p


def derivative_bound_constants(params: cl.ClosureParams) -> dict:
    """Explicit constants realizing the one-sided derivative bounds.

    Each constant is produced by the same bracket-and-split chain that
    establishes the bounds, so the audited inequalities are genuinely
    checkable rather than asserted with an abstract constant.
    """
    gp, gm = params.gamma_plus, params.gamma_minus
    g = params.exponent_ratio
    q_lo, q_hi = params.q_lo, params.q_hi
    c_rn2 = abs(g - 1.0) * (g + 2.0) / min(1.0, g) ** 3
    return {
        "drho_plus_dn": (params.q1_hi / g) * _split_coefficient(1.0 - g, q_lo, q_hi),
        "dP_drho": gp * q_hi * _split_coefficient(gp - 1.0, q_lo, q_hi),
        "dP_dn": gm * params.q1_hi * _split_coefficient(gp - g, q_lo, q_hi),
        "d2P_dn2": (gp * (gp - 1.0) * q_hi**2 + gp * c_rn2)
        * _split_coefficient(gp - 2.0 * g, q_lo, q_hi),
    }


def _audit_pair(gp, gm, base: cl.ClosureParams, plan: AuditPlan) -> AuditRow:
    params = cl.ClosureParams(gp, gm, law=cl.PressureLaw.IMPLICIT, c0=base.c0)
    g = params.exponent_ratio
    rng = np.random.default_rng(plan.seed)
    # audit domain: the ratio cone intersected with (0, value_max]^2
    n = rng.uniform(1e-6, plan.value_max, plan.samples)
    ratio = rng.uniform(1.0 / params.c0, params.c0, plan.samples)
    rho = np.minimum(ratio * n, plan.value_max)

    x = np.asarray(cl.solve_rho_plus(rho, n, params))
    base_sum = rho + n ** (1.0 / g)
    press = np.asarray(cl.pressure(rho, n, params))
    dxdr, dxdn, dpdr, dpdn, d2pdn2 = (
        np.asarray(v) for v in cl.pressure_partials(rho, n, params)
    )
    consts = derivative_bound_constants(params)
    ref = rho**gp + n**gm

    slack = {
        "bracket_lower": float(np.min(x - np.maximum(rho, params.q_lo * base_sum))),
        "bracket_upper": float(np.min(params.q_hi * base_sum - x)),
        "slope_lower": float(np.min(dxdr - params.q_lo)),
        "slope_upper": float(np.min(params.q_hi - dxdr)),
        "pressure_lower": float(np.min(press - params.pressure_lo * ref)),
        "pressure_upper": float(np.min(params.pressure_hi * ref - press)),
        "drho_plus_dn_nonneg": float(np.min(dxdn)),
        "drho_plus_dn_upper": float(
            np.min(
                consts["drho_plus_dn"] * (rho ** (1.0 - g) + n ** (1.0 / g - 1.0))
                - dxdn
            )
        ),
        "dP_drho_nonneg": float(np.min(dpdr)),
        "dP_drho_upper": float(
            np.min(
                consts["dP_drho"] * (rho ** (gp - 1.0) + n ** (gm - gm / gp)) - dpdr
            )
        ),
        "dP_dn_nonneg": float(np.min(dpdn)),
        "dP_dn_upper": float(
            np.min(consts["dP_dn"] * (rho ** (gp - g) + n ** (gm - 1.0)) - dpdn)
        ),
        "d2P_dn2_bound": float(
            np.min(
                consts["d2P_dn2"] * (rho ** (gp - 2.0 * g) + n ** (gm - 2.0))
                - np.abs(d2pdn2)
            )
        ),
    }

    sub = slice(0, plan.fd_samples)
    h_r = 1e-5 * (1.0 + rho[sub])
    h_n = 1e-5 * (1.0 + n[sub])

    def rel_gap(analytic, fn, h):
        # central difference, Richardson-refined once
        coarse = (np.asarray(fn(h)) - np.asarray(fn(-h))) / (2.0 * h)
        half = 0.5 * h
        fine = (np.asarray(fn(half)) - np.asarray(fn(-half))) / (2.0 * half)
        fd = (4.0 * fine - coarse) / 3.0
        return np.max(np.abs(analytic - fd) / (np.abs(analytic) + 1e-12))

    fd_rel = max(
        rel_gap(dxdr[sub], lambda d: cl.solve_rho_plus(rho[sub] + d, n[sub], params), h_r),
        rel_gap(dxdn[sub], lambda d: cl.solve_rho_plus(rho[sub], n[sub] + d, params), h_n),
        rel_gap(dpdr[sub], lambda d: cl.pressure(rho[sub] + d, n[sub], params), h_r),
        rel_gap(dpdn[sub], lambda d: cl.pressure(rho[sub], n[sub] + d, params), h_n),
    )

    euler = np.asarray(cl.euler_identity_residual(rho[sub], n[sub], params))
    euler_ratio = float(np.max(euler / (1.0 + press[sub])))

    witness = np.inf
    grid_n = np.linspace(0.0, 5.0, plan.monotone_grid)
    for s in np.linspace(0.0, params.c0, plan.monotone_slopes):
        _, wit = cl.pi_decomposition(grid_n, s, params)
        witness = min(witness, wit)

    return AuditRow(
        gamma_plus=gp,
        gamma_minus=gm,
        worst_slack=slack,
        fd_rel_max=float(fd_rel),
        euler_ratio_max=euler_ratio,
        monotone_witness=float(witness),
    )


def closure_audit(params: cl.ClosureParams, plan: AuditPlan | None = None) -> AuditReport:
    """Check every audited closure inequality over random samples.

    The exponent pairs of the plan are audited with the law and ratio bound
    of `params`; each row tabulates the worst signed slack per inequality.
    """
    plan = plan or AuditPlan()
    start = time.perf_counter()
    rows = tuple(_audit_pair(gp, gm, params, plan) for gp, gm in plan.exponent_pairs)
    return AuditReport(rows=rows, runtime_s=time.perf_counter() - start)
