"""Time integration of the regularized two-fluid MHD system.

One step is a Lie splitting: (1) both continuity equations advance with an
explicit monotone upwind transport plus implicit centered diffusion, the
identical linear update applied to rho and n (this is what preserves the
pointwise ratio cone discretely); (2) the magnetic variable advances with
centered advection plus implicit resistive diffusion (a transverse scalar
in 1D, the z-potential of the field in 2D, which keeps div H = 0 exact);
(3) the Galerkin velocity coefficients advance by solving the weighted
mass-matrix system with explicit convection, pressure and Lorentz terms
and implicit viscosity.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import closure as cl
from . import grid as gr
from .errors import CFLError, DomainError, NumericsError

_TINY = 1e-14
_VACUUM_SHIFT = 1e-14


@dataclass(frozen=True)
class Forcing:
    """Optional manufactured source terms; each maps (t, coords) to values."""

    rho: Optional[Callable] = None
    n: Optional[Callable] = None
    velocity: Optional[Callable] = None   # returns shape (dim, *grid.shape)
    magnetic: Optional[Callable] = None


@dataclass(frozen=True)
class SimConfig:
    closure: cl.ClosureParams
    reg: cl.RegularizationParams
    grid: gr.Grid
    epsilon: float = 0.0
    mu: float = 1.0
    lam: float = 0.0
    nu: float = 1.0
    modes: int = 16
    dt: float = 1e-3
    t_end: float = 0.1
    sigma_weight: float = 1.0
    forcing: Optional[Forcing] = None

    def __post_init__(self):
        if not self.mu > 0.0:
            raise DomainError(f"viscosity hypothesis mu > 0 violated: mu = {self.mu}")
        if 2.0 * self.mu + 3.0 * self.lam < 0.0:
            raise DomainError(
                "viscosity hypothesis 2*mu + 3*lambda >= 0 violated: "
                f"mu = {self.mu}, lambda = {self.lam}"
            )
        if not self.nu > 0.0:
            raise DomainError(f"resistivity hypothesis nu > 0 violated: nu = {self.nu}")
        if not self.dt > 0.0:
            raise DomainError(f"dt > 0 required, got {self.dt}")
        if self.epsilon < 0.0:
            raise DomainError(f"epsilon >= 0 required, got {self.epsilon}")
        if self.t_end < self.dt:
            raise DomainError("t_end must cover at least one step")
        if self.modes < 1:
            raise DomainError("modes >= 1 required")
        if self.closure.law is cl.PressureLaw.IMPLICIT:
            self.reg.validate_against(self.closure)


@dataclass
class SimState:
    time: float
    rho: gr.ScalarField        # Neumann
    n: gr.ScalarField          # Neumann
    u_coeffs: np.ndarray       # (dim, modes)
    magnetic: gr.ScalarField   # Dirichlet; 1D transverse H, 2D potential A_z
    basis: gr.GalerkinBasis
    vacuum_regularized: bool = False

    def velocity_values(self) -> np.ndarray:
        vals = self.u_coeffs @ self.basis.phi
        return vals.reshape((self.rho.grid.dim, *self.rho.grid.shape))

    def velocity_gradient(self) -> np.ndarray:
        """(comp, deriv, *shape) from the analytic mode gradients."""
        g = self.rho.grid
        out = np.einsum("ak,kdp->adp", self.u_coeffs, self.basis.grad_phi)
        return out.reshape((g.dim, g.dim, *g.shape))

    def magnetic_components(self) -> np.ndarray:
        """(ncomp, *shape); the physical field H."""
        g = self.rho.grid
        if g.dim == 1:
            return self.magnetic.values[None, :]
        return gr.curl(self.magnetic).values

    def curl_magnetic(self) -> np.ndarray:
        """Scalar current density j = (curl H)_z (2D) or dH_y/dx (1D)."""
        g = self.rho.grid
        if g.dim == 1:
            return gr.diff1_values(
                self.magnetic.values, 0, g.spacing[0], gr.DIRICHLET
            )
        return -gr.laplacian(self.magnetic).values

    def div_magnetic_max(self) -> float:
        g = self.rho.grid
        if g.dim == 1:
            return 0.0
        h = gr.VectorField(g, self.magnetic_components(), gr.DIRICHLET)
        return float(np.max(np.abs(gr.divergence(h).values)))

    def copy(self) -> "SimState":
        return SimState(
            time=self.time,
            rho=self.rho.copy(),
            n=self.n.copy(),
            u_coeffs=self.u_coeffs.copy(),
            magnetic=self.magnetic.copy(),
            basis=self.basis,
            vacuum_regularized=self.vacuum_regularized,
        )


@dataclass(frozen=True)
class InitialData:
    rho0: gr.ScalarField
    n0: gr.ScalarField
    u0: gr.VectorField
    magnetic0: gr.ScalarField


def validate_initial_data(data: InitialData, c0: float) -> None:
    r, m = data.rho0.values, data.n0.values
    if np.any(r < 0.0) or np.any(m < 0.0):
        raise DomainError("initial densities must be non-negative")
    if np.any(r > c0 * m + 1e-12) or np.any(m > c0 * r + 1e-12):
        raise DomainError(
            'initial data violates the ratio hypothesis "1/c0 * n0 <= rho0 <= c0 * n0" '
            f"with c0 = {c0}"
        )


def make_state(config: SimConfig, data: InitialData) -> SimState:
    g = config.grid
    for f in (data.rho0, data.n0, data.magnetic0):
        if f.grid != g:
            raise DomainError("initial data grid does not match the configuration")
    basis = gr.make_basis(g, config.modes)
    coeffs = np.stack(
        [basis.project_values(data.u0.values[a]) for a in range(g.dim)]
    )
    return SimState(
        time=0.0,
        rho=data.rho0.copy(),
        n=data.n0.copy(),
        u_coeffs=coeffs,
        magnetic=data.magnetic0.copy(),
        basis=basis,
    )


# ---------------------------------------------------------------------------
# finite-volume transport and cached implicit-diffusion solvers


def _axis_slices(ndim, axis):
    lo = [slice(None)] * ndim
    hi = [slice(None)] * ndim
    lo[axis] = slice(None, -1)
    hi[axis] = slice(1, None)
    return tuple(lo), tuple(hi)


def _face_velocity(u_comp, axis):
    lo, hi = _axis_slices(u_comp.ndim, axis)
    return 0.5 * (u_comp[lo] + u_comp[hi])


def _upwind_flux_div(q, u_vals, grid):
    """Divergence of the upwind flux of q, divided by the nodal volumes."""
    total = np.zeros_like(q)
    for ax in range(grid.dim):
        uf = _face_velocity(u_vals[ax], ax)
        lo, hi = _axis_slices(q.ndim, ax)
        flux = np.maximum(uf, 0.0) * q[lo] + np.minimum(uf, 0.0) * q[hi]
        total += np.diff(flux, axis=ax, prepend=0.0, append=0.0)
    return total / grid.weight_array()


def _centered_flux_div(q, u_vals, grid):
    total = np.zeros_like(q)
    for ax in range(grid.dim):
        uf = _face_velocity(u_vals[ax], ax)
        lo, hi = _axis_slices(q.ndim, ax)
        flux = uf * 0.5 * (q[lo] + q[hi])
        total += np.diff(flux, axis=ax, prepend=0.0, append=0.0)
    return total / grid.weight_array()


def transport_cfl_limit(u_vals, grid) -> float:
    """Largest dt for which the upwind update stays monotone."""
    rate = sum(
        2.0 * float(np.max(np.abs(u_vals[ax]))) / grid.spacing[ax]
        for ax in range(grid.dim)
    )
    return 1.0 / (rate + _TINY)


def induction_dt_limit(u_vals, grid, nu) -> float:
    adv = sum(
        float(np.max(np.abs(u_vals[ax]))) / grid.spacing[ax] for ax in range(grid.dim)
    )
    vsq = sum(float(np.max(np.abs(u_vals[ax]))) ** 2 for ax in range(grid.dim))
    return min(1.0 / (adv + _TINY), 2.0 * nu / (vsq + _TINY))


def _stiffness_1d(n_pts, h):
    d = sp.diags([-np.ones(n_pts - 1), np.ones(n_pts - 1)], [0, 1], (n_pts - 1, n_pts))
    return (d.T @ d) / h


@lru_cache(maxsize=64)
def _diffusion_solver(grid: gr.Grid, dt: float, coef: float, kind: str):
    """Factorized (V/dt + coef * stiffness); 'dirichlet' pins boundary rows."""
    v = grid.weight_array().reshape(-1)
    if grid.dim == 1:
        stiff = _stiffness_1d(grid.n_points[0], grid.spacing[0])
    else:
        nx, ny = grid.n_points
        wx, wy = grid.axis_weights(0), grid.axis_weights(1)
        stiff = sp.kron(_stiffness_1d(nx, grid.spacing[0]), sp.diags(wy)) + sp.kron(
            sp.diags(wx), _stiffness_1d(ny, grid.spacing[1])
        )
    mat = sp.diags(v / dt) + coef * stiff
    if kind == "dirichlet":
        mask = _boundary_mask(grid)
        mat = mat.tolil()
        idx = np.nonzero(mask)[0]
        mat[idx, :] = 0.0
        mat[idx, idx] = 1.0
    return spla.splu(sp.csc_matrix(mat))


@lru_cache(maxsize=16)
def _boundary_mask(grid: gr.Grid) -> np.ndarray:
    mask = np.zeros(grid.shape, dtype=bool)
    for ax in range(grid.dim):
        sl = [slice(None)] * grid.dim
        sl[ax] = 0
        mask[tuple(sl)] = True
        sl[ax] = -1
        mask[tuple(sl)] = True
    return mask.reshape(-1)


def step_continuity(state: SimState, dt: float, epsilon: float, *, sources=None):
    """Advance rho and n by one transport-diffusion step.

    Returns (rho_field, n_field).  The same monotone operator acts on both
    species, so positivity and the c0-ratio cone are preserved under the
    CFL contract; nodal masses are conserved exactly by the flux form.
    """
    g = state.rho.grid
    u = state.velocity_values()
    limit = transport_cfl_limit(u, g)
    if dt > limit:
        raise CFLError(
            f"transport step dt = {dt:g} exceeds the monotone limit {limit:g}",
            suggested_dt=0.9 * limit,
        )
    new = []
    rhs_cols = []
    for which, fld in (("rho", state.rho), ("n", state.n)):
        q = fld.values
        q_star = q - dt * _upwind_flux_div(q, u, g)
        if sources is not None and sources.get(which) is not None:
            q_star = q_star + dt * sources[which]
        rhs_cols.append(q_star.reshape(-1))
    if epsilon > 0.0:
        solver = _diffusion_solver(g, float(dt), float(epsilon), "neumann")
        v = g.weight_array().reshape(-1)
        sol = solver.solve(np.stack(rhs_cols, axis=1) * (v / dt)[:, None])
        rhs_cols = [sol[:, 0], sol[:, 1]]
    for vals in rhs_cols:
        new.append(gr.ScalarField(g, vals.reshape(g.shape), gr.NEUMANN))
    return new[0], new[1]


def step_induction(state: SimState, dt: float, config: SimConfig, *, source=None):
    """Advance the magnetic variable (transverse H in 1D, potential in 2D)."""
    g = state.rho.grid
    u = state.velocity_values()
    limit = induction_dt_limit(u, g, config.nu)
    if dt > limit:
        raise CFLError(
            f"induction step dt = {dt:g} exceeds the advective limit {limit:g}",
            suggested_dt=0.9 * limit,
        )
    b = state.magnetic.values
    if g.dim == 1:
        b_star = b - dt * _centered_flux_div(b, u, g)
    else:
        grad_a = np.stack(
            [gr.diff1_values(b, ax, g.spacing[ax], gr.DIRICHLET) for ax in range(2)]
        )
        b_star = b - dt * np.einsum("a...,a...->...", u, grad_a)
    if source is not None:
        b_star = b_star + dt * source
    solver = _diffusion_solver(g, float(dt), float(config.nu), "dirichlet")
    v = g.weight_array().reshape(-1)
    rhs = b_star.reshape(-1) * (v / dt)
    rhs[_boundary_mask(g)] = 0.0
    vals = solver.solve(rhs).reshape(g.shape)
    return gr.ScalarField(g, vals, gr.DIRICHLET)


@lru_cache(maxsize=16)
def _grad_gram(basis: gr.GalerkinBasis) -> np.ndarray:
    """G[a, b, i, j] = quadrature of (d_a phi_i)(d_b phi_j)."""
    return np.einsum(
        "kap,p,lbp->abkl", basis.grad_phi, basis.weights, basis.grad_phi
    )


def _weighted_mass_matrix(basis: gr.GalerkinBasis, sigma_flat: np.ndarray):
    return np.einsum("kp,p,lp->kl", basis.phi, basis.weights * sigma_flat, basis.phi)


def _lorentz_force(state: SimState) -> np.ndarray:
    g = state.rho.grid
    if g.dim == 1:
        h = state.magnetic.values
        dh = gr.diff1_values(h, 0, g.spacing[0], gr.DIRICHLET)
        return (-h * dh)[None, :]
    j = state.curl_magnetic()
    h = state.magnetic_components()
    return np.stack([-j * h[1], j * h[0]])


def step_momentum(
    state: SimState,
    dt: float,
    config: SimConfig,
    *,
    sigma_prev: np.ndarray | None = None,
    source=None,
):
    """Advance the Galerkin velocity coefficients.

    Solves (M_new + dt*V) c_new = M_old c_old + dt*F with M the
    (rho+n)-weighted mass matrix, V the viscous mode coupling, and F the
    explicit convection, regularized pressure, Lorentz and epsilon terms.
    Returns (coeffs, vacuum_regularized).
    """
    g = state.rho.grid
    basis = state.basis
    k = basis.mode_count
    dim = g.dim
    w = basis.weights
    sigma = (state.rho.values + state.n.values).reshape(-1)
    sigma_old = sigma if sigma_prev is None else sigma_prev.reshape(-1)

    m_new = _weighted_mass_matrix(basis, sigma)
    m_old = m_new if sigma_prev is None else _weighted_mass_matrix(basis, sigma_old)

    vacuum = False
    eigs = np.linalg.eigvalsh(m_new)
    if eigs[0] <= _VACUUM_SHIFT * max(1.0, eigs[-1]):
        m_new = m_new + _VACUUM_SHIFT * np.eye(k)
        vacuum = True
        if not np.isfinite(eigs[0]):
            raise NumericsError("velocity mass matrix is singular (global vacuum)")

    u = state.u_coeffs @ basis.phi  # (dim, P)
    pi = np.asarray(
        cl.artificial_pressure(
            state.rho.values.reshape(-1), state.n.values.reshape(-1),
            config.closure, config.reg,
        )
    )
    force = np.einsum("p,ap,bp,kbp->ak", w * sigma, u, u, basis.grad_phi)
    force += np.einsum("p,kap->ak", w * pi, basis.grad_phi)
    lor = _lorentz_force(state).reshape(dim, -1)
    force += np.einsum("ap,p,kp->ak", lor, w, basis.phi)
    if config.epsilon > 0.0:
        grad_sigma = np.stack(
            [
                gr.diff1_values(
                    sigma.reshape(g.shape), ax, g.spacing[ax], gr.NEUMANN
                ).reshape(-1)
                for ax in range(dim)
            ]
        )
        grad_u = np.einsum("ak,kbp->abp", state.u_coeffs, basis.grad_phi)
        eps_vec = -config.epsilon * np.einsum("bp,abp->ap", grad_sigma, grad_u)
        force += np.einsum("ap,p,kp->ak", eps_vec, w, basis.phi)
    if source is not None:
        force += np.einsum("ap,p,kp->ak", source.reshape(dim, -1), w, basis.phi)

    gram = _grad_gram(basis)
    visc_diag = config.mu * np.einsum("aakl->kl", gram)
    system = np.zeros((dim, k, dim, k))
    for a in range(dim):
        system[a, :, a, :] = m_new + dt * visc_diag
        for b in range(dim):
            system[a, :, b, :] += dt * (config.mu + config.lam) * gram[a, b]
    rhs = state.u_coeffs @ m_old.T + dt * force
    coeffs = np.linalg.solve(
        system.reshape(dim * k, dim * k), rhs.reshape(dim * k)
    ).reshape(dim, k)
    return coeffs, vacuum


def _eval_forcing(forcing, name, t, g, coords):
    if forcing is None:
        return None
    fn = getattr(forcing, name)
    if fn is None:
        return None
    return np.asarray(fn(t, coords), dtype=float)


def step(state: SimState, dt: float, config: SimConfig) -> SimState:
    """One Lie-splitting step: continuity, induction, then momentum."""
    g = config.grid
    coords = g.coords()
    t = state.time
    forcing = config.forcing
    sources = None
    if forcing is not None:
        sources = {
            "rho": _eval_forcing(forcing, "rho", t, g, coords),
            "n": _eval_forcing(forcing, "n", t, g, coords),
        }
    sigma_prev = state.rho.values + state.n.values
    rho_new, n_new = step_continuity(state, dt, config.epsilon, sources=sources)
    mid = SimState(
        time=t,
        rho=rho_new,
        n=n_new,
        u_coeffs=state.u_coeffs,
        magnetic=state.magnetic,
        basis=state.basis,
    )
    magnetic_new = step_induction(
        mid, dt, config, source=_eval_forcing(forcing, "magnetic", t, g, coords)
    )
    mid.magnetic = magnetic_new
    coeffs, vacuum = step_momentum(
        mid,
        dt,
        config,
        sigma_prev=sigma_prev,
        source=_eval_forcing(forcing, "velocity", t, g, coords),
    )
    return SimState(
        time=t + dt,
        rho=rho_new,
        n=n_new,
        u_coeffs=coeffs,
        magnetic=magnetic_new,
        basis=state.basis,
        vacuum_regularized=vacuum,
    )


@dataclass
class Trajectory:
    """Snapshots plus the per-step energy ledger of one run."""

    config: SimConfig
    snapshot_times: list
    states: list            # SimState at the snapshot times
    ledgers: list           # diagnostics.EnergyLedger, one per step incl. t=0
    injected_mass_rho: float = 0.0
    injected_mass_n: float = 0.0

    @property
    def grid(self) -> gr.Grid:
        return self.config.grid

    def final_state(self) -> SimState:
        return self.states[-1]


def run_simulation(
    config: SimConfig,
    data: InitialData,
    *,
    snapshots: int = 32,
    initial_state: SimState | None = None,
) -> Trajectory:
    """Integrate to t_end, recording ledgers each step and periodic snapshots."""
    from . import diagnostics as dg  # late import to stay acyclic

    if initial_state is None:
        validate_initial_data(data, config.closure.c0)
        state = make_state(config, data)
    else:
        state = initial_state.copy()
    n_steps = max(1, int(round((config.t_end - state.time) / config.dt)))
    snap_idx = sorted(
        set(np.linspace(0, n_steps, min(snapshots, n_steps + 1)).round().astype(int))
    )
    snap_idx = [i for i in snap_idx if i > 0]
    g = config.grid
    v = g.weight_array()
    coords = g.coords()

    traj = Trajectory(
        config=config,
        snapshot_times=[state.time],
        states=[state.copy()],
        ledgers=[dg.energy_ledger(state, config)],
    )
    for m in range(1, n_steps + 1):
        if config.forcing is not None:
            f_rho = _eval_forcing(config.forcing, "rho", state.time, g, coords)
            f_n = _eval_forcing(config.forcing, "n", state.time, g, coords)
            if f_rho is not None:
                traj.injected_mass_rho += config.dt * float(np.sum(v * f_rho))
            if f_n is not None:
                traj.injected_mass_n += config.dt * float(np.sum(v * f_n))
        state = step(state, config.dt, config)
        traj.ledgers.append(dg.energy_ledger(state, config))
        if snap_idx and m == snap_idx[0]:
            snap_idx = snap_idx[1:]
            traj.snapshot_times.append(state.time)
            traj.states.append(state.copy())
    return traj


def _smooth_once(values, bc):
    out = values
    for ax in range(values.ndim):
        p = gr._pad(out, ax, bc)
        nd = p.ndim
        out = (
            0.25 * p[gr._slicer(nd, ax, slice(None, -2))]
            + 0.5 * p[gr._slicer(nd, ax, slice(1, -1))]
            + 0.25 * p[gr._slicer(nd, ax, slice(2, None))]
        )
    return out


def mollify_initial_data(
    raw: InitialData, delta: float, B: float, c0: float
) -> InitialData:
    """Clamp densities into [delta, delta**(-1/(2B))] and smooth the velocity.

    Both densities are clamped with the same floor and cap, which preserves
    the c0-ratio cone; the velocity is rebuilt from the momentum with a
    short smoothing kernel whose strength vanishes with delta.
    """
    if not delta > 0.0:
        raise DomainError("delta > 0 required")
    validate_initial_data(raw, c0)
    g = raw.rho0.grid
    cap = delta ** (-1.0 / (2.0 * B))
    rho_c = np.clip(raw.rho0.values, delta, cap)
    n_c = np.clip(raw.n0.values, delta, cap)

    sigma_raw = raw.rho0.values + raw.n0.values
    momentum = sigma_raw * raw.u0.values
    with np.errstate(invalid="ignore", divide="ignore"):
        scaled = np.where(sigma_raw > 0.0, momentum / np.sqrt(sigma_raw), 0.0)
    passes = min(64, int(round(np.sqrt(delta) * min(g.cells))))
    smoothed = scaled
    for _ in range(passes):
        smoothed = np.stack(
            [_smooth_once(smoothed[a], gr.DIRICHLET) for a in range(g.dim)]
        )
    u_new = smoothed / np.sqrt(rho_c + n_c)
    return InitialData(
        rho0=gr.ScalarField(g, rho_c, gr.NEUMANN),
        n0=gr.ScalarField(g, n_c, gr.NEUMANN),
        u0=gr.VectorField(g, u_new, gr.DIRICHLET),
        magnetic0=raw.magnetic0.copy(),
    )
