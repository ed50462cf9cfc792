"""Energy ledgers, cut-off families and defect functionals.

Everything here is a pure function of one or more simulation states.  The
"limit" member of a parameter family is operationalized as its
smallest-parameter (finest) member; every defect number is relative to
that reference, which each report states explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import closure as cl
from . import grid as gr
from .errors import DomainError

REFERENCE_NOTE = (
    "reference values are the smallest-parameter member of the supplied "
    "family, a finite-resolution surrogate for the weak limit"
)


@dataclass(frozen=True)
class EnergyLedger:
    """Per-step integral quantities of one state."""

    time: float
    kinetic: float
    magnetic: float
    internal: float
    artificial: float
    sigma_l2: float
    dissipation_rate: float
    eps_dissipation: float
    eps_dissipation_weighted: float
    ratio_min: float
    divH_max: float
    mass_rho: float
    mass_n: float
    vacuum_regularized: bool = False

    def validate(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float) and not np.isfinite(v):
                raise DomainError(f"ledger entry {f.name} is not finite")
        for name in ("kinetic", "magnetic", "artificial"):
            if getattr(self, name) < 0.0:
                raise DomainError(f"ledger entry {name} must be non-negative")

    def total_energy(self) -> float:
        """E + h_delta part: kinetic + magnetic + internal + artificial."""
        return self.kinetic + self.magnetic + self.internal + self.artificial


def energy_ledger(state, config) -> EnergyLedger:
    g = config.grid
    w = g.weight_array()
    rho = state.rho.values
    n = state.n.values
    sigma = rho + n
    u = state.velocity_values()
    h_comps = state.magnetic_components()

    kinetic = 0.5 * float(np.sum(w * sigma * np.sum(u * u, axis=0)))
    magnetic = 0.5 * float(np.sum(w * np.sum(h_comps * h_comps, axis=0)))
    internal = float(
        np.sum(w * np.asarray(cl.energy_density_HP(rho, n, config.closure)))
    )
    artificial = float(
        np.sum(w * np.asarray(cl.h_delta(rho, n, config.reg, config.closure)))
    )
    sigma_l2 = config.sigma_weight * float(np.sum(w * (rho**2 + n**2)))

    grad_u = state.velocity_gradient()
    div_u = np.einsum("aa...->...", grad_u)
    curl_h = state.curl_magnetic()
    dissipation = float(
        np.sum(
            w
            * (
                config.mu * np.sum(grad_u**2, axis=(0, 1))
                + (config.mu + config.lam) * div_u**2
                + config.nu * curl_h**2
            )
        )
    )

    grad_sq = np.zeros_like(rho)
    for vals in (rho, n):
        for ax in range(g.dim):
            grad_sq = grad_sq + gr.diff1_values(vals, ax, g.spacing[ax], gr.NEUMANN) ** 2
    eps_diss = config.epsilon * float(np.sum(w * grad_sq))
    b_weight = np.asarray(
        cl._pow_term(rho, config.reg.B - 2.0) + cl._pow_term(n, config.reg.B - 2.0)
    )
    eps_diss_weighted = config.epsilon * float(np.sum(w * b_weight * grad_sq))

    c0 = config.closure.c0
    ratio_min = float(np.min(np.minimum(c0 * rho - n, c0 * n - rho)))
    ledger = EnergyLedger(
        time=state.time,
        kinetic=kinetic,
        magnetic=magnetic,
        internal=internal,
        artificial=artificial,
        sigma_l2=sigma_l2,
        dissipation_rate=dissipation,
        eps_dissipation=eps_diss,
        eps_dissipation_weighted=eps_diss_weighted,
        ratio_min=ratio_min,
        divH_max=state.div_magnetic_max(),
        mass_rho=float(np.sum(w * rho)),
        mass_n=float(np.sum(w * n)),
        vacuum_regularized=state.vacuum_regularized,
    )
    ledger.validate()
    return ledger


def real_system_energy_check(state, config):
    """Evaluate the internal energy directly and through the recovered
    (alpha, rho_plus, rho_minus) variables; returns (direct, roundtrip, rel)."""
    g = config.grid
    w = g.weight_array()
    rho = state.rho.values.reshape(-1)
    n = state.n.values.reshape(-1)
    direct = float(
        np.sum(w.reshape(-1) * np.asarray(cl.energy_density_HP(rho, n, config.closure)))
    )
    ce = cl.recover_real_variables(rho, n, config.closure)
    rho_rt = ce.alpha * ce.rho_plus
    n_rt = (1.0 - ce.alpha) * ce.rho_minus
    roundtrip = float(
        np.sum(
            w.reshape(-1)
            * np.asarray(cl.energy_density_HP(rho_rt, n_rt, config.closure))
        )
    )
    scale = max(abs(direct), 1e-30)
    return direct, roundtrip, abs(direct - roundtrip) / scale


# ---------------------------------------------------------------------------
# cut-off family


def _t_base(t):
    """Smooth concave base cut-off: identity below 1, constant 2 above 3."""
    t = np.asarray(t, dtype=float)
    mid = (t**4 - 8.0 * t**3 + 18.0 * t**2 + 5.0) / 16.0
    return np.where(t <= 1.0, t, np.where(t >= 3.0, 2.0, mid))


def _t_base_integral(w):
    """int_1^w T(t)/t^2 dt on [1, 3]; equals 1 at w = 3."""
    w = np.asarray(w, dtype=float)
    return (w**3 / 3.0 - 4.0 * w**2 + 18.0 * w - 5.0 / w - 28.0 / 3.0) / 16.0


def cutoff_Tk(z, k):
    """Concave cut-off T_k(z) = k*T(z/k): z below k, 2k above 3k."""
    z = np.asarray(z, dtype=float)
    if np.any(z < 0.0):
        raise DomainError("cutoff argument must be non-negative")
    if k < 1:
        raise DomainError("cutoff level k >= 1 required")
    out = k * _t_base(z / k)
    return float(out[()]) if out.ndim == 0 else out


def cutoff_Tk_prime(z, k):
    """Derivative of cutoff_Tk: 1 below k, 0 above 3k, t(t-3)^2/4 between."""
    z = np.asarray(z, dtype=float)
    if np.any(z < 0.0):
        raise DomainError("cutoff argument must be non-negative")
    if k < 1:
        raise DomainError("cutoff level k >= 1 required")
    t = z / k
    mid = t * (t - 3.0) ** 2 / 4.0
    out = np.where(t <= 1.0, 1.0, np.where(t >= 3.0, 0.0, mid))
    return float(out[()]) if out.ndim == 0 else out


def beta_k(k) -> float:
    """Linear-tail slope of L_k: log k + int_k^{3k} T_k(s)/s^2 ds + 2/3."""
    return float(np.log(k) + 1.0 + 2.0 / 3.0)


def cutoff_Lk(z, k):
    """z log z below k, then z log k + z int_k^z T_k(s)/s^2 ds."""
    z = np.asarray(z, dtype=float)
    if np.any(z < 0.0):
        raise DomainError("cutoff argument must be non-negative")
    if k < 1:
        raise DomainError("cutoff level k >= 1 required")
    safe = np.where(z > 0.0, z, 1.0)
    low = np.where(z > 0.0, z * np.log(safe), 0.0)
    mid = z * np.log(k) + z * _t_base_integral(safe / k)
    tail = beta_k(k) * z - 2.0 * k
    out = np.where(z <= k, low, np.where(z >= 3.0 * k, tail, mid))
    return float(out[()]) if out.ndim == 0 else out


def cutoff_bk(z, k):
    """b_k = L_k - beta_k z; satisfies b' z - b = T_k."""
    z = np.asarray(z, dtype=float)
    out = cutoff_Lk(z, k) - beta_k(k) * z
    out = np.asarray(out)
    return float(out[()]) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# defect functionals over parameter families


@dataclass(frozen=True)
class DefectReport:
    reference_index: int
    reference_note: str
    nlogn_gap: np.ndarray          # per member, final-time gap to reference
    osc_measure: np.ndarray        # per member, sup over cut-off levels
    s_convergence: dict            # p -> per-member time-integrated metric
    evf_correlation: np.ndarray    # per member covariance
    bogovskii_pressure: np.ndarray
    bogovskii_exponents: np.ndarray

    def trend(self) -> dict:
        """Largest forward difference of each sequence (negative = decaying)."""
        out = {}
        seqs = {
            "nlogn_gap": np.abs(self.nlogn_gap),
            "osc_measure": self.osc_measure,
        }
        for p, vals in self.s_convergence.items():
            seqs[f"s_convergence_p{p:g}"] = vals
        for name, vals in seqs.items():
            clean = [v for i, v in enumerate(vals) if i != self.reference_index]
            out[name] = float(np.max(np.diff(clean))) if len(clean) > 1 else 0.0
        return out


def bogovskii_exponent(gamma_minus: float) -> float:
    """Density-gain exponent min(1, 2*gamma_minus/3 - 1, gamma_minus/3)."""
    return min(1.0, 2.0 * gamma_minus / 3.0 - 1.0, gamma_minus / 3.0)


def _match_times(trajs):
    times = [np.asarray(t.snapshot_times) for t in trajs]
    base = times[0]
    for t in times[1:]:
        if len(t) != len(base) or np.max(np.abs(t - base)) > 1e-10:
            raise DomainError("trajectories must share snapshot times")
    grids = {t.grid for t in trajs}
    if len(grids) != 1:
        raise DomainError("trajectories must share a grid")
    return base


def _time_integral(times, values):
    return float(np.trapezoid(np.asarray(values), np.asarray(times)))


def defect_report(
    sequence,
    reference_index: int,
    config,
    *,
    p_values=(1.0, 2.0),
    cutoff_levels=(1.0, 2.0, 4.0, 8.0),
) -> DefectReport:
    """Weak-limit surrogate functionals of a trajectory family.

    `sequence` is ordered by decreasing regularization (or increasing
    resolution); the reference member stands in for the limit object.
    """
    times = _match_times(sequence)
    ref = sequence[reference_index]
    g = ref.grid
    w = g.weight_array()
    gm = config.closure.gamma_minus
    gp = config.closure.gamma_plus
    g_bog = bogovskii_exponent(gm)
    B = config.reg.B
    delta = config.reg.delta
    two_mu_lam = 2.0 * config.mu + config.lam

    n_members = len(sequence)
    nlogn = np.zeros(n_members)
    osc = np.zeros(n_members)
    evf = np.zeros(n_members)
    bog_p = np.zeros(n_members)
    bog_e = np.zeros(n_members)
    s_conv = {p: np.zeros(n_members) for p in p_values}

    def nlogn_final(traj):
        n_vals = traj.final_state().n.values
        safe = np.where(n_vals > 0.0, n_vals, 1.0)
        return float(np.sum(w * n_vals * np.log(safe)))

    ref_nlogn = nlogn_final(ref)
    ref_states = ref.states

    for j, traj in enumerate(sequence):
        nlogn[j] = nlogn_final(traj) - ref_nlogn

        osc_per_level = []
        for k in cutoff_levels:
            series = [
                float(
                    np.sum(
                        w
                        * np.abs(
                            cutoff_Tk(st.n.values, k) - cutoff_Tk(rs.n.values, k)
                        )
                        ** (gm + 1.0)
                    )
                )
                for st, rs in zip(traj.states, ref_states)
            ]
            osc_per_level.append(_time_integral(times, series))
        osc[j] = max(osc_per_level)

        for p in p_values:
            series = [
                float(
                    np.sum(
                        w
                        * st.n.values
                        * np.abs(
                            np.asarray(cl.ratio_s(st.rho.values, st.n.values))
                            - np.asarray(cl.ratio_s(rs.rho.values, rs.n.values))
                        )
                        ** p
                    )
                )
                for st, rs in zip(traj.states, ref_states)
            ]
            s_conv[p][j] = _time_integral(times, series)

        flux_samples = []
        n_samples = []
        wt_samples = []
        for st in traj.states:
            pi = np.asarray(
                cl.artificial_pressure(
                    st.rho.values, st.n.values, config.closure, config.reg
                )
            )
            div_u = np.einsum("aa...->...", st.velocity_gradient())
            flux_samples.append((pi - two_mu_lam * div_u).reshape(-1))
            n_samples.append(st.n.values.reshape(-1))
            wt_samples.append(w.reshape(-1))
        flux = np.concatenate(flux_samples)
        nn = np.concatenate(n_samples)
        ww = np.concatenate(wt_samples)
        ww = ww / np.sum(ww)
        mean_f = float(np.sum(ww * flux))
        mean_n = float(np.sum(ww * nn))
        evf[j] = float(np.sum(ww * (flux - mean_f) * (nn - mean_n)))

        series_p = []
        series_e = []
        for st in traj.states:
            r, m = st.rho.values, st.n.values
            press = np.asarray(cl.pressure(r, m, config.closure))
            series_p.append(
                float(np.sum(w * (m * press + delta * (m ** (B + 1.0) + m * r**B))))
            )
            series_e.append(
                float(
                    np.sum(
                        w
                        * (
                            m ** (gm + g_bog)
                            + r**gp * np.asarray(cl._pow_term(m, g_bog))
                        )
                    )
                )
            )
        bog_p[j] = _time_integral(times, series_p)
        bog_e[j] = _time_integral(times, series_e)

    return DefectReport(
        reference_index=reference_index,
        reference_note=REFERENCE_NOTE,
        nlogn_gap=nlogn,
        osc_measure=osc,
        s_convergence=s_conv,
        evf_correlation=evf,
        bogovskii_pressure=bog_p,
        bogovskii_exponents=bog_e,
    )


def renormalization_residual(trajectory, b, b_prime, config, *, species="n") -> float:
    """Weak-form residual of the renormalized continuity equation.

    Tests d/dt b(f) + div(b(f) u) + (b'(f) f - b(f)) div u = 0 against a
    fixed smooth window that vanishes at t = 0 and t = T, using the stored
    snapshots.  Requires an epsilon = 0 trajectory.
    """
    if config.epsilon != 0.0:
        raise DomainError("renormalization residual is defined for epsilon = 0 runs")
    times = np.asarray(trajectory.snapshot_times)
    if len(times) < 8:
        raise DomainError("insufficient snapshot density (need at least 8)")
    g = trajectory.grid
    w = g.weight_array()
    coords = g.coords()
    t_span = times[-1] - times[0]
    chi = np.ones(g.shape)
    for ax, x in enumerate(coords):
        chi = chi * np.cos(np.pi * x / g.extent[ax])

    samples = []
    for t, st in zip(times, trajectory.states):
        phase = np.pi * (t - times[0]) / t_span
        psi = np.sin(phase) * chi
        dpsi_dt = (np.pi / t_span) * np.cos(phase) * chi
        grad_psi = np.stack(
            [
                np.sin(phase)
                * np.prod(
                    [
                        (
                            -np.pi / g.extent[ax] * np.sin(np.pi * coords[ax] / g.extent[ax])
                            if ax == d
                            else np.cos(np.pi * coords[ax] / g.extent[ax])
                        )
                        for ax in range(g.dim)
                    ],
                    axis=0,
                )
                for d in range(g.dim)
            ]
        )
        f_vals = st.n.values if species == "n" else st.rho.values
        u = st.velocity_values()
        div_u = np.einsum("aa...->...", st.velocity_gradient())
        bf = np.asarray(b(f_vals))
        defect = (np.asarray(b_prime(f_vals)) * f_vals - bf) * div_u
        integrand = (
            bf * dpsi_dt
            + bf * np.einsum("a...,a...->...", u, grad_psi)
            - defect * psi
        )
        samples.append(float(np.sum(w * integrand)))
    return abs(_time_integral(times, samples))


@dataclass(frozen=True)
class EpsilonEnergyReport:
    """Both sides of the epsilon-level energy estimate, with the empirical
    growth constant solving gap = C*T*exp(C*T) (never asserted)."""

    lhs: float
    e_delta_initial: float
    gap: float
    empirical_growth_constant: float


def epsilon_energy_report(trajectory, config) -> EpsilonEnergyReport:
    led = trajectory.ledgers
    dt = config.dt
    horizon = led[-1].time - led[0].time

    def e_delta(entry):
        return (
            entry.sigma_l2
            + 2.0 * entry.kinetic
            + 2.0 * entry.magnetic
            + 2.0 * (entry.internal + entry.artificial)
        )

    dissipation = sum(l.dissipation_rate for l in led[1:]) * dt
    eps_terms = sum(l.eps_dissipation + l.eps_dissipation_weighted for l in led[1:]) * dt
    lhs = e_delta(led[-1]) + dissipation + eps_terms
    e0 = e_delta(led[0])
    gap = lhs - e0
    c = 0.0
    if gap > 0.0 and horizon > 0.0:
        lo, hi = 0.0, 1.0
        while hi * horizon * np.exp(hi * horizon) < gap and hi < 1e8:
            hi *= 2.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid * horizon * np.exp(mid * horizon) < gap:
                lo = mid
            else:
                hi = mid
        c = 0.5 * (lo + hi)
    return EpsilonEnergyReport(
        lhs=lhs, e_delta_initial=e0, gap=gap, empirical_growth_constant=c
    )


def energy_inequality_overshoot(trajectory, config) -> float:
    """Largest positive violation of the delta-level energy inequality.

    At epsilon = 0 the ledger should satisfy, for every step m,
    E(t_m) + h_delta(t_m) + sum_j dt*D(t_j) <= E(0) + h_delta(0).
    """
    led = trajectory.ledgers
    dt = config.dt
    e0 = led[0].total_energy()
    acc = 0.0
    worst = -np.inf
    for entry in led[1:]:
        acc += dt * entry.dissipation_rate
        worst = max(worst, entry.total_energy() + acc - e0)
    return worst
