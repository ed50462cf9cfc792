"""Two-species pressure closure, its derivatives and energy potentials.

The mixture carries partial densities (rho, n).  Under the implicit law the
species density rho_plus solves

    rho_plus * q(rho_plus) - q(rho_plus) * rho - n * rho_plus = 0,
    q(x) = x**(gamma_plus / gamma_minus),

and the mixture pressure is P = rho_plus**gamma_plus.  The explicit law is
the plain sum P = rho**gamma_plus + n**gamma_minus.  All operations accept
scalars or numpy arrays and broadcast.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericsError

_RESIDUAL_TOL = 1e-12
_MAX_NEWTON_ITER = 200
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


class PressureLaw(enum.Enum):
    IMPLICIT = "implicit"
    EXPLICIT = "explicit"


@dataclass(frozen=True)
class ClosureParams:
    """Equation-of-state configuration for the two-species mixture.

    gamma_plus, gamma_minus are the adiabatic exponents of the two species,
    law selects implicit vs explicit pressure, and c0 >= 1 bounds the
    admissible density ratio cone  n/c0 <= rho <= c0*n.
    """

    gamma_plus: float
    gamma_minus: float
    law: PressureLaw = PressureLaw.IMPLICIT
    c0: float = 2.0

    def __post_init__(self):
        gp, gm = self.gamma_plus, self.gamma_minus
        if not (math.isfinite(gp) and gp >= 1.0):
            raise DomainError(f"gamma_plus >= 1 required, got {gp}")
        if not (math.isfinite(gm) and gm > 0.0):
            raise DomainError(f"gamma_minus > 0 required, got {gm}")
        if not (math.isfinite(self.c0) and self.c0 >= 1.0):
            raise DomainError(f"c0 >= 1 required, got {self.c0}")

    @property
    def exponent_ratio(self) -> float:
        """g = gamma_plus / gamma_minus, the exponent of q."""
        return self.gamma_plus / self.gamma_minus

    @property
    def q_lo(self) -> float:
        return min(1.0, self.gamma_minus / self.gamma_plus)

    @property
    def q_hi(self) -> float:
        return max(1.0, self.gamma_minus / self.gamma_plus)

    @property
    def q1_lo(self) -> float:
        return min(1.0, self.gamma_plus / self.gamma_minus)

    @property
    def q1_hi(self) -> float:
        return max(1.0, self.gamma_plus / self.gamma_minus)

    @property
    def pressure_lo(self) -> float:
        """Lower pressure-equivalence constant, q_lo**gamma_plus."""
        return self.q_lo ** self.gamma_plus

    @property
    def pressure_hi(self) -> float:
        """Upper pressure-equivalence constant, (2*q_hi)**gamma_plus."""
        return (2.0 * self.q_hi) ** self.gamma_plus

    @property
    def growth_exponent(self) -> float:
        """The exponent A controlling the energy-Hessian growth bound."""
        gp, gm = self.gamma_plus, self.gamma_minus
        return max(
            0.0,
            gp - 2.0,
            gm - 2.0,
            gp - 2.0 * gp / gm,
            gp - gp / gm - 1.0,
            gm - gm / gp - 1.0,
        )


@dataclass(frozen=True)
class RegularizationParams:
    """Artificial-pressure weight delta and exponent B (explicit law: beta)."""

    delta: float
    B: float
    beta: float = 3.0

    def __post_init__(self):
        if not (math.isfinite(self.delta) and self.delta > 0.0):
            raise DomainError(f"delta > 0 required, got {self.delta}")
        if not math.isfinite(self.B):
            raise DomainError(f"B must be finite, got {self.B}")
        if not (math.isfinite(self.beta) and self.beta > 1.0):
            raise DomainError(f"beta > 1 required, got {self.beta}")

    def validate_against(self, params: ClosureParams) -> None:
        """Check the hypothesis B >= A + 2 for the implicit artificial pressure."""
        bound = params.growth_exponent + 2.0
        if self.B < bound - 1e-12:
            raise DomainError(
                f"B >= A + 2 violated: B = {self.B}, A + 2 = {bound}"
            )


@dataclass(frozen=True)
class ClosureEval:
    """One recovered closure state: (alpha, rho_plus, rho_minus) plus inputs."""

    rho: float | np.ndarray
    n: float | np.ndarray
    rho_plus: float | np.ndarray
    rho_minus: float | np.ndarray
    alpha: float | np.ndarray
    pressure: float | np.ndarray
    degenerate: bool | np.ndarray = False


def _as_nonneg(x, name):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite")
    if np.any(arr < 0.0):
        raise DomainError(f"{name} must be non-negative")
    return arr


def _pair(rho, n):
    r = _as_nonneg(rho, "rho")
    m = _as_nonneg(n, "n")
    r, m = np.broadcast_arrays(r, m)
    return np.array(r, dtype=float), np.array(m, dtype=float)


def _unwrap(out, *inputs):
    out = np.asarray(out)
    return float(out[()]) if out.ndim == 0 else out


def closure_residual(x, rho, n, params: ClosureParams):
    """Residual of the defining equation, x*q(x) - q(x)*rho - n*x."""
    g = params.exponent_ratio
    x = np.asarray(x, dtype=float)
    return x ** (1.0 + g) - x**g * np.asarray(rho, float) - np.asarray(n, float) * x


def solve_rho_plus(rho, n, params: ClosureParams):
    """Solve the implicit closure for the species density rho_plus.

    Exact on the axes (n = 0 gives rho, rho = 0 gives n**(gamma_minus/gamma_plus),
    the origin gives 0); in the interior a safeguarded Newton iteration on
    h(x) = x**(g-1) * (x - rho) - n, hard-bracketed by

        max(rho, q_lo*(rho + n**(1/g))) <= rho_plus <= q_hi*(rho + n**(1/g)).
    """
    if params.law is not PressureLaw.IMPLICIT:
        raise DomainError("solve_rho_plus requires the implicit pressure law")
    r, m = _pair(rho, n)
    g = params.exponent_ratio
    out = np.where(m == 0.0, r, np.power(m, 1.0 / g))
    interior = (r > 0.0) & (m > 0.0)
    if np.any(interior):
        out[interior] = _newton_interior(r[interior], m[interior], params)
    return _unwrap(out, rho, n)


def _newton_interior(rho, n, params: ClosureParams):
    g = params.exponent_ratio
    qinv = n ** (1.0 / g)
    base = rho + qinv
    lo = np.maximum(rho, params.q_lo * base)
    hi = params.q_hi * base
    x = 0.5 * (lo + hi)
    done = np.zeros(x.shape, dtype=bool)
    for _ in range(_MAX_NEWTON_ITER):
        xg1 = x ** (g - 1.0)
        h = xg1 * (x - rho) - n
        # residual of the defining equation is x*h; scale per the contract
        done = np.abs(x * h) <= _RESIDUAL_TOL * (1.0 + x ** (1.0 + g))
        if np.all(done):
            return x
        lo = np.where(h < 0.0, x, lo)
        hi = np.where(h > 0.0, x, hi)
        dh = xg1 * (1.0 + (g - 1.0) * (x - rho) / x)
        with np.errstate(divide="ignore", invalid="ignore"):
            trial = x - h / dh
        fallback = ~np.isfinite(trial) | (trial <= lo) | (trial >= hi)
        trial = np.where(fallback, 0.5 * (lo + hi), trial)
        x = np.where(done, x, trial)
    width = float(np.max((hi - lo)[~done]))
    raise NumericsError(
        f"closure Newton iteration failed to converge after {_MAX_NEWTON_ITER} "
        f"iterations; widest remaining bracket {width:.3e}"
    )


def pressure(rho, n, params: ClosureParams):
    """Mixture pressure P(rho, n) under the configured law."""
    r, m = _pair(rho, n)
    gp, gm = params.gamma_plus, params.gamma_minus
    if params.law is PressureLaw.EXPLICIT:
        out = r**gp + m**gm
        return _unwrap(out, rho, n)
    # exact axis branches keep P(rho, 0) = rho**gp and P(0, n) = n**gm bit-clean
    out = np.where(m == 0.0, r**gp, m**gm)
    interior = (r > 0.0) & (m > 0.0)
    if np.any(interior):
        x = _newton_interior(r[interior], m[interior], params)
        out[interior] = x**gp
    return _unwrap(out, rho, n)


def pressure_partials(rho, n, params: ClosureParams):
    """First partials of rho_plus and P, and the second n-partial of P.

    Returns (d rho_plus/d rho, d rho_plus/d n, dP/d rho, dP/d n, d2P/dn2).
    Away from the origin the closed forms obtained by implicit
    differentiation are used; they extend continuously to the axes.  At the
    origin the one-sided limits exist only under the exponent conditions
    gamma_minus >= gamma_plus (for the n-derivative) and are used verbatim.
    """
    if params.law is not PressureLaw.IMPLICIT:
        raise DomainError("pressure_partials requires the implicit pressure law")
    r, m = _pair(rho, n)
    g = params.exponent_ratio
    gp, gm = params.gamma_plus, params.gamma_minus

    origin = (r == 0.0) & (m == 0.0)
    if np.any(origin):
        _origin_partials(params)  # raises unless the limits exist

    x = np.asarray(solve_rho_plus(r, m, params), dtype=float)
    safe_x = np.where(origin, 1.0, x)
    alpha = np.where(origin, 1.0, r / safe_x)
    mix = alpha + g * (1.0 - alpha)  # in [min(1, g), max(1, g)]

    dxdr = 1.0 / mix
    dxdn = safe_x ** (1.0 - g) / mix
    dpdr = gp * safe_x ** (gp - 1.0) / mix
    dpdn = gp * safe_x ** (gp - g) / mix
    d2xdn2 = safe_x ** (1.0 - 2.0 * g) * (g - 1.0) * (alpha * (g - 2.0) - g) / mix**3
    d2pdn2 = gp * (gp - 1.0) * safe_x ** (gp - 2.0) * dxdn**2 + gp * safe_x ** (
        gp - 1.0
    ) * d2xdn2

    if np.any(origin):
        vals = _origin_partials(params)
        dxdr = np.where(origin, vals[0], dxdr)
        dxdn = np.where(origin, vals[1], dxdn)
        dpdr = np.where(origin, vals[2], dpdr)
        dpdn = np.where(origin, vals[3], dpdn)
        d2pdn2 = np.where(origin, vals[4], d2pdn2)
    return tuple(_unwrap(v, rho, n) for v in (dxdr, dxdn, dpdr, dpdn, d2pdn2))


def _origin_partials(params: ClosureParams):
    gp, gm = params.gamma_plus, params.gamma_minus
    ratio = gm / gp
    if ratio < 1.0:
        raise DomainError(
            "pressure partials at (0, 0) need gamma_minus/gamma_plus >= 1"
        )
    dxdn = 1.0 if ratio == 1.0 else 0.0
    dpdr = 1.0 if gp == 1.0 else 0.0
    dpdn = 1.0 if gm == 1.0 else 0.0
    if gm == 1.0 or gm > 2.0:
        d2pdn2 = 0.0
    elif gm == 2.0:
        d2pdn2 = gm * (gm - 1.0)
    else:
        raise DomainError(
            "second n-derivative of P diverges at (0, 0) for 1 < gamma_minus < 2"
        )
    return 1.0, dxdn, dpdr, dpdn, d2pdn2


def _g_energy(z, gamma):
    """Isentropic energy density G_gamma with the logarithmic branch at 1."""
    z = np.asarray(z, dtype=float)
    if gamma == 1.0:
        safe = np.where(z > 0.0, z, 1.0)
        return np.where(z > 0.0, z * np.log(safe) - z + 1.0, 1.0 - z)
    return z**gamma / (gamma - 1.0)


def energy_density_HP(rho, n, params: ClosureParams, *, rel_tol=1e-10):
    """Pressure potential per unit volume.

    Implicit law: rho * int_1^rho P(z, z*n/rho)/z^2 dz, signed for rho < 1,
    evaluated by panel-doubling Gauss quadrature on geometrically graded
    panels (relative tolerance rel_tol).  Explicit law:
    G_{gamma_plus}(rho) + G_{gamma_minus}(n).
    """
    r, m = _pair(rho, n)
    if params.law is PressureLaw.EXPLICIT:
        out = _g_energy(r, params.gamma_plus) + _g_energy(m, params.gamma_minus)
        return _unwrap(out, rho, n)
    if np.any((r == 0.0) & (m > 0.0)):
        raise DomainError(
            "the ray potential diverges at rho = 0 with n > 0; such states lie "
            "outside every admissible ratio cone"
        )
    out = np.zeros_like(r)
    active = r > 0.0
    if np.any(active):
        out[active] = _hp_interior(r[active], m[active], params, rel_tol)
    return _unwrap(out, rho, n)


def _hp_interior(rho, n, params, rel_tol):
    slope = n / rho
    a = np.minimum(rho, 1.0)
    b = np.maximum(rho, 1.0)
    sign = np.where(rho >= 1.0, 1.0, -1.0)
    est = _gauss_panels(a, b, slope, params, 1)
    panels = 2
    todo = np.ones(rho.shape, dtype=bool)
    while True:
        refined = est.copy()
        refined[todo] = _gauss_panels(a[todo], b[todo], slope[todo], params, panels)
        err = np.abs(refined - est)
        est = refined
        todo = todo & (err > rel_tol * (1.0 + np.abs(est)))
        if not np.any(todo):
            break
        if panels >= 512:
            raise NumericsError(
                f"energy quadrature did not reach rel_tol={rel_tol:g} with "
                f"{panels} panels (worst error {float(np.max(err[todo])):.3e})"
            )
        panels *= 2
    return rho * sign * est


def _gauss_panels(a, b, slope, params, panels):
    """Composite Gauss-Legendre quadrature of P(z, slope*z)/z^2 over [a, b].

    Panel edges are geometric in z, which resolves the power-law integrand
    near small lower limits; a == b yields 0.
    """
    frac = np.linspace(0.0, 1.0, panels + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(a > 0.0, b / a, 1.0)
    edges = a[:, None] * ratio[:, None] ** frac[None, :]
    mid = 0.5 * (edges[:, 1:] + edges[:, :-1])
    half = 0.5 * (edges[:, 1:] - edges[:, :-1])
    z = mid[:, :, None] + half[:, :, None] * _GL_NODES[None, None, :]
    flat = z.reshape(-1)
    p_vals = pressure(flat, slope.repeat(panels * len(_GL_NODES)) * flat, params)
    integrand = (np.asarray(p_vals) / flat**2).reshape(z.shape)
    return np.einsum("ipj,j,ip->i", integrand, _GL_WEIGHTS, half)


def total_energy_density(rho, n, params: ClosureParams, reg: RegularizationParams):
    """Regularized potential: energy_density_HP + h_delta."""
    return energy_density_HP(rho, n, params) + h_delta(rho, n, reg, params)


def euler_identity_residual(rho, n, params: ClosureParams):
    """|rho*dH/drho + n*dH/dn - H - P| with finite-difference partials of H."""
    r, m = _pair(rho, n)
    if np.any(r <= 0.0) or np.any(m <= 0.0):
        raise DomainError("euler_identity_residual needs rho, n > 0")
    hr = np.minimum(1e-5 * (1.0 + r), 0.5 * r)
    hn = np.minimum(1e-5 * (1.0 + m), 0.5 * m)

    def H(a, b):
        return np.asarray(energy_density_HP(a, b, params, rel_tol=1e-12))

    dHdr = (H(r + hr, m) - H(r - hr, m)) / (2.0 * hr)
    dHdn = (H(r, m + hn) - H(r, m - hn)) / (2.0 * hn)
    out = np.abs(r * dHdr + m * dHdn - H(r, m) - np.asarray(pressure(r, m, params)))
    return _unwrap(out, rho, n)


def _pow_term(base, expo):
    """base**expo with 0**e = 0 for e < 0 (and the usual 0**0 = 1)."""
    base = np.asarray(base, dtype=float)
    if expo >= 0.0:
        return base**expo
    with np.errstate(divide="ignore"):
        return np.where(base > 0.0, base**expo, 0.0)


def artificial_pressure(rho, n, params: ClosureParams, reg: RegularizationParams):
    """Regularized pressure.

    Implicit law: P + delta*(rho^B + n^B + rho^2 n^(B-2)/2 + n^2 rho^(B-2)/2),
    explicit law: P + delta*(rho + n)^beta.
    """
    r, m = _pair(rho, n)
    p = np.asarray(pressure(r, m, params), dtype=float)
    if params.law is PressureLaw.EXPLICIT:
        out = p + reg.delta * (r + m) ** reg.beta
        return _unwrap(out, rho, n)
    reg.validate_against(params)
    B = reg.B
    bulk = r**B + m**B + 0.5 * r**2 * _pow_term(m, B - 2.0) + 0.5 * m**2 * _pow_term(
        r, B - 2.0
    )
    out = p + reg.delta * bulk
    return _unwrap(out, rho, n)


def h_delta(rho, n, reg: RegularizationParams, params: ClosureParams):
    """Potential of the artificial pressure (its value at delta-weight)."""
    r, m = _pair(rho, n)
    if params.law is PressureLaw.EXPLICIT:
        out = reg.delta / (reg.beta - 1.0) * (r + m) ** reg.beta
        return _unwrap(out, rho, n)
    B = reg.B
    if B <= 1.0:
        raise DomainError(f"h_delta needs B > 1, got {B}")
    bulk = r**B + m**B + 0.5 * r**2 * _pow_term(m, B - 2.0) + 0.5 * m**2 * _pow_term(
        r, B - 2.0
    )
    out = reg.delta / (B - 1.0) * bulk
    return _unwrap(out, rho, n)


def ratio_s(rho, n):
    """Density ratio s = rho/n, with s = 0 on vacuum of the second species."""
    r, m = _pair(rho, n)
    out = np.where(m > 0.0, r / np.where(m > 0.0, m, 1.0), 0.0)
    return _unwrap(out, rho, n)


def pi_decomposition(n, s, params: ClosureParams):
    """Split P(n*s, n) = q1_lo/2 * n^gamma_minus + pi(n, s).

    Returns (pi, monotone_witness); the witness is the smallest forward
    difference of pi over the supplied n-grid (None for scalar input).
    """
    if params.gamma_plus < 1.0 or params.gamma_minus < 1.0:
        raise DomainError("pi_decomposition needs gamma_plus, gamma_minus >= 1")
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0.0) or np.any(s_arr > params.c0):
        raise DomainError(f"s must lie in [0, c0] = [0, {params.c0}]")
    m = _as_nonneg(n, "n")
    p = np.asarray(pressure(m * s_arr, m, params), dtype=float)
    pi = p - 0.5 * params.q1_lo * m**params.gamma_minus
    if np.ndim(n) >= 1 and np.size(m) >= 2:
        witness = float(np.min(np.diff(pi)))
    else:
        witness = None
    return _unwrap(pi, n), witness


def recover_real_variables(rho, n, params: ClosureParams) -> ClosureEval:
    """Recover (alpha, rho_plus, rho_minus) from the working variables.

    alpha*rho_plus = rho, (1-alpha)*rho_minus = n and
    rho_minus = rho_plus**(gamma_plus/gamma_minus).  The degenerate origin
    returns the convention alpha = 1, rho_plus = rho_minus = 0 with a flag.
    """
    r, m = _pair(rho, n)
    g = params.exponent_ratio
    x = np.asarray(solve_rho_plus(r, m, params), dtype=float)
    degenerate = (r == 0.0) & (m == 0.0)
    alpha = np.where(degenerate, 1.0, r / np.where(x > 0.0, x, 1.0))
    rho_minus = x**g
    p = np.asarray(pressure(r, m, params), dtype=float)
    scalar = np.ndim(rho) == 0 and np.ndim(n) == 0
    if scalar:
        return ClosureEval(
            rho=float(r[()]),
            n=float(m[()]),
            rho_plus=float(x[()]),
            rho_minus=float(rho_minus[()]),
            alpha=float(alpha[()]),
            pressure=float(p[()]),
            degenerate=bool(degenerate[()]),
        )
    return ClosureEval(
        rho=r, n=m, rho_plus=x, rho_minus=rho_minus, alpha=alpha, pressure=p,
        degenerate=degenerate,
    )


@dataclass(frozen=True)
class HessianBoundReport:
    """Empirical multiple C with sum of |second partials| <= C*(1 + rho**A)."""

    sum_second_partials: float
    bound_scale: float
    c_estimate: float
    c_refined: float

    @property
    def stable(self) -> bool:
        hi = max(self.c_estimate, self.c_refined)
        lo = min(self.c_estimate, self.c_refined)
        return lo == 0.0 if hi == 0.0 else hi / lo <= 2.0


def hessian_HP_bound_check(
    rho, n, params: ClosureParams, r_lower, *, step_scale=1e-4
) -> HessianBoundReport:
    """Finite-difference check of the energy-Hessian growth bound.

    Requires (rho, n) in the ratio cone and rho >= r_lower > 0.  Second
    partials of the potential are formed by central differences at two step
    sizes; the report carries the implied constants for both.
    """
    r = float(rho)
    m = float(n)
    if not (r_lower > 0.0 and r >= r_lower):
        raise DomainError(f"need rho >= r_lower > 0, got rho={r}, r_lower={r_lower}")
    c0 = params.c0
    if not (r <= c0 * m + 1e-12 and m <= c0 * r + 1e-12):
        raise DomainError(f"({r}, {m}) lies outside the ratio cone with c0={c0}")

    def H(a, b):
        return float(energy_density_HP(a, b, params, rel_tol=1e-12))

    def implied_c(scale):
        h = min(scale * (1.0 + r), 0.25 * r)
        k = min(scale * (1.0 + m), 0.25 * m)
        if h <= 0.0 or k <= 0.0:
            raise NumericsError("difference step underflowed")
        h_rr = (H(r + h, m) - 2.0 * H(r, m) + H(r - h, m)) / h**2
        h_nn = (H(r, m + k) - 2.0 * H(r, m) + H(r, m - k)) / k**2
        h_rn = (
            H(r + h, m + k) - H(r + h, m - k) - H(r - h, m + k) + H(r - h, m - k)
        ) / (4.0 * h * k)
        return abs(h_rr) + abs(h_rn) + abs(h_nn)

    total = implied_c(step_scale)
    total_refined = implied_c(0.5 * step_scale)
    scale = 1.0 + r**params.growth_exponent
    report = HessianBoundReport(
        sum_second_partials=total,
        bound_scale=scale,
        c_estimate=total / scale,
        c_refined=total_refined / scale,
    )
    if not np.isfinite(report.c_estimate):
        raise NumericsError("hessian bound check produced a non-finite constant")
    return report
