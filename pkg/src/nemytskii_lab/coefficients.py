"""Nonlinear diffusivity, drift and response coefficients with their regularizations.

The diffusivity beta is either the odd power law ``beta(r) = |r|^(m-1) r`` or a
user-supplied strictly monotone sample table (C2 spline).  On top of it sit the
Yosida-type resolvent ``g_eps``, the regularized ``beta_eps`` / ``beta_tilde_eps``,
the damped mollification of the response ``b``, the compact cutoff of the vector
field ``E``, and the scalar functionals ``G`` and ``Psi`` used by the condition
checkers and the entropy diagnostics.

Everything here is a pure function of immutable specs; concurrent use from any
number of threads is safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, interpolate, optimize

__all__ = [
    "NonlinearitySpec",
    "DriftSpec",
    "RegularizationParams",
    "HypothesesReport",
    "beta_eval",
    "sigma_squared",
    "yosida_resolvent",
    "yosida_resolvent_array",
    "beta_epsilon",
    "beta_tilde_epsilon",
    "beta_tilde_epsilon_prime",
    "mollified_b",
    "cutoff_E",
    "capital_G",
    "capital_G_inverse",
    "entropy_Psi",
    "check_hypotheses",
    "lambda_zero",
]

_RESOLVENT_TOL = 1e-12


@dataclass(frozen=True)
class NonlinearitySpec:
    """Strictly increasing diffusivity with ``beta(0) = 0``.

    Parameters
    ----------
    kind : {"power_law", "custom"}
    m : float
        Growth exponent, must exceed 1.  For the power law this defines
        ``beta`` exactly; for a table it is metadata used by condition checks.
    zeta : float
        Exponent in the singular weight of ``G``; requires ``2*zeta/m < 1``.
    """

    kind: str
    m: float
    zeta: float = 0.0
    _table_r: np.ndarray | None = field(default=None, repr=False, compare=False)
    _spline: object | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.m <= 1.0:
            raise ValueError(f"m must exceed 1, got {self.m}")
        if not 0.0 <= self.zeta <= 1.0:
            raise ValueError(f"zeta must lie in [0, 1], got {self.zeta}")
        if 2.0 * self.zeta / self.m >= 1.0:
            raise ValueError(f"need 2*zeta/m < 1, got 2*{self.zeta}/{self.m}")

    @classmethod
    def power_law(cls, m: float, zeta: float = 0.0) -> "NonlinearitySpec":
        return cls(kind="power_law", m=float(m), zeta=float(zeta))

    @classmethod
    def from_table(cls, r, values, m: float, zeta: float = 0.0) -> "NonlinearitySpec":
        """Build a custom diffusivity from a strictly monotone sample table.

        Non-monotone tables are rejected here, not at evaluation time.  The
        table is interpolated by a C2 cubic spline whose monotonicity is
        re-validated on a dense grid (a spline through monotone data can
        still undulate).
        """
        r = np.asarray(r, dtype=float)
        values = np.asarray(values, dtype=float)
        if r.ndim != 1 or r.shape != values.shape or r.size < 4:
            raise ValueError("table needs >= 4 matching 1-D abscissae/values")
        if np.any(np.diff(r) <= 0):
            raise ValueError("table abscissae must be strictly increasing")
        if np.any(np.diff(values) <= 0):
            raise ValueError("non-monotone custom table rejected")
        if r[0] > 0 or r[-1] <= 0:
            raise ValueError("table must contain r = 0 in its range")
        spline = interpolate.CubicSpline(r, values)
        if abs(float(spline(0.0))) > 1e-12:
            raise ValueError("custom beta must satisfy beta(0) = 0")
        dense = np.linspace(r[0], r[-1], 8 * r.size)
        if np.any(spline(dense, 1) < 0):
            raise ValueError("spline interpolant of table is not monotone")
        return cls(kind="custom", m=float(m), zeta=float(zeta),
                   _table_r=r, _spline=spline)

    # -- evaluation ------------------------------------------------------

    def beta(self, r):
        """beta(r); accepts scalars or arrays."""
        if self.kind == "power_law":
            r = np.asarray(r, dtype=float)
            out = np.abs(r) ** (self.m - 1.0) * r
            return out if out.ndim else float(out)
        out = self._spline(np.clip(r, self._table_r[0], self._table_r[-1]))
        return out if np.ndim(out) else float(out)

    def beta_prime(self, r):
        if self.kind == "power_law":
            r = np.asarray(r, dtype=float)
            out = self.m * np.abs(r) ** (self.m - 1.0)
            return out if out.ndim else float(out)
        out = self._spline(np.clip(r, self._table_r[0], self._table_r[-1]), 1)
        return out if np.ndim(out) else float(out)

    def beta_inverse(self, y):
        if self.kind == "power_law":
            y = np.asarray(y, dtype=float)
            out = np.abs(y) ** (1.0 / self.m) * np.sign(y)
            return out if out.ndim else float(out)
        return self._table_invert(y)

    def _table_invert(self, y):
        scalar = np.ndim(y) == 0
        y_arr = np.atleast_1d(np.asarray(y, dtype=float))
        lo, hi = self._table_r[0], self._table_r[-1]
        out = np.empty_like(y_arr)
        for i, yi in enumerate(y_arr):
            yc = min(max(yi, float(self._spline(lo))), float(self._spline(hi)))
            out[i] = optimize.brentq(lambda s: float(self._spline(s)) - yc, lo, hi,
                                     xtol=1e-14)
        return float(out[0]) if scalar else out


@dataclass(frozen=True)
class DriftSpec:
    """Vector field E and bounded nonnegative response b, with norm metadata.

    ``sup_norm_E``, ``sup_norm_b`` and ``div_E_minus_sup`` (the sup of the
    negative part of div E) are stored, not recomputed: they enter the step
    restriction and the sup-norm growth bound analytically.
    ``sup_div_minus_plus_E`` is the sup of ``(div E)^- + |E|`` when known in
    closed form; it defaults to the crude bound
    ``div_E_minus_sup + sup_norm_E``.
    """

    E: object
    b: object
    sup_norm_E: float
    sup_norm_b: float
    div_E_minus_sup: float
    sup_div_minus_plus_E: float | None = None
    b_is_constant: bool = False
    e_square_integrable: bool = False
    b_monomial_degree: float | None = None
    iota: object | None = None

    def __post_init__(self):
        for name in ("sup_norm_E", "sup_norm_b", "div_E_minus_sup"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    @classmethod
    def zero(cls) -> "DriftSpec":
        """The porous-medium case E = 0, b = 0."""
        return cls(E=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
                   b=lambda r: np.zeros_like(np.asarray(r, dtype=float)),
                   sup_norm_E=0.0, sup_norm_b=0.0, div_E_minus_sup=0.0,
                   sup_div_minus_plus_E=0.0,
                   b_is_constant=True, e_square_integrable=True)

    @classmethod
    def constant_b(cls, E, b0: float, sup_norm_E: float, div_E_minus_sup: float,
                   sup_div_minus_plus_E: float | None = None,
                   e_square_integrable: bool = False,
                   iota=None) -> "DriftSpec":
        b0 = float(b0)
        if b0 < 0:
            raise ValueError("b must be nonnegative")
        return cls(E=E, b=lambda r: np.full_like(np.asarray(r, dtype=float), b0),
                   sup_norm_E=sup_norm_E, sup_norm_b=b0,
                   div_E_minus_sup=div_E_minus_sup,
                   sup_div_minus_plus_E=sup_div_minus_plus_E,
                   b_is_constant=True, e_square_integrable=e_square_integrable,
                   iota=iota)

    def combined_sup(self) -> float:
        """sup of (div E)^- + |E|, exact when stored, else the sum bound."""
        if self.sup_div_minus_plus_E is not None:
            return self.sup_div_minus_plus_E
        return self.div_E_minus_sup + self.sup_norm_E


@dataclass(frozen=True)
class RegularizationParams:
    """Single regularization level shared by beta_eps, b_eps and the E cutoff."""

    epsilon: float
    mollifier_width: float | None = None
    cutoff_radius: float | None = None

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if self.mollifier_width is None:
            object.__setattr__(self, "mollifier_width", self.epsilon)
        if self.cutoff_radius is None:
            object.__setattr__(self, "cutoff_radius", 1.0 / self.epsilon)
        if self.mollifier_width <= 0:
            raise ValueError("mollifier_width must be positive")
        if self.cutoff_radius != 1.0 / self.epsilon:
            raise ValueError("cutoff_radius must equal 1/epsilon")


# ---------------------------------------------------------------------------
# point evaluations
# ---------------------------------------------------------------------------

def beta_eval(spec: NonlinearitySpec, r: float) -> float:
    """Evaluate the diffusivity at r."""
    if not np.isfinite(r):
        raise ValueError("r must be finite")
    return float(spec.beta(r))


def sigma_squared(spec: NonlinearitySpec, r) -> float:
    """Squared diffusion coefficient 2*beta(r)/r, with 2*beta'(0) at r = 0.

    Densities are nonnegative, so r < 0 is a domain error.  For m > 1 the
    value is continuous at 0 (beta'(0) = 0), which is what makes the
    dynamics degenerate in vacuum.
    """
    arr = np.asarray(r, dtype=float)
    if np.any(arr < 0):
        raise ValueError("sigma_squared is defined for r >= 0 only")
    pos = arr > 0
    out = np.empty_like(arr)
    out[pos] = 2.0 * np.asarray(spec.beta(arr[pos])) / arr[pos]
    out[~pos] = 2.0 * spec.beta_prime(0.0)
    return out if out.ndim else float(out)


def yosida_resolvent(spec: NonlinearitySpec, epsilon: float, r: float) -> float:
    """Solve g + epsilon*beta(g) = r for the unique g.

    Bisection bracketed by [min(0, r), max(0, r)], then a Newton polish;
    absolute residual tolerance 1e-12.  Monotonicity of beta guarantees the
    bracket, so a failure here indicates a broken spec and raises.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    r = float(r)
    if r == 0.0:
        return 0.0

    def h(g):
        return g + epsilon * float(spec.beta(g)) - r

    lo, hi = min(0.0, r), max(0.0, r)
    flo, fhi = h(lo), h(hi)
    if flo * fhi > 0:
        raise AssertionError("resolvent bracket failed; beta is not monotone")
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        fm = h(mid)
        if fm == 0.0:
            lo = hi = mid
            break
        if flo * fm <= 0:
            hi, fhi = mid, fm
        else:
            lo, flo = mid, fm
        if hi - lo < 1e-13 * max(1.0, abs(r)):
            break
    g = 0.5 * (lo + hi)
    for _ in range(8):
        res = h(g)
        if abs(res) <= _RESOLVENT_TOL:
            break
        slope = 1.0 + epsilon * spec.beta_prime(g)
        g -= res / slope
    return g


def yosida_resolvent_array(spec: NonlinearitySpec, epsilon: float, r) -> np.ndarray:
    """Vectorized resolvent solve; same contract as the scalar version.

    Damped Newton from g = r, with a bisection sweep as fallback for any
    entry that has not converged (does not trigger for smooth monotone beta).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    r = np.asarray(r, dtype=float)
    g = r.copy()
    for _ in range(60):
        res = g + epsilon * np.asarray(spec.beta(g)) - r
        bad = np.abs(res) > _RESOLVENT_TOL
        if not bad.any():
            return g
        slope = 1.0 + epsilon * np.asarray(spec.beta_prime(g))
        step = res / slope
        # keep iterates inside the monotone bracket [min(0,r), max(0,r)]
        g = np.clip(g - step, np.minimum(0.0, r), np.maximum(0.0, r))
    res = g + epsilon * np.asarray(spec.beta(g)) - r
    bad = np.abs(res) > _RESOLVENT_TOL
    if bad.any():
        flat = np.flatnonzero(bad)
        g_flat = g.reshape(-1)
        r_flat = r.reshape(-1)
        for i in flat:
            g_flat[i] = yosida_resolvent(spec, epsilon, r_flat[i])
        g = g_flat.reshape(g.shape)
    return g


def beta_epsilon(spec: NonlinearitySpec, epsilon: float, r):
    """beta_eps(r) = beta(g_eps(r)) = (r - g_eps(r))/epsilon."""
    if np.ndim(r) == 0:
        return float(spec.beta(yosida_resolvent(spec, epsilon, r)))
    return np.asarray(spec.beta(yosida_resolvent_array(spec, epsilon, r)))


def beta_tilde_epsilon(spec: NonlinearitySpec, epsilon: float, r):
    """beta_tilde_eps(r) = beta_eps(r) + epsilon*r; strictly increasing, slope >= epsilon."""
    if np.ndim(r) == 0:
        return beta_epsilon(spec, epsilon, r) + epsilon * float(r)
    return beta_epsilon(spec, epsilon, r) + epsilon * np.asarray(r, dtype=float)


def beta_tilde_epsilon_prime(spec: NonlinearitySpec, epsilon: float, r):
    """Derivative of beta_tilde_eps: beta'(g)/(1 + eps*beta'(g)) + eps."""
    if np.ndim(r) == 0:
        g = yosida_resolvent(spec, epsilon, r)
        bp = spec.beta_prime(g)
        return bp / (1.0 + epsilon * bp) + epsilon
    g = yosida_resolvent_array(spec, epsilon, r)
    bp = np.asarray(spec.beta_prime(g))
    return bp / (1.0 + epsilon * bp) + epsilon


# ---------------------------------------------------------------------------
# drift regularization
# ---------------------------------------------------------------------------

# fixed polynomial bump (1 - (r/w)^2)^2, normalized on [-w, w]
_BUMP_NODES, _BUMP_WEIGHTS = np.polynomial.legendre.leggauss(24)


def _bump_quadrature(width: float):
    y = _BUMP_NODES * width
    w = _BUMP_WEIGHTS * width
    rho = (1.0 - (y / width) ** 2) ** 2
    rho /= np.sum(w * rho)
    return y, w * rho


def mollified_b(drift: DriftSpec, epsilon: float, r):
    """Damped mollification b_eps(r) = (b * rho_eps)(r) / (1 + eps*|r|).

    Constant b is returned untouched.  The mollifier is the compactly
    supported polynomial bump of width eps, so no tail truncation enters.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    arr = np.asarray(r, dtype=float)
    if drift.b_is_constant:
        out = np.asarray(drift.b(arr), dtype=float)
        return out if out.ndim else float(out)
    y, w = _bump_quadrature(epsilon)
    vals = np.asarray(drift.b(arr[..., None] - y), dtype=float)
    conv = vals @ w
    out = conv / (1.0 + epsilon * np.abs(arr))
    return out if out.ndim else float(out)


def mollified_b_prime(drift: DriftSpec, epsilon: float, r):
    """d/dr of the damped mollification (central difference; Jacobian use only)."""
    if drift.b_is_constant:
        return np.zeros_like(np.asarray(r, dtype=float))
    step = 1e-6 * max(1.0, epsilon)
    return (np.asarray(mollified_b(drift, epsilon, np.asarray(r) + step))
            - np.asarray(mollified_b(drift, epsilon, np.asarray(r) - step))) / (2 * step)


def cutoff_E(drift: DriftSpec, epsilon: float, x):
    """eta_eps(x) E(x) with a C0 ramp: 1 on [0, 1/eps], linear to 0 on [1/eps, 1/eps + 1].

    A field flagged square-integrable with div E in L2 + Linf needs no
    truncation and is returned unchanged.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    arr = np.asarray(x, dtype=float)
    ev = np.asarray(drift.E(arr), dtype=float)
    if drift.e_square_integrable:
        return ev if ev.ndim else float(ev)
    radius = 1.0 / epsilon
    ramp = np.clip(radius + 1.0 - np.abs(arr), 0.0, 1.0)
    out = ramp * ev
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# scalar functionals
# ---------------------------------------------------------------------------

def capital_G(spec: NonlinearitySpec, r: float) -> float:
    """G(r) = integral_0^r (beta^{-1}(s^2))^{-zeta} ds, r >= 0.

    The integrand has the integrable singularity s^{-2*zeta/m} at 0; for the
    power law the exact antiderivative is used, otherwise adaptive quadrature
    with the singular endpoint declared.
    """
    if r < 0:
        raise ValueError("G is defined for r >= 0")
    expo = 2.0 * spec.zeta / spec.m
    if expo >= 1.0:
        raise ValueError("2*zeta/m >= 1 makes G divergent")
    if r == 0.0:
        return 0.0
    if spec.zeta == 0.0:
        return float(r)
    if spec.kind == "power_law":
        return r ** (1.0 - expo) / (1.0 - expo)

    def integrand(s):
        if s <= 0:
            return 0.0
        inv = max(float(spec.beta_inverse(s * s)), 0.0)   # root solve can undershoot 0
        return inv ** (-spec.zeta) if inv > 0 else 0.0

    val, _ = integrate.quad(integrand, 0.0, r, points=[0.0], limit=200)
    return val


def capital_G_inverse(spec: NonlinearitySpec, y: float) -> float:
    """Inverse of G by root solve; satisfies G(G^{-1}(y)) = y to 1e-10."""
    if y < 0:
        raise ValueError("G^{-1} is defined for y >= 0")
    if y == 0.0:
        return 0.0
    expo = 2.0 * spec.zeta / spec.m
    if spec.kind == "power_law":
        return (y * (1.0 - expo)) ** (1.0 / (1.0 - expo))
    hi = 1.0
    while capital_G(spec, hi) < y:
        hi *= 2.0
        if hi > 1e12:
            raise ValueError("G^{-1} bracket exceeded numeric range")
    return optimize.brentq(lambda r: capital_G(spec, r) - y, 0.0, hi, xtol=1e-13)


def entropy_Psi(spec: NonlinearitySpec, r) -> float:
    """Psi(r) = integral_0^r ln(beta(s)) ds, with Psi(0) = 0.

    For the power law the logarithmic singularity integrates exactly to
    m*r*(ln r - 1); a custom beta goes through adaptive quadrature.
    Accepts arrays (used by the field-level entropy sums).
    """
    arr = np.asarray(r, dtype=float)
    if np.any(arr < 0):
        raise ValueError("Psi is defined for r >= 0")
    if spec.kind == "power_law":
        out = np.zeros_like(arr)
        pos = arr > 0
        out[pos] = spec.m * arr[pos] * (np.log(arr[pos]) - 1.0)
        return out if out.ndim else float(out)
    scalar = arr.ndim == 0
    flat = np.atleast_1d(arr)
    out = np.empty_like(flat)
    for i, ri in enumerate(flat):
        if ri == 0.0:
            out[i] = 0.0
        else:
            out[i], _ = integrate.quad(
                lambda s: math.log(float(spec.beta(s))) if s > 0 else 0.0,
                0.0, ri, points=[0.0], limit=200)
    return float(out[0]) if scalar else out.reshape(arr.shape)


def lambda_zero(drift: DriftSpec) -> float:
    """Largest admissible resolvent step for the drifted problem.

    lambda_0 = (||(div E)^- + |E||| + ||(div E)^- + |E|||^{1/2} * ||b||)^{-1},
    +inf when the denominator vanishes (no step restriction without drift).
    """
    c = drift.combined_sup()
    denom = c + math.sqrt(c) * drift.sup_norm_b
    return math.inf if denom == 0.0 else 1.0 / denom


# ---------------------------------------------------------------------------
# hypotheses checker
# ---------------------------------------------------------------------------

@dataclass
class HypothesesReport:
    """Pass/fail per sampled clause, with numeric witnesses."""

    clauses: dict

    def passed(self, name: str) -> bool:
        return self.clauses[name]["pass"]

    def all_passed(self) -> bool:
        return all(c["pass"] for c in self.clauses.values())


def check_hypotheses(spec: NonlinearitySpec, drift: DriftSpec,
                     k_grid=(0.5, 1.0, 2.0, 5.0), n_samples: int = 400) -> HypothesesReport:
    """Sample the growth/positivity/compatibility clauses and report witnesses.

    The Lipschitz clause for b o (G o beta^{1/2})^{-1} is checked on a compact
    grid only and is advisory; no constructive criterion exists for general b.
    """
    clauses = {}

    # growth envelope of beta on [0, K]: a_K r^(m-1) <= beta'(r), beta(r) <= C_K r^m
    for K in k_grid:
        r = np.linspace(0.0, K, n_samples)[1:]
        lower = np.asarray(spec.beta_prime(r)) / r ** (spec.m - 1.0)
        upper = np.asarray(spec.beta(r)) / r ** spec.m
        a_K = float(np.min(lower))
        C_K = float(np.max(upper))
        clauses[f"beta_envelope_K={K:g}"] = {
            "pass": bool(a_K > 0 and np.isfinite(C_K)),
            "a_K": a_K, "C_K": C_K,
        }

    # b bounded, C1, nonnegative
    r = np.linspace(-10.0, 10.0, n_samples)
    b_vals = np.asarray(drift.b(r), dtype=float)
    clauses["b_nonnegative"] = {"pass": bool(np.all(b_vals >= 0)),
                                "min_b": float(np.min(b_vals))}
    sup_b = float(np.max(np.abs(b_vals)))
    clauses["b_bounded"] = {
        "pass": bool(sup_b <= drift.sup_norm_b * (1 + 1e-9) + 1e-12),
        "sampled_sup": sup_b, "declared_sup": drift.sup_norm_b,
    }

    # monomial criterion near 0: b(r) = r^l needs l >= m/2 - zeta
    if drift.b_monomial_degree is not None:
        threshold = spec.m / 2.0 - spec.zeta
        clauses["b_monomial_degree"] = {
            "pass": bool(drift.b_monomial_degree >= threshold - 1e-12),
            "l": drift.b_monomial_degree, "threshold": threshold,
        }

    # advisory: local Lipschitz quotients of b o (G o beta^{1/2})^{-1}
    rr = np.linspace(0.0, 2.0, n_samples)
    y = np.array([capital_G(spec, math.sqrt(float(spec.beta(v)))) for v in rr])
    bv = np.asarray(drift.b(rr), dtype=float)
    dy = np.diff(y)
    quot = np.abs(np.diff(bv))[dy > 0] / dy[dy > 0]
    max_quot = float(np.max(quot)) if quot.size else 0.0
    clauses["b_compat_lipschitz"] = {"pass": bool(np.isfinite(max_quot)),
                                     "max_quotient": max_quot, "advisory": True}

    # monotonicity surrogate for E when an iota witness is stored
    if drift.iota is not None:
        rng = np.random.default_rng(0)
        R = 5.0
        x = rng.uniform(-R, R, 200)
        ypts = rng.uniform(-R, R, 200)
        Ex = np.asarray(drift.E(x), dtype=float)
        Ey = np.asarray(drift.E(ypts), dtype=float)
        iot = np.asarray(drift.iota(x), dtype=float) + np.asarray(drift.iota(ypts), dtype=float)
        lhs = (Ex - Ey) * (x - ypts)
        rhs = iot * (x - ypts) ** 2
        clauses["E_monotonicity_surrogate"] = {
            "pass": bool(np.all(lhs <= rhs + 1e-12)),
            "max_excess": float(np.max(lhs - rhs)),
        }

    return HypothesesReport(clauses=clauses)
