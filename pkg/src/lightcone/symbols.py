"""Scalar profile functions and the :class:`SymbolFunction` wrapper.

The smooth bump ``f`` lives on ``(1, 2)`` and is normalised to unit mass, so the
light-cone cutoff ``F(s) = int_{-inf}^s f`` rises from 0 on ``(-inf, 1]`` to 1 on
``[2, inf)``.  Every other profile used by the package (the low-pass ``h``, the
transform profile ``phi`` and ``J_beta``) is assembled from the same bump so
that all derivatives are available in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
import sympy
from scipy.special import roots_legendre

_GL_NODES, _GL_WEIGHTS = roots_legendre(80)
_MAX_ORDER = 5


@lru_cache(maxsize=None)
def _bump_derivative_funcs() -> tuple[Callable, ...]:
    tau = sympy.Symbol("tau", real=True)
    expr = sympy.exp(-1 / ((tau - 1) * (2 - tau)))
    funcs = []
    for n in range(_MAX_ORDER + 1):
        funcs.append(sympy.lambdify(tau, sympy.diff(expr, tau, n), "numpy"))
    return tuple(funcs)


def _raw_bump(tau: np.ndarray, n: int = 0) -> np.ndarray:
    tau = np.asarray(tau, dtype=float)
    out = np.zeros_like(tau)
    inside = (tau > 1.0) & (tau < 2.0)
    if np.any(inside):
        with np.errstate(over="ignore", under="ignore", invalid="ignore", divide="ignore"):
            vals = _bump_derivative_funcs()[n](tau[inside])
        out[inside] = np.nan_to_num(vals, nan=0.0, posinf=0.0, neginf=0.0)
    return out


def _gl_integral(integrand: Callable[[np.ndarray], np.ndarray], lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Vectorised 80-point Gauss-Legendre integral over ``[lo, hi]`` (elementwise)."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    half = 0.5 * (hi - lo)
    nodes = lo[..., None] + half[..., None] * (_GL_NODES + 1.0)
    return (half[..., None] * _GL_WEIGHTS * integrand(nodes)).sum(axis=-1)


BUMP_MASS = float(_gl_integral(_raw_bump, np.array(1.0), np.array(2.0)))


def bump(tau, n: int = 0) -> np.ndarray:
    """Unit-mass bump ``f`` supported in ``[1, 2]`` and its ``n``-th derivative."""
    return _raw_bump(tau, n) / BUMP_MASS


def cutoff_F(s, n: int = 0) -> np.ndarray:
    """``F(s) = int_{-inf}^s f``; ``n``-th derivative for ``n >= 1`` is ``f^(n-1)``."""
    s = np.asarray(s, dtype=float)
    if n > 0:
        return bump(s, n - 1)
    out = np.where(s >= 2.0, 1.0, 0.0)
    mid = (s > 1.0) & (s < 2.0)
    if np.any(mid):
        out = out.astype(float)
        out[mid] = _gl_integral(bump, np.ones(mid.sum()), s[mid])
    return out


def lowpass_h(s, n: int = 0) -> np.ndarray:
    """Smooth decreasing ``h`` with ``h = 1`` on ``[0, 1]`` and ``h = 0`` on ``[2, inf)``."""
    if n == 0:
        return 1.0 - cutoff_F(s)
    return -cutoff_F(s, n)


def _first_moment_F(s: np.ndarray) -> np.ndarray:
    """``int_1^s F(tau) dtau`` for ``1 <= s <= 2`` via ``int_1^s (s - tau) f(tau) dtau``."""
    s = np.asarray(s, dtype=float)
    return _gl_integral(lambda tau: (s[..., None] - tau) * bump(tau), np.ones_like(s), s)


def plateau_m(r, n: int = 0) -> np.ndarray:
    """Derivative profile of ``phi``: 1 on ``[-1/2, 1/2]``, 0 outside ``(-1, 1)``.

    ``m(r) = h(2|r|) + f(2|r|) / 2`` which integrates to exactly 1/2 over
    ``[1/2, 1]``; ``m >= 0`` everywhere.
    """
    r = np.asarray(r, dtype=float)
    a = np.abs(r)
    if n == 0:
        return lowpass_h(2.0 * a) + 0.5 * bump(2.0 * a)
    sign = np.sign(r) ** n
    return sign * (2.0**n) * (lowpass_h(2.0 * a, n) + 0.5 * bump(2.0 * a, n))


def transform_phi(r, n: int = 0) -> np.ndarray:
    """Non-decreasing ``phi`` with ``phi(r) = r`` on ``|r| <= 1/2`` and ``|phi| = 1`` on ``|r| >= 1``."""
    r = np.asarray(r, dtype=float)
    if n > 0:
        return plateau_m(r, n - 1)
    a = np.abs(r)
    out = np.minimum(a, 0.5)
    mid = (a > 0.5) & (a < 1.0)
    if np.any(mid):
        am = a[mid]
        out = out.astype(float)
        out[mid] = 0.5 + (am - 0.5) - 0.5 * _first_moment_F(2.0 * am) + 0.25 * cutoff_F(2.0 * am)
    out = np.where(a >= 1.0, 1.0, out)
    return np.sign(r) * out


def J_beta(s, beta: float, n: int = 0) -> np.ndarray:
    """``J_beta(s) = s**beta * F(sqrt(s))`` and its first two derivatives (zero for ``s < 1``)."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    on = s > 1.0
    if not np.any(on):
        return out
    x = s[on]
    r = np.sqrt(x)
    F0, F1, F2 = cutoff_F(r), cutoff_F(r, 1), cutoff_F(r, 2)
    if n == 0:
        out[on] = x**beta * F0
    elif n == 1:
        out[on] = beta * x ** (beta - 1) * F0 + 0.5 * x ** (beta - 0.5) * F1
    elif n == 2:
        out[on] = (
            beta * (beta - 1) * x ** (beta - 2) * F0
            + (beta - 0.25) * x ** (beta - 1.5) * F1
            + 0.25 * x ** (beta - 1) * F2
        )
    else:
        raise ValueError("J_beta derivatives implemented up to order 2")
    return out


def japanese_bracket(s, power: float = 1.0) -> np.ndarray:
    """``<s>^power = (1 + s^2)^(power/2)``."""
    s = np.asarray(s, dtype=float)
    return (1.0 + s * s) ** (0.5 * power)


# ---------------------------------------------------------------------------


KINDS = ("lightcone_F", "J_beta", "inverse_power_delta", "bracket_y_beta", "lowpass_h", "generic")
ARGUMENTS = ("abs", "v", "v2", "scaled")


@dataclass(frozen=True)
class SymbolFunction:
    """A real function of one real variable applied through the functional calculus.

    ``argument`` fixes how the diagonal variable of the grid is mapped into the
    evaluator: ``"abs"`` passes ``|y|`` (or ``|k|``) unchanged, ``"v"`` passes
    ``|y| / (c t)``, ``"v2"`` passes ``(|y| / (c t))**2`` and ``"scaled"`` passes
    ``t**nu * |k|``.
    """

    kind: str
    params: dict = field(default_factory=dict)
    fn: Callable[[np.ndarray, int], np.ndarray] | None = None
    argument: str = "abs"
    rho: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown symbol kind {self.kind!r}")
        if self.argument not in ARGUMENTS:
            raise ValueError(f"unknown argument mapping {self.argument!r}")
        if self.fn is None:
            raise ValueError("symbol needs an evaluator")

    def __call__(self, s) -> np.ndarray:
        return self.fn(np.asarray(s, dtype=float), 0)

    def derivative(self, s, n: int = 1) -> np.ndarray:
        return self.fn(np.asarray(s, dtype=float), n)

    def map_argument(self, radius: np.ndarray) -> np.ndarray:
        radius = np.asarray(radius, dtype=float)
        if self.argument == "abs":
            return radius
        if self.argument == "scaled":
            return self.params["t"] ** self.params["nu"] * radius
        ct = self.params["c"] * self.params["t"]
        if self.argument == "v":
            return radius / ct
        return (radius / ct) ** 2

    def on_radius(self, radius) -> np.ndarray:
        return self(self.map_argument(radius))


def _require_time(c: float, t: float) -> None:
    if t <= 0:
        raise ValueError(f"cone time must be positive, got t={t}")
    if c <= 0:
        raise ValueError(f"cone speed must be positive, got c={c}")


def lightcone_symbol(c: float, t: float) -> SymbolFunction:
    _require_time(c, t)
    return SymbolFunction("lightcone_F", {"c": c, "t": t}, cutoff_F, argument="v")


def J_beta_symbol(beta: float, c: float, t: float) -> SymbolFunction:
    _require_time(c, t)
    return SymbolFunction(
        "J_beta", {"beta": beta, "c": c, "t": t}, lambda s, n=0: J_beta(s, beta, n), argument="v2"
    )


def inverse_power_symbol(delta: float) -> SymbolFunction:
    def fn(s, n=0):
        coef = 1.0
        for j in range(n):
            coef *= -delta - j
        with np.errstate(divide="ignore"):
            return coef * np.abs(s) ** (-delta - n)

    return SymbolFunction("inverse_power_delta", {"delta": delta}, fn, argument="abs")


def bracket_symbol(beta: float) -> SymbolFunction:
    return generic_symbol(f"(1 + s**2)**({beta}/2)", rho=beta, kind="bracket_y_beta", params={"beta": beta})


def lowpass_symbol(nu: float, t: float) -> SymbolFunction:
    return SymbolFunction("lowpass_h", {"nu": nu, "t": t}, lowpass_h, argument="scaled")


def generic_symbol(
    expr: str,
    rho: float | None = None,
    argument: str = "abs",
    kind: str = "generic",
    params: dict | None = None,
    max_order: int = _MAX_ORDER,
) -> SymbolFunction:
    """Symbol from a sympy-parsable expression in ``s``; derivatives are exact."""
    s = sympy.Symbol("s", real=True)
    parsed = sympy.sympify(expr, locals={"s": s})
    funcs = [sympy.lambdify(s, sympy.diff(parsed, s, n), "numpy") for n in range(max_order + 1)]

    def fn(x, n=0):
        val = funcs[n](x)
        return np.broadcast_to(np.asarray(val, dtype=float), np.shape(x)).copy()

    p = {"expr": expr}
    if params:
        p.update(params)
    return SymbolFunction(kind, p, fn, argument=argument, rho=rho)


def symbol_class_constants(sf: SymbolFunction, rho: float, orders: int = 3, smax: float = 1e6):
    """Fit ``C_n = max |d^n f(s)| / <s>^(rho - n)`` on a log-spaced two-sided sample.

    Returns ``(constants, bounded)`` where ``bounded`` is False when the ratio on the
    outermost decade exceeds twice its maximum over the inner range, i.e. when the
    sampled decay is slower than the claimed class.
    """
    pos = np.concatenate([np.linspace(0.0, 10.0, 401), np.logspace(1, np.log10(smax), 400)])
    s = np.concatenate([-pos[::-1], pos])
    outer = np.abs(s) >= smax / 10
    constants, bounded = [], True
    for n in range(orders + 1):
        ratio = np.abs(sf.derivative(s, n)) / japanese_bracket(s, rho - n)
        inner_max = ratio[~outer].max()
        constants.append(float(ratio.max()))
        if ratio[outer].max() > 2.0 * max(inner_max, 1e-300):
            bounded = False
    return constants, bounded
