"""Singular interaction kernel k(x, y, z) = omega(x, y) |z|^(-d-alpha).

The weight omega is bounded, symmetric and strictly positive; the order
alpha lies strictly between 1 and 2.  ``validate_kernel`` samples point
pairs and checks exchange symmetry together with the two-sided comparability
bound c0 |z|^(-d-alpha) <= k <= C0 |z|^(-d-alpha).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

# omega(px, py, qx, qy) -> ndarray, vectorized over point coordinates
OmegaFn = Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray]

OMEGA_REGISTRY: dict[str, Callable[..., OmegaFn]] = {}


def register_omega(name: str):
    """Register a weight-function factory under a config-visible name."""

    def deco(factory):
        OMEGA_REGISTRY[name] = factory
        return factory

    return deco


@register_omega("constant")
def _constant_omega(value: float = 1.0) -> OmegaFn:
    value = float(value)

    def omega(px, py, qx, qy):
        return np.full(np.broadcast(px, qx).shape, value)

    return omega


@register_omega("sinusoidal")
def _sinusoidal_omega(amplitude: float = 0.5) -> OmegaFn:
    # 1 + amplitude*sin(x1 + y1); stays in [1-|a|, 1+|a|]
    amplitude = float(amplitude)
    if abs(amplitude) >= 1.0:
        raise ValueError("sinusoidal omega needs |amplitude| < 1 to stay positive")

    def omega(px, py, qx, qy):
        return 1.0 + amplitude * np.sin(px + qx)

    return omega


def make_omega(name: str, **params) -> OmegaFn:
    if name not in OMEGA_REGISTRY:
        raise ValueError(
            f"unknown omega '{name}'; registered: {sorted(OMEGA_REGISTRY)}"
        )
    return OMEGA_REGISTRY[name](**params)


@dataclass(frozen=True)
class KernelSpec:
    """Order, comparability constants and weight of the interaction kernel."""

    alpha: float
    c0: float = 1.0
    C0: float = 1.0
    omega: OmegaFn = field(default_factory=_constant_omega)
    omega_name: str = "constant"
    omega_params: tuple = ()
    d: int = 2

    def __post_init__(self):
        if not (1.0 < self.alpha < 2.0):
            raise ValueError("alpha must lie in (1,2)")
        if self.c0 <= 0 or self.C0 < self.c0:
            raise ValueError("require 0 < c0 <= C0")
        if self.d != 2:
            raise ValueError("only d = 2 is supported")


def make_kernel_spec(
    alpha: float,
    c0: float = 1.0,
    C0: float = 1.0,
    omega_name: str = "constant",
    **omega_params,
) -> KernelSpec:
    return KernelSpec(
        alpha=float(alpha),
        c0=float(c0),
        C0=float(C0),
        omega=make_omega(omega_name, **omega_params),
        omega_name=omega_name,
        omega_params=tuple(sorted(omega_params.items())),
    )


class SingularEvaluationError(ValueError):
    """Raised when the kernel is evaluated on the diagonal x = y."""


def eval_kernel(spec: KernelSpec, x, y) -> float:
    """Pointwise kernel value omega(x,y) |x-y|^(-d-alpha); x != y required."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dist = float(np.hypot(x[0] - y[0], x[1] - y[1]))
    if dist == 0.0:
        raise SingularEvaluationError("kernel is singular at x = y")
    w = float(spec.omega(x[0], x[1], y[0], y[1]))
    return w * dist ** (-(spec.d + spec.alpha))


@dataclass
class KernelValidationReport:
    passed: bool
    n_samples: int
    worst_low_ratio: float  # min over samples of k * |z|^(d+alpha)
    worst_high_ratio: float  # max over samples
    max_asymmetry: float  # max |k(x,y) - k(y,x)| relative
    failure: str | None = None
    offending_pair: tuple | None = None


def validate_kernel(
    spec: KernelSpec,
    n_samples: int,
    seed: int,
    domain: tuple[float, float] = (1.0, 1.0),
    rel_tol: float = 1e-12,
) -> KernelValidationReport:
    """Sample point pairs and check symmetry plus the two-sided bound.

    The reported ratios are k(x,y,x-y) |x-y|^(d+alpha), i.e. the sampled
    omega values; the bound holds iff they stay inside [c0, C0].
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    lx, ly = domain
    px = rng.uniform(0.0, lx, n_samples)
    py = rng.uniform(0.0, ly, n_samples)
    qx = rng.uniform(0.0, lx, n_samples)
    qy = rng.uniform(0.0, ly, n_samples)
    # re-draw coincident pairs (probability zero, but keep the contract)
    coincide = (px == qx) & (py == qy)
    while np.any(coincide):
        qx[coincide] = rng.uniform(0.0, lx, int(coincide.sum()))
        qy[coincide] = rng.uniform(0.0, ly, int(coincide.sum()))
        coincide = (px == qx) & (py == qy)

    ratios = np.asarray(spec.omega(px, py, qx, qy), dtype=float)
    ratios_swapped = np.asarray(spec.omega(qx, qy, px, py), dtype=float)
    scale = np.maximum(np.abs(ratios), np.abs(ratios_swapped))
    asym = np.abs(ratios - ratios_swapped) / np.maximum(scale, 1e-300)

    worst_low = float(ratios.min())
    worst_high = float(ratios.max())
    max_asym = float(asym.max())

    failure = None
    pair = None
    if max_asym > rel_tol:
        i = int(np.argmax(asym))
        failure = "symmetry"
        pair = ((px[i], py[i]), (qx[i], qy[i]))
    elif worst_low < spec.c0 * (1.0 - rel_tol):
        i = int(np.argmin(ratios))
        failure = "lower bound"
        pair = ((px[i], py[i]), (qx[i], qy[i]))
    elif worst_high > spec.C0 * (1.0 + rel_tol):
        i = int(np.argmax(ratios))
        failure = "upper bound"
        pair = ((px[i], py[i]), (qx[i], qy[i]))

    return KernelValidationReport(
        passed=failure is None,
        n_samples=n_samples,
        worst_low_ratio=worst_low,
        worst_high_ratio=worst_high,
        max_asymmetry=max_asym,
        failure=failure,
        offending_pair=pair,
    )
