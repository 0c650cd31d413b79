"""Model parameters and Hermite coefficients of the activation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special

__all__ = [
    "ModelConfig",
    "Activation",
    "ACTIVATIONS",
    "get_activation",
    "hermite_coefficients",
    "NonCenteredActivationError",
    "QuadratureError",
]


class NonCenteredActivationError(ValueError):
    """The activation has a nonzero gaussian mean."""


class QuadratureError(ArithmeticError):
    """Gaussian quadrature produced an inconsistent second moment."""


@dataclass(frozen=True)
class ModelConfig:
    """Parameters of the random feature model in the proportional limit.

    ``psi = N/d`` and ``phi = n/d``; ``c`` and ``delta`` are derived.
    """

    mu: float
    nu: float
    psi: float
    phi: float
    r: float = 0.0
    s: float = 0.0
    lam: float = 0.0
    c: float = field(init=False)
    delta: float = field(init=False)

    def __post_init__(self):
        for name in ("mu", "nu", "psi", "phi", "r", "s", "lam"):
            val = float(getattr(self, name))
            if not math.isfinite(val):
                raise ValueError(f"{name} must be finite, got {val}")
            object.__setattr__(self, name, val)
        if self.psi <= 0 or self.phi <= 0:
            raise ValueError("psi and phi must be positive")
        if self.nu < 0 or self.r < 0 or self.s < 0 or self.lam < 0:
            raise ValueError("nu, r, s and lambda must be nonnegative")
        object.__setattr__(self, "c", self.phi / self.psi)
        object.__setattr__(self, "delta", self.c * self.lam)

    @property
    def scale(self) -> float:
        """Gaussian second moment of the activation, ``mu^2 + nu^2``."""
        return self.mu**2 + self.nu**2

    def replace(self, **changes) -> "ModelConfig":
        params = self.as_dict()
        for key, val in changes.items():
            if key == "lambda":
                key = "lam"
            if key not in params:
                raise TypeError(f"unknown parameter {key!r}")
            params[key] = val
        return ModelConfig(**params)

    def as_dict(self) -> dict:
        return {
            "mu": self.mu,
            "nu": self.nu,
            "psi": self.psi,
            "phi": self.phi,
            "r": self.r,
            "s": self.s,
            "lam": self.lam,
        }

    def spectrum_bound(self) -> float:
        """Upper bound on the limiting top eigenvalue of ``Z^T Z / N``."""
        c = self.c
        window = 4.0 * self.scale * (1.0 + math.sqrt(max(c, 1.0 / c))) ** 2
        # operator-norm bound on mu X Theta^T / sqrt(dN) + nu Omega / sqrt(N)
        op = abs(self.mu) * (1 + math.sqrt(self.phi)) * (1 + math.sqrt(self.psi)) / math.sqrt(self.psi)
        op += self.nu * (1 + math.sqrt(c))
        return max(window, 1.1 * op**2)


@dataclass(frozen=True)
class Activation:
    """A scalar activation function.

    ``bounds`` limits the integration range used when the function has
    kinks (``breakpoints``); smooth functions use Gauss-Hermite nodes.
    """

    func: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"
    bounds: tuple[float, float] = (-14.0, 14.0)
    breakpoints: tuple[float, ...] = ()

    def __call__(self, x):
        return self.func(x)


_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _relu_centered(x):
    return np.maximum(x, 0.0) - _INV_SQRT_2PI


def _hermite2(mu: float, nu: float) -> Activation:
    def f(x):
        return mu * x + nu * (x * x - 1.0) / math.sqrt(2.0)

    return Activation(f, name=f"hermite2:{mu:g},{nu:g}")


ACTIVATIONS: dict[str, Activation] = {
    "identity": Activation(lambda x: np.asarray(x, dtype=float), name="identity"),
    "relu-centered": Activation(_relu_centered, name="relu-centered", breakpoints=(0.0,)),
    "tanh": Activation(np.tanh, name="tanh"),
    "tanh5": Activation(lambda x: np.tanh(5.0 * x), name="tanh5", breakpoints=(0.0,)),
}


def get_activation(name: str) -> Activation:
    """Look up a named activation.

    ``hermite2:MU,NU`` builds ``MU*x + NU*(x^2-1)/sqrt(2)``, which has
    exactly the Hermite coefficients ``(MU, NU)``.
    """
    if name.startswith("hermite2:"):
        mu, nu = (float(v) for v in name.split(":", 1)[1].split(","))
        return _hermite2(mu, nu)
    try:
        return ACTIVATIONS[name]
    except KeyError:
        known = ", ".join(sorted(ACTIVATIONS)) + ", hermite2:MU,NU"
        raise KeyError(f"unknown activation {name!r}; known: {known}") from None


def _gauss_nodes(activation: Activation, nodes: int):
    if not activation.breakpoints:
        x, w = special.roots_hermitenorm(nodes)
        return x, w * _INV_SQRT_2PI
    lo, hi = activation.bounds
    cuts = [lo, *sorted(b for b in activation.breakpoints if lo < b < hi), hi]
    gx, gw = np.polynomial.legendre.leggauss(nodes)
    xs, ws = [], []
    for a, b in zip(cuts[:-1], cuts[1:]):
        half = 0.5 * (b - a)
        xi = a + half * (gx + 1.0)
        xs.append(xi)
        ws.append(gw * half * _INV_SQRT_2PI * np.exp(-0.5 * xi * xi))
    return np.concatenate(xs), np.concatenate(ws)


def hermite_coefficients(
    activation: Activation | Callable, nodes: int = 200, *, tol: float = 1e-6
) -> tuple[float, float, float]:
    """Return ``(mu, nu, mean)`` of an activation under the standard gaussian.

    ``mu = <sigma, x>`` and ``nu = sqrt(<sigma, sigma> - mu^2)``.  A nonzero
    mean (beyond ``tol``) is rejected, since the model assumes a centered
    activation.
    """
    if nodes < 32:
        raise ValueError("nodes must be at least 32")
    if not isinstance(activation, Activation):
        activation = Activation(activation)
    x, w = _gauss_nodes(activation, nodes)
    fx = np.asarray(activation(x), dtype=float)
    mean = float(w @ fx)
    mu = float(w @ (x * fx))
    second = float(w @ (fx * fx))
    if abs(mean) > tol:
        raise NonCenteredActivationError(
            f"activation {activation.name!r} has gaussian mean {mean:.3e}; center it first"
        )
    radicand = second - mu * mu
    if radicand < 1e-12 * max(second, 1.0):
        # round-off floor: a purely linear activation has no orthogonal energy
        if radicand < -1e-10 * max(second, 1.0):
            raise QuadratureError(f"negative orthogonal energy {radicand:.3e}")
        radicand = 0.0
    return mu, math.sqrt(radicand), mean
