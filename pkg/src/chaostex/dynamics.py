"""One-dimensional chaotic maps on the unit interval and orbit statistics.

Three maps are supported:

* Logistic  ``x -> r x (1 - x)``                      (default r = 3.99)
* Tent      ``x -> mu x`` if x < 0.5 else ``mu (1 - x)``  (default mu = 2.0)
* Sine      ``x -> r sin(pi x)``                     (default r = 1.0)

All arithmetic is float64.  ``map_step`` and ``iterate`` accept scalars or
numpy arrays and are what the augmentation operator uses; the orbit
statistics (``lyapunov_estimate``, ``invariant_density``) are long sequential
loops over a single orbit.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

__all__ = [
    "MapKind",
    "ChaoticMapSpec",
    "OrbitStats",
    "DomainError",
    "DegenerateOrbitError",
    "map_step",
    "iterate",
    "derivative",
    "lyapunov_estimate",
    "invariant_density",
    "orbit_stats",
    "DEFAULT_BURN_IN",
]

DOMAIN_TOL = 1e-12
DEFAULT_BURN_IN = 1000

# Safe prime q = 2p + 1 with q % 8 == 3, so 2 generates (Z/q)* and the
# doubling tent map on the grid {a/q} has a period of p ~ 2**61.
_TENT_GRID_Q = 4611686018427394499


class DomainError(ValueError):
    """Raised when a map is evaluated outside [0, 1]."""


class DegenerateOrbitError(RuntimeError):
    """Raised when an orbit collapses and orbit statistics are meaningless."""


class MapKind(str, enum.Enum):
    LOGISTIC = "logistic"
    TENT = "tent"
    SINE = "sine"


_DEFAULT_PARAM = {MapKind.LOGISTIC: 3.99, MapKind.TENT: 2.0, MapKind.SINE: 1.0}
_PARAM_MAX = {MapKind.LOGISTIC: 4.0, MapKind.TENT: 2.0, MapKind.SINE: 1.0}


@dataclass(frozen=True)
class ChaoticMapSpec:
    """A chaotic map together with its control parameter.

    ``param`` is r for the logistic and sine maps and mu for the tent map.
    Leaving it as ``None`` selects the default for the kind.
    """

    kind: MapKind
    param: float | None = None

    def __post_init__(self):
        kind = MapKind(self.kind)
        object.__setattr__(self, "kind", kind)
        param = _DEFAULT_PARAM[kind] if self.param is None else float(self.param)
        if not (0.0 < param <= _PARAM_MAX[kind]):
            raise ValueError(
                f"{kind.value} parameter must lie in (0, {_PARAM_MAX[kind]}], got {param}"
            )
        object.__setattr__(self, "param", param)

    @classmethod
    def from_name(cls, name: str, param: float | None = None) -> "ChaoticMapSpec":
        return cls(MapKind(name.strip().lower()), param)

    @property
    def name(self) -> str:
        return self.kind.value


@dataclass(frozen=True)
class OrbitStats:
    lyapunov: float
    density: np.ndarray
    n_samples: int
    burn_in: int

    def __post_init__(self):
        if self.n_samples <= 0:
            raise ValueError("n_samples must be positive")
        if self.burn_in < 0:
            raise ValueError("burn_in must be non-negative")


def _check_domain(x):
    x = np.asarray(x, dtype=np.float64)
    if np.any(np.isnan(x)) or np.any(x < -DOMAIN_TOL) or np.any(x > 1.0 + DOMAIN_TOL):
        bad = x[(x < -DOMAIN_TOL) | (x > 1.0 + DOMAIN_TOL) | np.isnan(x)]
        raise DomainError(f"map input outside [0, 1]: {bad.ravel()[:5]}")
    return np.clip(x, 0.0, 1.0)


def _apply(spec: ChaoticMapSpec, x: np.ndarray) -> np.ndarray:
    p = spec.param
    if spec.kind is MapKind.LOGISTIC:
        y = p * x * (1.0 - x)
    elif spec.kind is MapKind.TENT:
        y = np.where(x < 0.5, p * x, p * (1.0 - x))
    else:
        y = p * np.sin(np.pi * x)
    if np.any(y < -DOMAIN_TOL) or np.any(y > 1.0 + DOMAIN_TOL):
        raise DomainError(f"{spec.name} map left [0, 1] beyond round-off")
    return np.clip(y, 0.0, 1.0)


def map_step(spec: ChaoticMapSpec, x):
    """Apply the map once.  Scalars in, float out; arrays in, arrays out."""
    scalar = np.ndim(x) == 0
    y = _apply(spec, _check_domain(x))
    return float(y) if scalar else y


def iterate(spec: ChaoticMapSpec, x0, k: int):
    """k-fold composition of :func:`map_step`; ``k == 0`` returns ``x0``."""
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    scalar = np.ndim(x0) == 0
    x = _check_domain(x0)
    for _ in range(k):
        x = _apply(spec, x)
    return float(x) if scalar else x


def derivative(spec: ChaoticMapSpec, x):
    """Analytic derivative of the map.  The tent map returns the right-hand
    slope at x = 0.5 (the upper branch owns that point)."""
    x = np.asarray(x, dtype=np.float64)
    p = spec.param
    if spec.kind is MapKind.LOGISTIC:
        return p * (1.0 - 2.0 * x)
    if spec.kind is MapKind.TENT:
        return np.where(x < 0.5, p, -p)
    return p * np.pi * np.cos(np.pi * x)


def _uses_tent_grid(spec: ChaoticMapSpec) -> bool:
    # mu = 2 only shifts mantissa bits; float orbits hit 0 within ~60 steps.
    return spec.kind is MapKind.TENT and spec.param == 2.0


def _tent_grid_orbit(x0: float, n: int, burn_in: int) -> np.ndarray:
    q = _TENT_GRID_Q
    a = round(Fraction(x0) * q)
    half = q // 2
    for _ in range(burn_in):
        a = 2 * a if a <= half else 2 * (q - a)
    out = np.empty(n, dtype=np.float64)
    for t in range(n):
        out[t] = a / q
        a = 2 * a if a <= half else 2 * (q - a)
    return out


def _float_orbit(spec: ChaoticMapSpec, x0: float, n: int, burn_in: int) -> np.ndarray:
    p = spec.param
    if spec.kind is MapKind.LOGISTIC:
        step = lambda x: p * x * (1.0 - x)  # noqa: E731
    elif spec.kind is MapKind.TENT:
        step = lambda x: p * x if x < 0.5 else p * (1.0 - x)  # noqa: E731
    else:
        step = lambda x: p * math.sin(math.pi * x)  # noqa: E731
    x = float(x0)
    for _ in range(burn_in):
        x = min(max(step(x), 0.0), 1.0)
    out = np.empty(n, dtype=np.float64)
    for t in range(n):
        out[t] = x
        x = min(max(step(x), 0.0), 1.0)
    return out


def _orbit(spec: ChaoticMapSpec, x0: float, n: int, burn_in: int) -> np.ndarray:
    _check_domain(x0)
    if _uses_tent_grid(spec):
        return _tent_grid_orbit(float(x0), n, burn_in)
    return _float_orbit(spec, float(x0), n, burn_in)


def lyapunov_estimate(
    spec: ChaoticMapSpec,
    x0: float,
    n_iter: int = 100_000,
    burn_in: int = DEFAULT_BURN_IN,
) -> float:
    """Orbit-average estimate of the Lyapunov exponent in nats/iteration.

    Averages ``ln|f'(x_t)|`` over ``n_iter`` post-burn-in points.  Points where
    the derivative is undefined (tent at 0.5) or exactly zero are skipped;
    if they make up more than 1% of the orbit, or the orbit sticks to a
    fixed point, the orbit is rejected as degenerate.
    """
    if n_iter < 10_000:
        raise ValueError(f"n_iter must be >= 1e4, got {n_iter}")
    if not 0.0 < x0 < 1.0:
        raise ValueError(f"x0 must lie in (0, 1), got {x0}")
    return _lyapunov_from_orbit(spec, _orbit(spec, x0, n_iter, burn_in), x0)


def _lyapunov_from_orbit(spec: ChaoticMapSpec, orbit: np.ndarray, x0: float) -> float:
    n = orbit.size
    if spec.kind is MapKind.TENT:
        # |f'| = mu on both branches; only x = 0.5 is excluded.
        used = int(np.count_nonzero(orbit != 0.5))
        total = used * math.log(spec.param)
    else:
        d = np.abs(derivative(spec, orbit))
        ok = d > 0.0
        used = int(np.count_nonzero(ok))
        total = 0.0
        for v in np.log(d[ok]).tolist():  # fixed sequential order
            total += v
    skipped = n - used
    if skipped > n // 100:
        raise DegenerateOrbitError(
            f"{spec.name}: {skipped} of {n} samples had zero/undefined derivative"
        )
    tail = orbit[-16:]
    if not _uses_tent_grid(spec) and np.all(tail == tail[0]):
        raise DegenerateOrbitError(f"{spec.name}: orbit from x0={x0} collapsed to {tail[0]}")
    return total / used


def invariant_density(
    spec: ChaoticMapSpec,
    x0: float,
    n_iter: int = 1_000_000,
    bins: int = 20,
    burn_in: int = DEFAULT_BURN_IN,
) -> np.ndarray:
    """Normalized occupancy histogram of the post-burn-in orbit over ``bins``
    equal-width bins of [0, 1]."""
    if n_iter < 100_000:
        raise ValueError(f"n_iter must be >= 1e5, got {n_iter}")
    if bins < 10:
        raise ValueError(f"bins must be >= 10, got {bins}")
    orbit = _orbit(spec, x0, n_iter, burn_in)
    return _histogram(orbit, bins)


def _histogram(orbit: np.ndarray, bins: int) -> np.ndarray:
    idx = np.minimum((orbit * bins).astype(np.int64), bins - 1)
    counts = np.bincount(idx, minlength=bins)
    return counts / counts.sum()


def orbit_stats(
    spec: ChaoticMapSpec,
    x0: float = 0.123,
    n_iter: int = 1_000_000,
    bins: int = 20,
    burn_in: int = DEFAULT_BURN_IN,
) -> OrbitStats:
    """Lyapunov exponent and invariant density from one shared orbit."""
    if not 0.0 < x0 < 1.0:
        raise ValueError(f"x0 must lie in (0, 1), got {x0}")
    orbit = _orbit(spec, x0, n_iter, burn_in)
    return OrbitStats(
        lyapunov=_lyapunov_from_orbit(spec, orbit, x0),
        density=_histogram(orbit, bins),
        n_samples=n_iter,
        burn_in=burn_in,
    )
