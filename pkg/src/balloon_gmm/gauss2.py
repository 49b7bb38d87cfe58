"""Exact bivariate Gaussian and kernel algebra.

Symmetric 2x2 matrices are stored as three scalars (a, b, c) standing for
[[a, b], [b, c]] and are inverted / decomposed with closed forms only, so
every operation is deterministic and exact to rounding; no linear-algebra
library is involved. Reductions over mixture components or samples use
exactly-rounded summation (math.fsum) in fixed index order.

All values are immutable; every function here is pure and thread-safe.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

__all__ = [
    "SingularMatrixError",
    "Vec2",
    "SpdMat2",
    "GaussComponent",
    "MixtureModel",
    "SampleSet",
    "ProductParams",
    "gauss_pdf",
    "kernel_eval",
    "product_params",
    "overlap_prob",
    "total_overlap",
    "mixture_pdf",
    "log_likelihood",
]

TWO_PI = 2.0 * math.pi

#: a matrix whose determinant is at or below this is treated as singular
DET_FLOOR = 1e-300


class SingularMatrixError(ValueError):
    """An operation required a positive-definite matrix and did not get one."""


@dataclass(frozen=True, slots=True)
class Vec2:
    """Point or displacement in the data plane."""

    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite coordinates ({self.x}, {self.y})")

    def __add__(self, other: "Vec2") -> "Vec2":
        return Vec2(self.x + other.x, self.y + other.y)

    def __sub__(self, other: "Vec2") -> "Vec2":
        return Vec2(self.x - other.x, self.y - other.y)

    def norm(self) -> float:
        return math.hypot(self.x, self.y)


@dataclass(frozen=True, slots=True)
class SpdMat2:
    """Symmetric 2x2 matrix [[a, b], [b, c]] with closed-form algebra.

    Covariances and kernel matrices live here. Positive-definiteness is
    enforced at the point of inversion (`a > 0` and `det > DET_FLOOR`),
    not at construction, so the same container can hold transient
    indefinite values such as the additive M-step corrections.
    """

    a: float
    b: float
    c: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.a) and math.isfinite(self.b) and math.isfinite(self.c)):
            raise ValueError(f"non-finite matrix entries ({self.a}, {self.b}, {self.c})")

    @staticmethod
    def identity() -> "SpdMat2":
        return SpdMat2(1.0, 0.0, 1.0)

    @staticmethod
    def isotropic(variance: float) -> "SpdMat2":
        return SpdMat2(variance, 0.0, variance)

    def det(self) -> float:
        return self.a * self.c - self.b * self.b

    def trace(self) -> float:
        return self.a + self.c

    def is_pd(self) -> bool:
        return self.a > 0.0 and self.det() > DET_FLOOR

    def require_pd(self, what: str = "matrix") -> None:
        if not self.is_pd():
            raise SingularMatrixError(
                f"{what} [[{self.a}, {self.b}], [{self.b}, {self.c}]] is not positive-definite"
            )

    def inv(self, what: str = "matrix") -> "SpdMat2":
        self.require_pd(what)
        d = self.det()
        return SpdMat2(self.c / d, -self.b / d, self.a / d)

    def matvec(self, v: Vec2) -> Vec2:
        return Vec2(self.a * v.x + self.b * v.y, self.b * v.x + self.c * v.y)

    def quad(self, v: Vec2) -> float:
        """Quadratic form v' M v of this matrix."""
        return self.a * v.x * v.x + 2.0 * self.b * v.x * v.y + self.c * v.y * v.y

    def __add__(self, other: "SpdMat2") -> "SpdMat2":
        return SpdMat2(self.a + other.a, self.b + other.b, self.c + other.c)

    def __sub__(self, other: "SpdMat2") -> "SpdMat2":
        return SpdMat2(self.a - other.a, self.b - other.b, self.c - other.c)

    def scaled(self, s: float) -> "SpdMat2":
        return SpdMat2(s * self.a, s * self.b, s * self.c)

    def eig(self) -> tuple[float, float, float]:
        """Closed-form eigendecomposition as (lmax, lmin, angle).

        `angle` is the direction (radians, CCW from +x) of the eigenvector
        belonging to `lmax`.
        """
        mid = 0.5 * (self.a + self.c)
        rad = math.hypot(0.5 * (self.a - self.c), self.b)
        angle = 0.5 * math.atan2(2.0 * self.b, self.a - self.c)
        return mid + rad, mid - rad, angle


@dataclass(frozen=True, slots=True)
class GaussComponent:
    """One mixture term: prior weight, mean and covariance."""

    weight: float
    mean: Vec2
    cov: SpdMat2

    def __post_init__(self) -> None:
        if not math.isfinite(self.weight) or self.weight < 0.0:
            raise ValueError(f"component weight {self.weight} is not a probability")


@dataclass(frozen=True, slots=True)
class MixtureModel:
    """Ordered Gaussian mixture; weights sum to one.

    Component order is part of the value: all operations preserve it, which
    keeps downstream results bit-reproducible.
    """

    components: tuple[GaussComponent, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "components", tuple(self.components))
        if not self.components:
            raise ValueError("mixture has no components")

    def __len__(self) -> int:
        return len(self.components)

    def __iter__(self):
        return iter(self.components)

    def __getitem__(self, m: int) -> GaussComponent:
        return self.components[m]

    def weight_sum(self) -> float:
        return math.fsum(c.weight for c in self.components)

    def validate(self, weight_atol: float = 1e-9) -> None:
        s = self.weight_sum()
        if abs(s - 1.0) > weight_atol:
            raise ValueError(f"mixture weights sum to {s}, not 1")
        for m, comp in enumerate(self.components):
            comp.cov.require_pd(f"covariance of component {m}")


@dataclass(frozen=True, slots=True)
class SampleSet:
    """Ordered 2-D samples with bounding-box metadata."""

    points: tuple[Vec2, ...]

    def __post_init__(self) -> None:
        pts = tuple(self.points)
        if not pts:
            raise ValueError("sample set is empty")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def __getitem__(self, n: int) -> Vec2:
        return self.points[n]

    def bbox(self) -> tuple[Vec2, Vec2]:
        xs = [p.x for p in self.points]
        ys = [p.y for p in self.points]
        return Vec2(min(xs), min(ys)), Vec2(max(xs), max(ys))

    def bbox_diag(self) -> float:
        lo, hi = self.bbox()
        return math.hypot(hi.x - lo.x, hi.y - lo.y)


@dataclass(frozen=True, slots=True)
class ProductParams:
    """Covariance and mean of a Gaussian-times-kernel product."""

    cov: SpdMat2
    mean: Vec2


def gauss_pdf(x: Vec2, mean: Vec2, cov: SpdMat2) -> float:
    """Density of N(x | mean, cov) = exp(-d' cov^{-1} d / 2) / (2 pi sqrt|cov|), d = x - mean."""
    inv = cov.inv("covariance")
    d = x - mean
    return math.exp(-0.5 * inv.quad(d)) / (TWO_PI * math.sqrt(cov.det()))


def kernel_eval(r: Vec2, center: Vec2, kernel: SpdMat2) -> float:
    """Peak-normalized kernel exp(-d' kernel^{-1} d / 2), d = r - center; equals 1 at the center."""
    return math.exp(-0.5 * kernel.inv("kernel matrix").quad(r - center))


def product_params(mean: Vec2, cov: SpdMat2, center: Vec2, kernel: SpdMat2) -> ProductParams:
    """Parameters of the product N(r | mean, cov) * K(r | center, kernel).

    The product is an unnormalized Gaussian with

        cov_out  = (cov^{-1} + kernel^{-1})^{-1}
        mean_out = cov_out (cov^{-1} mean + kernel^{-1} center)

    `cov_out` precedes both inputs in the PSD order.
    """
    ci = cov.inv("covariance")
    ki = kernel.inv("kernel matrix")
    out_cov = (ci + ki).inv("precision sum")
    v = ci.matvec(mean) + ki.matvec(center)
    return ProductParams(cov=out_cov, mean=out_cov.matvec(v))


def overlap_prob(component: GaussComponent, center: Vec2, kernel: SpdMat2) -> float:
    """Probability mass of one component captured by a unit-peak kernel.

    weight * sqrt(|kernel| / |cov + kernel|) * K(center | mean, cov + kernel);
    always in [0, weight].
    """
    kernel.require_pd("kernel matrix")
    combined = component.cov + kernel
    return (
        component.weight
        * math.sqrt(kernel.det() / combined.det())
        * kernel_eval(center, component.mean, combined)
    )


def total_overlap(model: MixtureModel, center: Vec2, kernel: SpdMat2) -> float:
    """Mixture mass captured by a unit-peak kernel; strictly below 1 for finite kernels."""
    return math.fsum(overlap_prob(comp, center, kernel) for comp in model)


def mixture_pdf(model: MixtureModel, x: Vec2) -> float:
    """Mixture density sum_m weight_m * N(x | mean_m, cov_m)."""
    return math.fsum(comp.weight * gauss_pdf(x, comp.mean, comp.cov) for comp in model)


def log_likelihood(model: MixtureModel, samples: SampleSet) -> float:
    """Sum of log mixture densities over the samples.

    A sample with zero density makes the result -inf; the first such sample
    index is reported through a warning.
    """
    logs = []
    for n, x in enumerate(samples):
        f = mixture_pdf(model, x)
        if f <= 0.0:
            warnings.warn(f"zero mixture density at sample {n}; log-likelihood is -inf")
            return -math.inf
        logs.append(math.log(f))
    return math.fsum(logs)
