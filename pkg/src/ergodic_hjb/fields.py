"""Coefficient field presets with exact analytic gradients.

Scalar fields (sources f, switching rates) come from a closed preset family:
constant, quadratic form, radial power and a trig-modulated radial power.
Keeping the family closed lets every field carry an exact gradient, which the
assumption audits and the feedback-control extraction rely on.

All evaluations broadcast over leading axes: ``x`` has shape ``(..., dim)``
and scalar fields return shape ``(...,)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CoefficientError, ParameterError


def _as_points(x: np.ndarray, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (dim,):
        raise ParameterError(f"point has trailing shape {x.shape[-1:]}, expected ({dim},)")
    return x


@dataclass(frozen=True)
class CoefficientField:
    """Scalar coefficient from the closed preset family.

    Forms
    -----
    constant:      c
    quadratic:     c0 + sum_i w_i x_i^2
    power_radial:  c |x|^exponent              (exponent > 1)
    trig_power:    c |x|^beta1 (2 + sin((1 + |x|^2)^beta2))   (beta1 > 1, beta2 > 0)
    """

    form: str
    dim: int
    c: float = 0.0
    weights: tuple[float, ...] = ()
    exponent: float = 0.0
    beta1: float = 0.0
    beta2: float = 0.0
    offset: float = 0.0

    def __post_init__(self):
        if self.form not in ("constant", "quadratic", "power_radial", "trig_power"):
            raise ParameterError(f"unknown coefficient form {self.form!r}")
        if self.form == "quadratic" and len(self.weights) != self.dim:
            raise ParameterError("quadratic form needs one weight per axis")
        if self.form == "power_radial" and self.exponent <= 1.0:
            raise ParameterError("radial power needs exponent > 1 for a defined gradient")
        if self.form == "trig_power" and (self.beta1 <= 1.0 or self.beta2 <= 0.0):
            raise ParameterError("trig-modulated power needs beta1 > 1 and beta2 > 0")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = _as_points(x, self.dim)
        r2 = np.sum(x * x, axis=-1)
        if self.form == "constant":
            return np.full(x.shape[:-1], self.c + self.offset)
        if self.form == "quadratic":
            w = np.asarray(self.weights)
            return self.c + self.offset + np.sum(w * x * x, axis=-1)
        if self.form == "power_radial":
            return self.offset + self.c * r2 ** (self.exponent / 2.0)
        phase = (1.0 + r2) ** self.beta2
        return self.offset + self.c * r2 ** (self.beta1 / 2.0) * (2.0 + np.sin(phase))

    def gradient(self, x: np.ndarray) -> np.ndarray:
        x = _as_points(x, self.dim)
        r2 = np.sum(x * x, axis=-1)
        if self.form == "constant":
            return np.zeros_like(x)
        if self.form == "quadratic":
            return 2.0 * np.asarray(self.weights) * x
        if self.form == "power_radial":
            # c * exponent * |x|^(exponent-2) * x, zero at the origin for exponent > 1
            fac = np.where(r2 > 0.0, r2, 1.0) ** (self.exponent / 2.0 - 1.0)
            fac = np.where(r2 > 0.0, fac, 0.0)
            return (self.c * self.exponent * fac)[..., None] * x
        phase = (1.0 + r2) ** self.beta2
        radial = np.where(r2 > 0.0, r2, 1.0)
        g1 = self.beta1 * radial ** (self.beta1 / 2.0 - 1.0) * (2.0 + np.sin(phase))
        g2 = r2 ** (self.beta1 / 2.0) * np.cos(phase) * self.beta2 * (1.0 + r2) ** (self.beta2 - 1.0) * 2.0
        fac = np.where(r2 > 0.0, self.c * (g1 + g2), 0.0)
        return fac[..., None] * x

    def scaled(self, s: float) -> "CoefficientField":
        if self.form == "quadratic":
            return replace(self, c=self.c * s, weights=tuple(w * s for w in self.weights),
                           offset=self.offset * s)
        return replace(self, c=self.c * s, offset=self.offset * s)

    def shifted(self, c: float) -> "CoefficientField":
        return replace(self, offset=self.offset + c)

    def to_dict(self) -> dict:
        d = {"form": self.form}
        if self.form == "constant":
            d["c"] = self.c
        elif self.form == "quadratic":
            d["c0"] = self.c
            d["weights"] = list(self.weights)
        elif self.form == "power_radial":
            d["c"] = self.c
            d["exponent"] = self.exponent
        else:
            d["c"] = self.c
            d["beta1"] = self.beta1
            d["beta2"] = self.beta2
        if self.offset:
            d["offset"] = self.offset
        return d

    @staticmethod
    def from_dict(d: dict, dim: int) -> "CoefficientField":
        form = d["form"]
        offset = float(d.get("offset", 0.0))
        if form == "constant":
            return CoefficientField("constant", dim, c=float(d["c"]), offset=offset)
        if form == "quadratic":
            return CoefficientField("quadratic", dim, c=float(d.get("c0", 0.0)),
                                    weights=tuple(float(w) for w in d["weights"]),
                                    offset=offset)
        if form == "power_radial":
            return CoefficientField("power_radial", dim, c=float(d["c"]),
                                    exponent=float(d["exponent"]), offset=offset)
        if form == "trig_power":
            return CoefficientField("trig_power", dim, c=float(d["c"]),
                                    beta1=float(d["beta1"]), beta2=float(d["beta2"]),
                                    offset=offset)
        raise ParameterError(f"unknown coefficient form {form!r}")


def constant(dim: int, c: float) -> CoefficientField:
    return CoefficientField("constant", dim, c=c)


def quadratic(dim: int, weights=None, c0: float = 0.0) -> CoefficientField:
    if weights is None:
        weights = (1.0,) * dim
    return CoefficientField("quadratic", dim, c=c0, weights=tuple(float(w) for w in weights))


def power_radial(dim: int, c: float, exponent: float) -> CoefficientField:
    return CoefficientField("power_radial", dim, c=c, exponent=exponent)


def trig_power(dim: int, beta1: float, beta2: float, c: float = 1.0) -> CoefficientField:
    return CoefficientField("trig_power", dim, c=c, beta1=beta1, beta2=beta2)


@dataclass(frozen=True)
class DriftField:
    """Bounded vector-valued drift entering the Hamiltonian as ``b(x) . p``.

    Only the constant preset is provided; it is enough to exercise the
    linear-in-p Hamiltonian term while keeping the Legendre pair exact.
    """

    dim: int
    value: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.value:
            object.__setattr__(self, "value", (0.0,) * self.dim)
        if len(self.value) != self.dim:
            raise ParameterError("drift vector length must match the dimension")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = _as_points(x, self.dim)
        return np.broadcast_to(np.asarray(self.value), x.shape).copy()

    @property
    def is_zero(self) -> bool:
        return all(v == 0.0 for v in self.value)

    def to_dict(self) -> dict:
        return {"form": "constant", "value": list(self.value)}

    @staticmethod
    def from_dict(d: dict, dim: int) -> "DriftField":
        if d.get("form", "constant") != "constant":
            raise ParameterError("drift supports only the constant preset")
        return DriftField(dim, tuple(float(v) for v in d["value"]))


@dataclass(frozen=True)
class MetricField:
    """Symmetric positive-definite metric a(x); presets: identity, constant SPD.

    ``matrix`` is stored row-major as a tuple of tuples so instances stay
    hashable and immutable.
    """

    dim: int
    matrix: tuple[tuple[float, ...], ...] | None = None  # None means identity
    _inv: np.ndarray = field(init=False, repr=False, compare=False, default=None)
    _eigbounds: tuple[float, float] = field(init=False, repr=False, compare=False, default=None)

    def __post_init__(self):
        if self.matrix is None:
            object.__setattr__(self, "_inv", np.eye(self.dim))
            object.__setattr__(self, "_eigbounds", (1.0, 1.0))
            return
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (self.dim, self.dim):
            raise CoefficientError(f"metric has shape {m.shape}, expected ({self.dim},{self.dim})")
        if not np.allclose(m, m.T, atol=1e-12):
            raise CoefficientError("metric must be symmetric")
        eig = np.linalg.eigvalsh(m)
        if eig.min() <= 0.0:
            raise CoefficientError(f"metric is not positive definite (eigenvalues {eig})")
        object.__setattr__(self, "_inv", np.linalg.inv(m))
        object.__setattr__(self, "_eigbounds", (float(eig.min()), float(eig.max())))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = _as_points(x, self.dim)
        m = np.eye(self.dim) if self.matrix is None else np.asarray(self.matrix)
        return np.broadcast_to(m, x.shape[:-1] + (self.dim, self.dim)).copy()

    def inverse(self, x: np.ndarray) -> np.ndarray:
        x = _as_points(x, self.dim)
        return np.broadcast_to(self._inv, x.shape[:-1] + (self.dim, self.dim)).copy()

    def eig_bounds(self) -> tuple[float, float]:
        """(smallest, largest) eigenvalue; uniform since presets are constant."""
        return self._eigbounds

    @property
    def is_identity(self) -> bool:
        return self.matrix is None

    def to_dict(self) -> dict:
        if self.matrix is None:
            return {"form": "identity"}
        return {"form": "constant_spd", "matrix": [list(r) for r in self.matrix]}

    @staticmethod
    def from_dict(d: dict, dim: int) -> "MetricField":
        form = d.get("form", "identity")
        if form == "identity":
            return MetricField(dim)
        if form == "constant_spd":
            return MetricField(dim, tuple(tuple(float(v) for v in r) for r in d["matrix"]))
        raise ParameterError(f"unknown metric form {form!r}")


def identity_metric(dim: int) -> MetricField:
    return MetricField(dim)


def constant_metric(dim: int, matrix) -> MetricField:
    return MetricField(dim, tuple(tuple(float(v) for v in row) for row in np.asarray(matrix)))
