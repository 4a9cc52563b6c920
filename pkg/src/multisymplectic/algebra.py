"""Sparse exterior algebra over a single coordinate chart.

Multivectors and forms are stored as maps from strictly increasing index
tuples to real coefficients.  A basis index ``k`` stands for ``d/dx^k`` in a
multivector and for ``dx^k`` in a form.  Evaluation uses the determinant
convention ``(dx^1 ^ dx^2)(d_1, d_2) = 1``.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

ZERO_TOL = 1e-15
DEFAULT_FD_STEP = 1e-5


class AlgebraError(ValueError):
    """Base class for exterior-algebra errors."""


class ChartMismatchError(AlgebraError):
    pass


class DegreeError(AlgebraError):
    pass


@dataclass(frozen=True)
class Chart:
    """Ordered coordinate labels of a single global chart."""

    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "labels", tuple(self.labels))
        if not self.labels:
            raise ValueError("a chart needs at least one coordinate")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError(f"coordinate labels must be unique: {self.labels}")

    @property
    def dim(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        return self.labels.index(label)


@dataclass(frozen=True)
class ChartSpec:
    """Dimensions of the multisymplectic phase space P over an (n, N) field bundle.

    Basis order is fixed: ``x^1..x^n``, ``q^1..q^N``, the polymomenta
    ``p^mu_i`` (mu-major), then ``p``.  Indices ``mu`` and ``i`` are 0-based
    in every method.
    """

    n: int
    N: int

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"space-time dimension n must be >= 1, got {self.n}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"fiber dimension N must be >= 1, got {self.N}")

    @property
    def dim(self) -> int:
        return (self.N + 1) * (self.n + 1)

    @property
    def labels(self) -> tuple[str, ...]:
        xs = [f"x{mu + 1}" for mu in range(self.n)]
        qs = [f"q{i + 1}" for i in range(self.N)]
        ps = [f"p{mu + 1}_{i + 1}" for mu in range(self.n) for i in range(self.N)]
        return tuple(xs + qs + ps + ["p"])

    @property
    def chart(self) -> Chart:
        return Chart(self.labels)

    @property
    def config_chart(self) -> Chart:
        """Chart of the extended configuration space E, coordinates (x, q)."""
        return Chart(self.labels[: self.n + self.N])

    def x_index(self, mu: int) -> int:
        return mu

    def q_index(self, i: int) -> int:
        return self.n + i

    def pmom_index(self, mu: int, i: int) -> int:
        return self.n + self.N + mu * self.N + i

    @property
    def p_index(self) -> int:
        return self.dim - 1


def _sort_with_sign(idx: Sequence[int]) -> tuple[tuple[int, ...], int]:
    """Sort an index sequence; sign 0 if an index repeats."""
    items = list(idx)
    sign = 1
    # insertion sort keeps the parity bookkeeping obvious; tuples are short
    for i in range(1, len(items)):
        j = i
        while j > 0 and items[j - 1] > items[j]:
            items[j - 1], items[j] = items[j], items[j - 1]
            sign = -sign
            j -= 1
    for a, b in zip(items, items[1:]):
        if a == b:
            return tuple(items), 0
    return tuple(items), sign


def _merge_sign(a: tuple[int, ...], b: tuple[int, ...]) -> int:
    """Sign of the shuffle putting the concatenation ``a + b`` in sorted order."""
    inversions = 0
    for k in b:
        inversions += len(a) - bisect_right(a, k)
    return -1 if inversions % 2 else 1


class _Alternating:
    """Shared storage for Multivector and Form."""

    __slots__ = ("chart", "degree", "_coeffs")

    def __init__(
        self,
        chart: Chart,
        degree: int,
        coeffs: Mapping[Sequence[int], float] | None = None,
    ) -> None:
        if degree < 0 or degree > chart.dim:
            raise DegreeError(f"degree {degree} outside [0, {chart.dim}]")
        store: dict[tuple[int, ...], float] = {}
        for key, value in (coeffs or {}).items():
            key = (key,) if isinstance(key, (int, np.integer)) else tuple(int(k) for k in key)
            if len(key) != degree:
                raise DegreeError(f"index tuple {key} does not have degree {degree}")
            if any(k < 0 or k >= chart.dim for k in key):
                raise AlgebraError(f"index tuple {key} outside chart of dimension {chart.dim}")
            key, sign = _sort_with_sign(key)
            if sign == 0:
                continue
            store[key] = store.get(key, 0.0) + sign * float(value)
        self.chart = chart
        self.degree = degree
        self._coeffs = MappingProxyType(
            {k: v for k, v in sorted(store.items()) if abs(v) >= ZERO_TOL}
        )

    @property
    def coeffs(self) -> Mapping[tuple[int, ...], float]:
        return self._coeffs

    # construction helpers -------------------------------------------------
    @classmethod
    def zero(cls, chart: Chart, degree: int):
        return cls(chart, degree)

    @classmethod
    def basis(cls, chart: Chart, *indices: int, coeff: float = 1.0):
        return cls(chart, len(indices), {tuple(indices): coeff})

    @classmethod
    def scalar(cls, chart: Chart, value: float):
        return cls(chart, 0, {(): value})

    @classmethod
    def from_components(cls, chart: Chart, values: Iterable[float]):
        """Degree-1 element from a dense component vector."""
        values = np.asarray(list(values), dtype=float)
        if values.shape != (chart.dim,):
            raise AlgebraError(f"expected {chart.dim} components, got {values.shape}")
        return cls(chart, 1, {(k,): v for k, v in enumerate(values) if v != 0.0})

    # accessors ------------------------------------------------------------
    def __getitem__(self, key: Sequence[int] | int) -> float:
        key = (key,) if isinstance(key, (int, np.integer)) else tuple(key)
        sorted_key, sign = _sort_with_sign(key)
        if sign == 0:
            return 0.0
        return sign * self._coeffs.get(sorted_key, 0.0)

    def components(self) -> np.ndarray:
        """Dense component vector of a degree-1 element."""
        if self.degree != 1:
            raise DegreeError("components() needs degree 1")
        out = np.zeros(self.chart.dim)
        for (k,), v in self._coeffs.items():
            out[k] = v
        return out

    def scalar_value(self) -> float:
        if self.degree != 0:
            raise DegreeError("scalar_value() needs degree 0")
        return self._coeffs.get((), 0.0)

    def is_zero(self) -> bool:
        return not self._coeffs

    def max_abs(self) -> float:
        return max((abs(v) for v in self._coeffs.values()), default=0.0)

    def allclose(self, other: "_Alternating", atol: float = 1e-12) -> bool:
        return (self - other).max_abs() <= atol

    # arithmetic -----------------------------------------------------------
    def _check_same(self, other: "_Alternating") -> None:
        if type(self) is not type(other):
            raise TypeError(f"cannot combine {type(self).__name__} with {type(other).__name__}")
        if self.chart != other.chart:
            raise ChartMismatchError("operands live on different charts")
        if self.degree != other.degree:
            raise DegreeError(f"degree mismatch: {self.degree} vs {other.degree}")

    def __add__(self, other):
        if not isinstance(other, _Alternating):
            return NotImplemented
        self._check_same(other)
        merged = dict(self._coeffs)
        for k, v in other._coeffs.items():
            merged[k] = merged.get(k, 0.0) + v
        return type(self)(self.chart, self.degree, merged)

    def __neg__(self):
        return type(self)(self.chart, self.degree, {k: -v for k, v in self._coeffs.items()})

    def __sub__(self, other):
        if not isinstance(other, _Alternating):
            return NotImplemented
        return self + (-other)

    def __mul__(self, scalar):
        if isinstance(scalar, _Alternating):
            return NotImplemented
        s = float(scalar)
        return type(self)(self.chart, self.degree, {k: s * v for k, v in self._coeffs.items()})

    __rmul__ = __mul__

    def __eq__(self, other) -> bool:
        if not isinstance(other, _Alternating):
            return NotImplemented
        return (
            type(self) is type(other)
            and self.chart == other.chart
            and self.degree == other.degree
            and dict(self._coeffs) == dict(other._coeffs)
        )

    def __hash__(self) -> int:
        return hash((type(self).__name__, self.chart, self.degree, tuple(self._coeffs.items())))

    def _symbol(self, k: int) -> str:
        raise NotImplementedError

    def __repr__(self) -> str:
        if not self._coeffs:
            return f"{type(self).__name__}(0, degree={self.degree})"
        terms = []
        for key, v in self._coeffs.items():
            basis = "^".join(self._symbol(k) for k in key) or "1"
            terms.append(f"{v:+.6g}*{basis}")
        return f"{type(self).__name__}({' '.join(terms)})"


class Multivector(_Alternating):
    """Element of the r-th exterior power of the tangent space."""

    __slots__ = ()

    def _symbol(self, k: int) -> str:
        return f"d_{self.chart.labels[k]}"


class Form(_Alternating):
    """Element of the s-th exterior power of the cotangent space."""

    __slots__ = ()

    def _symbol(self, k: int) -> str:
        return f"d{self.chart.labels[k]}"

    def evaluate(self, vectors: Sequence[np.ndarray]) -> float:
        """Full evaluation on ``degree`` dense tangent vectors."""
        if len(vectors) != self.degree:
            raise DegreeError(f"need {self.degree} vectors, got {len(vectors)}")
        if self.degree == 0:
            return self.scalar_value()
        mat = np.asarray(vectors, dtype=float).T  # rows: coordinates, columns: vectors
        total = 0.0
        for key, v in self._coeffs.items():
            total += v * float(np.linalg.det(mat[list(key), :]))
        return total


def wedge(a: _Alternating, b: _Alternating) -> _Alternating:
    """Exterior product of two multivectors or of two forms."""
    if type(a) is not type(b):
        raise TypeError(f"cannot wedge {type(a).__name__} with {type(b).__name__}")
    if a.chart != b.chart:
        raise ChartMismatchError("operands live on different charts")
    degree = a.degree + b.degree
    if degree > a.chart.dim:
        raise DegreeError(f"degree {degree} exceeds chart dimension {a.chart.dim}")
    out: dict[tuple[int, ...], float] = {}
    for ka, va in a.coeffs.items():
        sa = set(ka)
        for kb, vb in b.coeffs.items():
            if sa.intersection(kb):
                continue
            key = tuple(sorted(ka + kb))
            out[key] = out.get(key, 0.0) + _merge_sign(ka, kb) * va * vb
    return type(a)(a.chart, degree, out)


def wedge_all(items: Sequence[_Alternating]) -> _Alternating:
    if not items:
        raise AlgebraError("wedge_all needs at least one factor")
    result = items[0]
    for item in items[1:]:
        result = wedge(result, item)
    return result


def contract(X: Multivector, alpha: Form, *, slots: str = "leading") -> Form:
    """Insert a multivector into a form.

    With ``slots="leading"`` a separable ``X = Z_1 ^ ... ^ Z_r`` fills the
    first ``r`` arguments, ``alpha(Z_1, ..., Z_r, .)``; this is the nested
    ``i_{Z_r} o ... o i_{Z_1}``.  With ``slots="trailing"`` it fills the last
    ``r`` arguments, ``alpha(., Z_1, ..., Z_r)``, which differs by the sign
    ``(-1)^(r (s - r))``.
    """
    if not isinstance(X, Multivector) or not isinstance(alpha, Form):
        raise TypeError("contract(X, alpha) needs a Multivector and a Form")
    if X.chart != alpha.chart:
        raise ChartMismatchError("operands live on different charts")
    r, s = X.degree, alpha.degree
    if r > s:
        raise DegreeError(f"cannot contract a degree-{r} multivector into a {s}-form")
    if slots not in ("leading", "trailing"):
        raise ValueError(f"slots must be 'leading' or 'trailing', got {slots!r}")
    out: dict[tuple[int, ...], float] = {}
    for kx, vx in X.coeffs.items():
        sx = set(kx)
        for ka, va in alpha.coeffs.items():
            if not sx.issubset(ka):
                continue
            rest = tuple(k for k in ka if k not in sx)
            out[rest] = out.get(rest, 0.0) + _merge_sign(kx, rest) * vx * va
    result = Form(alpha.chart, s - r, out)
    if slots == "trailing" and (r * (s - r)) % 2:
        result = -result
    return result


@dataclass(frozen=True)
class FormField:
    """Point-dependent form on a chart.

    ``evaluator`` maps a coordinate vector to a Form.  ``partial``, when
    given, maps ``(coords, k)`` to the Form of coefficientwise derivatives
    along coordinate ``k``.
    """

    chart: Chart
    degree: int
    evaluator: Callable[[np.ndarray], Form]
    partial: Optional[Callable[[np.ndarray, int], Form]] = field(default=None, compare=False)

    def __call__(self, at) -> Form:
        value = self.evaluator(coords_of(at))
        if not isinstance(value, Form) or value.degree != self.degree or value.chart != self.chart:
            raise DegreeError(f"evaluator did not return a degree-{self.degree} Form on this chart")
        return value

    @classmethod
    def constant(cls, form: Form) -> "FormField":
        zero = Form.zero(form.chart, form.degree)
        return cls(form.chart, form.degree, lambda _c: form, lambda _c, _k: zero)


def coords_of(at) -> np.ndarray:
    """Coordinate vector of a point; accepts arrays or objects with ``to_array``."""
    if hasattr(at, "to_array"):
        return np.asarray(at.to_array(), dtype=float)
    return np.asarray(at, dtype=float)


def exterior_derivative(f: FormField, at, step: float = DEFAULT_FD_STEP, *, analytic: bool = True) -> Form:
    """d f at a point: analytic partials when available, else central differences.

    The finite-difference step along coordinate ``k`` is ``step * max(1, |x_k|)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    coords = coords_of(at)
    chart = f.chart
    if coords.shape != (chart.dim,):
        raise AlgebraError(f"point has shape {coords.shape}, chart dimension is {chart.dim}")
    if f.degree + 1 > chart.dim:
        raise DegreeError("exterior derivative of a top-degree form has no room")
    result = Form.zero(chart, f.degree + 1)
    for k in range(chart.dim):
        if analytic and f.partial is not None:
            dk = f.partial(coords, k)
        else:
            h = step * max(1.0, abs(coords[k]))
            plus, minus = coords.copy(), coords.copy()
            plus[k] += h
            minus[k] -= h
            dk = (f(plus) - f(minus)) * (1.0 / (2.0 * h))
        if dk.is_zero():
            continue
        result = result + wedge(Form.basis(chart, k), dk)
    return result


def is_decomposable_basis(Z: Sequence[Multivector]) -> Multivector:
    """Wedge of a list of vectors; a zero result means they are linearly dependent."""
    for z in Z:
        if not isinstance(z, Multivector) or z.degree != 1:
            raise DegreeError("every factor must be a degree-1 Multivector")
    return wedge_all(list(Z))
