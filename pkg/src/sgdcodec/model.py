"""Datasets and grid-valued classifiers with exact-rational gradients.

Two model kinds are supported: a logistic-linear classifier and a one hidden
layer network whose activations go through the same sigmoid table.  The
sigmoid is a precomputed fixed-point lookup table with linear interpolation,
evaluated in exact rational arithmetic, so a gradient is a deterministic
function of (weights, batch) with a single round-half-even quantization at
the end of each step.  Accuracy is an exact rational: correct count over
subset size, with the prediction rule score > 0 -> label 1.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Iterable, Optional, Sequence, Union

from .numerics import (
    DomainError,
    FixedScalar,
    FixedVector,
    GridSpec,
    Rational,
    SaturationError,
    quantize_vector,
    round_half_even,
    zero_vector,
)
from .stable import stable_sigmoid_float

MODEL_KINDS = ("logistic-linear", "one-hidden-layer")
FAMILIES = ("separable-margin", "two-gaussians", "random-labels", "one-hot")


class EmptySubsetError(ValueError):
    """Accuracy of an empty subset is undefined."""


@dataclass(frozen=True)
class Element:
    """One data point: unique id, fixed-point feature vector, binary label."""

    eid: int
    features: FixedVector
    label: int

    def __post_init__(self) -> None:
        if self.label not in (0, 1):
            raise DomainError(f"label must be 0/1, got {self.label}")


@dataclass(frozen=True)
class GeneratorSpec:
    """Parameters of one synthetic dataset family.

    Families:
      separable-margin  random box features relabeled by a hidden hyperplane,
                        rejection-sampled to a minimum normalized margin
      two-gaussians     two clusters at +/- center along axis 0 with integer
                        approximate-normal noise of standard deviation sigma
      random-labels     box features with independent fair-coin labels
      one-hot           element i carries feature_scale * e_i and label 1; a
                        linear model can memorize each element independently,
                        which makes within-epoch seen/unseen accuracy split
                        maximally (all labels separable by the all-ones
                        hyperplane)
    """

    family: str
    n: int
    dim: int
    seed: int
    margin: Fraction = Fraction(1, 2)
    sigma: Fraction = Fraction(1, 2)
    center_dist: Fraction = Fraction(2)
    feature_scale: int = 2

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise DomainError(f"unknown family {self.family!r}")
        if self.n < 1:
            raise DomainError("n must be >= 1")
        if self.family == "one-hot":
            if self.dim != self.n:
                raise DomainError("one-hot family requires dim == n")
        elif self.dim < 1:
            raise DomainError("dim must be >= 1")
        if self.margin < 0 or self.sigma < 0 or self.center_dist <= 0:
            raise DomainError("margin/sigma must be >= 0 and center_dist > 0")
        if self.feature_scale < 1:
            raise DomainError("feature_scale must be >= 1")

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "n": self.n,
            "dim": self.dim,
            "seed": self.seed,
            "margin": str(self.margin),
            "sigma": str(self.sigma),
            "center_dist": str(self.center_dist),
            "feature_scale": self.feature_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        return cls(
            family=d["family"],
            n=int(d["n"]),
            dim=int(d["dim"]),
            seed=int(d["seed"]),
            margin=Fraction(d.get("margin", "1/2")),
            sigma=Fraction(d.get("sigma", "1/2")),
            center_dist=Fraction(d.get("center_dist", "2")),
            feature_scale=int(d.get("feature_scale", 2)),
        )


@dataclass(frozen=True)
class Dataset:
    """Elements sorted by id; ids are exactly 0..n-1."""

    elements: tuple[Element, ...]
    grid: GridSpec
    spec: Optional[GeneratorSpec] = None

    def __post_init__(self) -> None:
        for i, el in enumerate(self.elements):
            if el.eid != i:
                raise DomainError("element ids must be exactly 0..n-1 in order")

    @property
    def n(self) -> int:
        return len(self.elements)

    @property
    def dim(self) -> int:
        return len(self.elements[0].features) if self.elements else 0

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(range(self.n))

    def element(self, eid: int) -> Element:
        return self.elements[eid]

    def subset(self, ids: Iterable[int]) -> tuple[Element, ...]:
        """Elements for the given ids, ascending by id."""
        return tuple(self.elements[e] for e in sorted(ids))

    def to_text(self) -> str:
        """Header 'n<TAB>p<TAB>scale', then one 'id<TAB>label<TAB>raw,raw,...' line each."""
        lines = [f"{self.n}\t{self.dim}\t{self.grid.scale}"]
        for el in self.elements:
            feats = ",".join(str(r) for r in el.features.raws)
            lines.append(f"{el.eid}\t{el.label}\t{feats}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, grid: GridSpec) -> "Dataset":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise DomainError("empty dataset text")
        n, dim, scale = (int(x) for x in lines[0].split("\t"))
        if scale != grid.scale:
            raise DomainError(f"scale mismatch: file {scale}, grid {grid.scale}")
        if len(lines) != n + 1:
            raise DomainError(f"expected {n} rows, got {len(lines) - 1}")
        elements = []
        for ln in lines[1:]:
            eid_s, label_s, feats_s = ln.split("\t")
            raws = tuple(int(x) for x in feats_s.split(",")) if feats_s else ()
            if len(raws) != dim:
                raise DomainError("feature dimension mismatch")
            for r in raws:
                if r < grid.raw_min or r > grid.raw_max:
                    raise DomainError("feature mantissa outside clip range")
            elements.append(Element(int(eid_s), FixedVector(raws, grid), int(label_s)))
        return cls(tuple(elements), grid)


def _box_raw(rng: random.Random, half_width_raw: int) -> int:
    return rng.randrange(-half_width_raw, half_width_raw + 1)


def _approx_gauss_raw(rng: random.Random, sigma_raw: int) -> int:
    # Sum of 12 uniform integers: mean 6*(M-1)/... centered, std ~ M.  Integer
    # arithmetic only so generation is bit-identical on every platform.
    m = 1 << 20
    s = sum(rng.randrange(m) for _ in range(12))
    centered = s - 6 * (m - 1)
    return round_half_even(Fraction(centered * sigma_raw, m))


def generate_dataset(spec: GeneratorSpec, grid: GridSpec) -> Dataset:
    """Deterministic synthetic dataset for the given spec; same seed, same bytes."""
    rng = random.Random(spec.seed)
    unit = grid.unit
    half = spec.feature_scale * unit
    if half > grid.raw_max:
        raise DomainError("feature_scale exceeds the grid clip range")
    elements: list[Element] = []

    if spec.family == "separable-margin":
        normal = [0] * spec.dim
        while all(v == 0 for v in normal):
            normal = [rng.randrange(-unit, unit + 1) for _ in range(spec.dim)]
        norm = math.sqrt(sum(v * v for v in normal))
        # Normalized margin threshold compared on raw products: |w.x| >= margin*|w|.
        for eid in range(spec.n):
            for _ in range(10000):
                raws = [_box_raw(rng, half) for _ in range(spec.dim)]
                dot = sum(w * x for w, x in zip(normal, raws))
                if abs(dot) >= float(spec.margin) * norm * unit:
                    break
            else:
                raise DomainError("margin too large for the feature box")
            elements.append(
                Element(eid, FixedVector(tuple(raws), grid), 1 if dot > 0 else 0)
            )

    elif spec.family == "two-gaussians":
        center_raw = round_half_even(Fraction(spec.center_dist, 2) * unit)
        sigma_raw = round_half_even(spec.sigma * unit)
        for eid in range(spec.n):
            label = rng.getrandbits(1)
            sign = 1 if label else -1
            raws = []
            for c in range(spec.dim):
                base = sign * center_raw if c == 0 else 0
                raw, _ = grid.clamp_raw(base + _approx_gauss_raw(rng, sigma_raw))
                raws.append(raw)
            elements.append(Element(eid, FixedVector(tuple(raws), grid), label))

    elif spec.family == "random-labels":
        for eid in range(spec.n):
            raws = tuple(_box_raw(rng, half) for _ in range(spec.dim))
            elements.append(Element(eid, FixedVector(raws, grid), rng.getrandbits(1)))

    elif spec.family == "one-hot":
        on = spec.feature_scale * unit
        for eid in range(spec.n):
            raws = tuple(on if c == eid else 0 for c in range(spec.dim))
            elements.append(Element(eid, FixedVector(raws, grid), 1))

    return Dataset(tuple(elements), grid, spec)


# Sigmoid lookup table: knots every 2**-KNOT_BITS over [-Z_MAX, Z_MAX], values
# quantized to the working grid scale, exact 0/1 beyond the ends.  Knot values
# are computed with mpmath so the table is identical on every platform.
KNOT_BITS = 6
Z_MAX = 8


@lru_cache(maxsize=None)
def _sigmoid_knots(scale: int) -> tuple[int, ...]:
    unit = 1 << scale
    knots = []
    for k in range(-(Z_MAX << KNOT_BITS), (Z_MAX << KNOT_BITS) + 1):
        z = Fraction(k, 1 << KNOT_BITS)
        v = Fraction(stable_sigmoid_float(z))
        knots.append(round_half_even(v * unit))
    return tuple(knots)


def sigmoid_table_value(z: Rational, scale: int) -> Fraction:
    """Interpolated table sigmoid, exact rational in [0, 1]."""
    zf = Fraction(z)
    if zf >= Z_MAX:
        return Fraction(1)
    if zf <= -Z_MAX:
        return Fraction(0)
    knots = _sigmoid_knots(scale)
    unit = 1 << scale
    scaled = zf * (1 << KNOT_BITS)
    k = scaled.numerator // scaled.denominator
    frac = scaled - k
    base = k + (Z_MAX << KNOT_BITS)
    lo = Fraction(knots[base], unit)
    hi = Fraction(knots[base + 1], unit)
    return lo + (hi - lo) * frac


def sigmoid_table_slope(z: Rational, scale: int) -> Fraction:
    """Right-segment slope of the table sigmoid (zero beyond the ends)."""
    zf = Fraction(z)
    if zf >= Z_MAX or zf < -Z_MAX:
        return Fraction(0)
    knots = _sigmoid_knots(scale)
    unit = 1 << scale
    scaled = zf * (1 << KNOT_BITS)
    k = scaled.numerator // scaled.denominator
    base = k + (Z_MAX << KNOT_BITS)
    return Fraction(knots[base + 1] - knots[base], unit) * (1 << KNOT_BITS)


@dataclass(frozen=True)
class Model:
    """A grid-valued classifier: weights plus a kind tag.

    one-hidden-layer weight layout: ``width`` rows of ``dim`` input weights,
    then ``width`` output weights.
    """

    kind: str
    weights: FixedVector
    dim: int
    width: int = 0

    def __post_init__(self) -> None:
        if self.kind not in MODEL_KINDS:
            raise DomainError(f"unknown model kind {self.kind!r}")
        if self.kind == "logistic-linear":
            expect = self.dim
        else:
            if self.width < 1:
                raise DomainError("one-hidden-layer needs width >= 1")
            expect = self.width * self.dim + self.width
        if len(self.weights) != expect:
            raise DomainError(
                f"{self.kind} with dim={self.dim} width={self.width} "
                f"needs {expect} weights, got {len(self.weights)}"
            )

    @property
    def d(self) -> int:
        return len(self.weights)

    @property
    def grid(self) -> GridSpec:
        return self.weights.grid

    def with_weights(self, weights: FixedVector) -> "Model":
        return replace(self, weights=weights)

    def _hidden_pre(self, x_raws: Sequence[int]) -> list[Fraction]:
        unit2 = self.grid.unit * self.grid.unit
        out = []
        w = self.weights.raws
        for r in range(self.width):
            row = w[r * self.dim : (r + 1) * self.dim]
            out.append(Fraction(sum(a * b for a, b in zip(row, x_raws)), unit2))
        return out

    def score(self, el: Element) -> Fraction:
        """Pre-activation of the output unit; prediction is score > 0."""
        if el.features.grid != self.grid:
            raise DomainError("element and model live on different grids")
        x = el.features.raws
        if self.kind == "logistic-linear":
            unit2 = self.grid.unit * self.grid.unit
            return Fraction(sum(a * b for a, b in zip(self.weights.raws, x)), unit2)
        pre = self._hidden_pre(x)
        v = self.weights.raws[self.width * self.dim :]
        unit = self.grid.unit
        total = Fraction(0)
        for vr, p in zip(v, pre):
            total += Fraction(vr, unit) * sigmoid_table_value(p, self.grid.scale)
        return total

    def predict(self, el: Element) -> int:
        return 1 if self.score(el) > 0 else 0

    def correct(self, el: Element) -> int:
        return 1 if self.predict(el) == el.label else 0


def zero_model(kind: str, dim: int, grid: GridSpec, width: int = 0) -> Model:
    d = dim if kind == "logistic-linear" else width * dim + width
    return Model(kind, zero_vector(d, grid), dim, width)


def model_from_weights(kind: str, weights: FixedVector, dim: int, width: int = 0) -> Model:
    return Model(kind, weights, dim, width)


def gradient_exact(model: Model, batch: Sequence[Element]) -> tuple[Fraction, ...]:
    """Exact rational mean gradient of the table-defined logistic loss over a batch.

    Batch elements are visited in ascending id order; with exact rationals the
    sum is order-free, the sort just fixes the documented convention.
    """
    if not batch:
        raise DomainError("empty batch")
    scale = model.grid.scale
    unit = model.grid.unit
    total = [Fraction(0)] * model.d
    for el in sorted(batch, key=lambda e: e.eid):
        if el.features.grid != model.grid:
            raise DomainError("element and model live on different grids")
        x = el.features.raws
        if model.kind == "logistic-linear":
            z = Fraction(sum(a * b for a, b in zip(model.weights.raws, x)), unit * unit)
            resid = sigmoid_table_value(z, scale) - el.label
            for c in range(model.dim):
                total[c] += resid * Fraction(x[c], unit)
        else:
            pre = model._hidden_pre(x)
            hidden = [sigmoid_table_value(p, scale) for p in pre]
            v = model.weights.raws[model.width * model.dim :]
            out_pre = sum(
                (Fraction(vr, unit) * h for vr, h in zip(v, hidden)), Fraction(0)
            )
            resid = sigmoid_table_value(out_pre, scale) - el.label
            for r in range(model.width):
                slope = sigmoid_table_slope(pre[r], scale)
                coef = resid * Fraction(v[r], unit) * slope
                for c in range(model.dim):
                    total[r * model.dim + c] += coef * Fraction(x[c], unit)
                total[model.width * model.dim + r] += resid * hidden[r]
    b = len(batch)
    return tuple(t / b for t in total)


def loss_gradient(model: Model, batch: Sequence[Element]) -> FixedVector:
    """Mean batch gradient quantized once to the grid, round half to even.

    Raises SaturationError if the model carries a saturation flag or any
    quantized coordinate clips.
    """
    if model.weights.saturated:
        raise SaturationError("model weights carry a saturation flag")
    exact = gradient_exact(model, batch)
    vec = quantize_vector(exact, model.grid)
    if vec.saturated:
        raise SaturationError("gradient coordinate clipped during quantization")
    return vec


def accuracy(model: Model, subset: Sequence[Element]) -> Fraction:
    """Exact accuracy of the model on a nonempty element sequence."""
    if not subset:
        raise EmptySubsetError("accuracy of an empty subset")
    return Fraction(sum(model.correct(el) for el in subset), len(subset))


class AccuracyOracle:
    """Memoized per-element correctness of one fixed model snapshot.

    Callable with an element id (or an Element); returns 1 if the snapshot
    classifies it correctly.  This is the shared classifier the conditional
    set codec conditions on.
    """

    def __init__(self, model: Model, dataset: Dataset) -> None:
        self.model = model
        self.dataset = dataset
        self._memo: dict[int, int] = {}

    def __call__(self, item: Union[int, Element]) -> int:
        eid = item.eid if isinstance(item, Element) else item
        hit = self._memo.get(eid)
        if hit is None:
            hit = self.model.correct(self.dataset.element(eid))
            self._memo[eid] = hit
        return hit


def correctness_vector(model: Model, dataset: Dataset) -> list[int]:
    """Per-element correctness indexed by id, computed in one sweep."""
    return [model.correct(el) for el in dataset.elements]


@dataclass(frozen=True)
class SmoothnessEstimate:
    empirical_l: float
    empirical_g: float
    analytic_l: Optional[float]
    analytic_g: Optional[float]


def analytic_logistic_smoothness(dataset: Dataset) -> tuple[Fraction, float]:
    """(L, G) bounds for the logistic-linear loss: L <= max |x|^2 / 4, G <= max |x|."""
    unit2 = dataset.grid.unit * dataset.grid.unit
    worst = max(
        (Fraction(sum(r * r for r in el.features.raws), unit2) for el in dataset.elements),
        default=Fraction(0),
    )
    return worst / 4, math.sqrt(float(worst))


def estimate_smoothness(
    model: Model, dataset: Dataset, pairs: int = 200, seed: int = 0
) -> SmoothnessEstimate:
    """Sampled per-element smoothness and gradient-norm estimates.

    Draws random weight pairs inside the clip box and takes the worst observed
    ratio |grad(w1) - grad(w2)| / |w1 - w2| over single-element batches, plus
    the worst gradient norm.  For logistic-linear the analytic bounds are
    reported alongside.
    """
    rng = random.Random(seed)
    grid = model.grid
    span = min(grid.raw_max, 4 * grid.unit)
    worst_l = 0.0
    worst_g = 0.0

    def rand_weights() -> FixedVector:
        return FixedVector(
            tuple(rng.randrange(-span, span + 1) for _ in range(model.d)), grid
        )

    for _ in range(pairs):
        el = dataset.element(rng.randrange(dataset.n))
        w1, w2 = rand_weights(), rand_weights()
        if w1.raws == w2.raws:
            continue
        g1 = gradient_exact(model.with_weights(w1), [el])
        g2 = gradient_exact(model.with_weights(w2), [el])
        num = math.sqrt(sum(float(a - b) ** 2 for a, b in zip(g1, g2)))
        den = math.sqrt(sum(float(a - b) ** 2 for a, b in zip(w1.values, w2.values)))
        worst_l = max(worst_l, num / den)
        worst_g = max(worst_g, math.sqrt(sum(float(x) ** 2 for x in g1)))
    if model.kind == "logistic-linear":
        al, ag = analytic_logistic_smoothness(dataset)
        return SmoothnessEstimate(worst_l, worst_g, float(al), ag)
    return SmoothnessEstimate(worst_l, worst_g, None, None)
