"""Marked Poisson processes on axis-aligned boxes.

A :class:`PointConfiguration` is an immutable value: ``coords`` is an
``(n, d)`` float array and ``marks`` an optional ``(n,)`` array.  Randomness
comes from :class:`RngStream`, a ``(seed, stream_id)`` pair that maps to an
independent numpy ``Generator``; child streams are derived by hashing, so no
generator state is ever shared between tasks.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

MAX_EXPECTED_POINTS = 1e8
_MASK64 = (1 << 64) - 1


class ConfigurationTooLarge(ValueError):
    pass


class DomainError(ValueError):
    pass


# ---------------------------------------------------------------------------
# random streams


def _mix(*parts: int) -> int:
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(int(p & _MASK64).to_bytes(8, "little"))
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class RngStream:
    """Deterministic, splittable random stream."""

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)
        object.__setattr__(self, "stream_id", int(self.stream_id) & _MASK64)

    def child(self, *index: int) -> "RngStream":
        return RngStream(self.seed, _mix(self.stream_id, *index))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.PCG64(ss))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class Window:
    """Axis-aligned box ``[lower, upper]`` in R^d."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lo) != len(hi) or not lo:
            raise DomainError("lower and upper must be nonempty and of equal length")
        if not all(math.isfinite(a) and math.isfinite(b) and a < b for a, b in zip(lo, hi)):
            raise DomainError(f"degenerate window {lo} x {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def cube(cls, side: float, dim: int, origin: float = 0.0) -> "Window":
        return cls((origin,) * dim, (origin + side,) * dim)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def sides(self) -> np.ndarray:
        return np.subtract(self.upper, self.lower)

    @property
    def volume(self) -> float:
        return float(np.prod(self.sides))

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.lower)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.upper)

    def contains(self, coords) -> np.ndarray:
        c = np.atleast_2d(np.asarray(coords, dtype=float))
        return np.all((c >= self.lo) & (c <= self.hi), axis=1)

    def dilate(self, r: float) -> "Window":
        return Window(tuple(self.lo - r), tuple(self.hi + r))

    def uniform(self, gen: np.random.Generator, n: int) -> np.ndarray:
        return self.lo + gen.random((n, self.dim)) * self.sides

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper)}

    @classmethod
    def from_dict(cls, d: dict) -> "Window":
        return cls(tuple(d["lower"]), tuple(d["upper"]))


@dataclass(frozen=True)
class MarkMeasure:
    """Finite mark measure nu on R.

    ``kind`` is ``"none"`` (unmarked; every point carries the implicit mark 1),
    ``"atoms"`` (finitely many weighted values) or ``"density"`` (a scipy
    frozen distribution scaled by ``total_mass``).  Moments are needed exactly
    by the bound formulas, so they are analytic for atoms, taken from the
    caller when supplied, and otherwise computed by quadrature.
    """

    kind: str = "none"
    values: tuple = ()
    weights: tuple = ()
    dist: object = field(default=None, compare=False)
    mass: float = 1.0
    moments: tuple = ()  # ((j, int u^j nu(du)), ...)
    abs_moments: tuple = ()

    def __post_init__(self):
        if self.kind not in ("none", "atoms", "density"):
            raise DomainError(f"unknown mark kind {self.kind!r}")
        if self.kind == "atoms":
            if not self.values or len(self.values) != len(self.weights):
                raise DomainError("atoms need matching nonempty values and weights")
            if any(w <= 0 for w in self.weights):
                raise DomainError("atom weights must be positive")
        if self.kind == "density":
            if self.dist is None or self.mass <= 0:
                raise DomainError("density marks need a distribution and positive mass")
            for j in (1, 2):
                if not math.isfinite(self.abs_moment(j)):
                    raise DomainError(f"abs moment {j} of the mark measure is infinite")

    @classmethod
    def none(cls) -> "MarkMeasure":
        return cls()

    @classmethod
    def from_atoms(cls, values: Sequence[float], weights: Sequence[float]) -> "MarkMeasure":
        return cls("atoms", tuple(float(v) for v in values), tuple(float(w) for w in weights))

    @classmethod
    def from_distribution(cls, dist, total_mass=1.0, moments=None, abs_moments=None):
        """``dist`` is a frozen ``scipy.stats`` distribution (the normalized nu)."""
        return cls(
            "density",
            dist=dist,
            mass=float(total_mass),
            moments=tuple(sorted((moments or {}).items())),
            abs_moments=tuple(sorted((abs_moments or {}).items())),
        )

    @property
    def marked(self) -> bool:
        return self.kind != "none"

    @property
    def total_mass(self) -> float:
        if self.kind == "atoms":
            return float(sum(self.weights))
        if self.kind == "density":
            return self.mass
        return 1.0

    def moment(self, j: int) -> float:
        """Signed raw moment ``int u^j nu(du)``."""
        if self.kind == "none":
            return 1.0
        if self.kind == "atoms":
            return float(sum(w * v**j for v, w in zip(self.values, self.weights)))
        supplied = dict(self.moments)
        if j in supplied:
            return float(supplied[j])
        return self.mass * float(self.dist.expect(lambda u: u**j))

    def abs_moment(self, j: int) -> float:
        if self.kind == "none":
            return 1.0
        if self.kind == "atoms":
            return float(sum(w * abs(v) ** j for v, w in zip(self.values, self.weights)))
        supplied = dict(self.abs_moments)
        if j in supplied:
            return float(supplied[j])
        return self.mass * float(self.dist.expect(lambda u: abs(u) ** j))

    def sample(self, gen: np.random.Generator, n: int) -> np.ndarray | None:
        if self.kind == "none":
            return None
        if self.kind == "atoms":
            p = np.asarray(self.weights) / self.total_mass
            return np.asarray(self.values)[gen.choice(len(p), size=n, p=p)]
        return np.asarray(self.dist.rvs(size=n, random_state=gen), dtype=float).reshape(n)

    def to_dict(self) -> dict:
        if self.kind == "none":
            return {"kind": "none"}
        if self.kind == "atoms":
            return {"kind": "atoms", "atoms": [[v, w] for v, w in zip(self.values, self.weights)]}
        raise DomainError("density mark measures are not JSON-serializable")

    @classmethod
    def from_dict(cls, d: dict | None) -> "MarkMeasure":
        if not d or d.get("kind", "none") == "none":
            return cls.none()
        if d["kind"] == "atoms":
            vals, wts = zip(*d["atoms"])
            return cls.from_atoms(vals, wts)
        raise DomainError(f"cannot build mark measure of kind {d['kind']!r} from JSON")


@dataclass(frozen=True)
class IntensityModel:
    """Intensity ``t * Lebesgue|window x nu``."""

    window: Window
    t: float
    marks: MarkMeasure = field(default_factory=MarkMeasure.none)

    def __post_init__(self):
        if not (self.t > 0 and math.isfinite(self.t)):
            raise DomainError(f"intensity multiplier must be positive, got {self.t}")

    @property
    def total_mass(self) -> float:
        """lambda(X) = expected number of points."""
        return self.t * self.window.volume * self.marks.total_mass

    expected_count = total_mass

    def with_t(self, t: float) -> "IntensityModel":
        return IntensityModel(self.window, t, self.marks)

    def sample_points(self, gen: np.random.Generator, n: int):
        """n i.i.d. points from the normalized intensity (location, mark)."""
        return self.window.uniform(gen, n), self.marks.sample(gen, n)

    def to_dict(self) -> dict:
        return {"window": self.window.to_dict(), "t": self.t, "marks": self.marks.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "IntensityModel":
        return cls(Window.from_dict(d["window"]), float(d["t"]), MarkMeasure.from_dict(d.get("marks")))


def _frozen(a: np.ndarray | None) -> np.ndarray | None:
    if a is None:
        return None
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PointConfiguration:
    coords: np.ndarray
    window: Window
    marks: np.ndarray | None = None

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=float).reshape(-1, self.window.dim)
        object.__setattr__(self, "coords", _frozen(c))
        if self.marks is not None:
            m = np.asarray(self.marks, dtype=float).reshape(-1)
            if m.shape[0] != c.shape[0]:
                raise DomainError("marks and coords differ in length")
            object.__setattr__(self, "marks", _frozen(m))

    @classmethod
    def empty(cls, window: Window, marked: bool = False) -> "PointConfiguration":
        return cls(np.empty((0, window.dim)), window, np.empty(0) if marked else None)

    def __len__(self) -> int:
        return self.coords.shape[0]

    @property
    def dim(self) -> int:
        return self.window.dim

    @property
    def mark_values(self) -> np.ndarray:
        """Marks, with the implicit mark 1 for unmarked configurations."""
        return self.marks if self.marks is not None else np.ones(len(self))

    def canonical_order(self) -> np.ndarray:
        keys = [self.coords[:, i] for i in range(self.dim - 1, -1, -1)]
        if self.marks is not None:
            keys.insert(0, self.marks)
        return np.lexsort(keys) if len(self) else np.arange(0)

    def sorted(self) -> "PointConfiguration":
        o = self.canonical_order()
        return PointConfiguration(self.coords[o], self.window, None if self.marks is None else self.marks[o])

    def same_multiset(self, other: "PointConfiguration") -> bool:
        a, b = self.sorted(), other.sorted()
        if len(a) != len(b):
            return False
        if (a.marks is None) != (b.marks is None):
            return False
        ok = np.array_equal(a.coords, b.coords)
        return ok and (a.marks is None or np.array_equal(a.marks, b.marks))

    def restrict(self, mask: np.ndarray) -> "PointConfiguration":
        return PointConfiguration(self.coords[mask], self.window, None if self.marks is None else self.marks[mask])

    def tobytes(self) -> bytes:
        out = self.coords.tobytes()
        return out + (b"" if self.marks is None else self.marks.tobytes())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = [f"x{i}" for i in range(self.dim)] + (["mark"] if self.marks is not None else [])
        w.writerow(header)
        for i in range(len(self)):
            row = [repr(float(v)) for v in self.coords[i]]
            if self.marks is not None:
                row.append(repr(float(self.marks[i])))
            w.writerow(row)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, window: Window) -> "PointConfiguration":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        marked = header[-1] == "mark"
        data = np.array([[float(v) for v in r] for r in body], dtype=float).reshape(len(body), len(header))
        if marked:
            return cls(data[:, :-1], window, data[:, -1])
        return cls(data, window)


# ---------------------------------------------------------------------------
# operations


def sample_poisson(model: IntensityModel, rng) -> PointConfiguration:
    """Sample eta ~ Poisson(model)."""
    mean = model.total_mass
    if mean > MAX_EXPECTED_POINTS:
        raise ConfigurationTooLarge(f"expected {mean:.3g} points exceeds {MAX_EXPECTED_POINTS:.0e}")
    gen = as_generator(rng)
    n = int(gen.poisson(mean))
    coords, marks = model.sample_points(gen, n)
    return PointConfiguration(coords, model.window, marks)


def add_points(config: PointConfiguration, coords, marks=None, check: bool = True) -> PointConfiguration:
    """Return ``config + sum of delta_x`` for the given points (value semantics)."""
    xs = np.asarray(coords, dtype=float).reshape(-1, config.dim)
    if check and xs.shape[0] and not np.all(config.window.contains(xs)):
        raise DomainError("inserted point lies outside the window")
    new_c = np.concatenate([config.coords, xs])
    if config.marks is None:
        if marks is not None:
            raise DomainError("cannot attach marks to an unmarked configuration")
        return PointConfiguration(new_c, config.window)
    if marks is None:
        raise DomainError("marked configuration needs marks for inserted points")
    new_m = np.concatenate([config.marks, np.asarray(marks, dtype=float).reshape(-1)])
    return PointConfiguration(new_c, config.window, new_m)


def superpose(a: PointConfiguration, b: PointConfiguration) -> PointConfiguration:
    return add_points(a, b.coords, b.marks, check=False)


def thin(config: PointConfiguration, s: float, rng) -> PointConfiguration:
    """Independent s-thinning: keep every point with probability s."""
    if not 0.0 <= s <= 1.0:
        raise DomainError(f"retention probability must lie in [0, 1], got {s}")
    if s == 1.0:
        return config
    if s == 0.0:
        return config.restrict(np.zeros(len(config), dtype=bool))
    keep = as_generator(rng).random(len(config)) < s
    return config.restrict(keep)


def model_to_json(model: IntensityModel) -> str:
    return json.dumps(model.to_dict(), sort_keys=True)


def model_from_json(text: str) -> IntensityModel:
    return IntensityModel.from_dict(json.loads(text))
