"""Discrete groups with exact arithmetic and finite subsets stored as key arrays.

Every model packs an element into one ``int64`` key.  Keys sort in the
lexicographic order of the element coordinates, and that order is the
canonical element order used for tie-breaking throughout the library.

Each model offers two routes to its group law: plain Python methods on
element tuples (``multiply``/``inverse``) and numpy versions on coordinate
arrays (``mul_coords``/``inv_coords``).  The test-suite checks them against
each other.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import EncodingRangeError, ModelMismatchError, WindowExhaustedError

Element = tuple

__all__ = [
    "Schedule",
    "GroupModel",
    "ZdModel",
    "HeisenbergModel",
    "LamplighterModel",
    "FiniteSubset",
    "get_model",
    "folner_set",
    "folner_size",
    "word_ball",
]


@dataclass(frozen=True)
class Schedule:
    """Side lengths ``L_n`` of the canonical Folner sets.

    Geometric (``L_n = base**n``) unless an explicit tuple of lengths is given.
    """

    base: int = 4
    lengths: tuple[int, ...] | None = None

    def length(self, n: int) -> int:
        if n < 0:
            raise ValueError("schedule index must be nonnegative")
        if self.lengths is not None:
            if n >= len(self.lengths):
                raise WindowExhaustedError(
                    f"schedule has only {len(self.lengths)} entries, index {n} requested"
                )
            return int(self.lengths[n])
        return int(self.base) ** n

    def __len__(self) -> int:
        # Explicit schedules are finite; geometric ones are capped far beyond
        # anything enumerable.
        return len(self.lengths) if self.lengths is not None else 64


DEFAULT_SCHEDULE = Schedule()


class GroupModel:
    """Interface shared by the concrete groups.

    The counting measure on a discrete group is both left and right
    invariant, so the modular function is the constant 1.
    """

    name: str = "group"
    ncoords: int = 1
    modular_function: int = 1

    # ---- scalar route -------------------------------------------------
    def identity(self) -> Element:
        raise NotImplementedError

    def multiply(self, x: Element, y: Element) -> Element:
        raise NotImplementedError

    def inverse(self, x: Element) -> Element:
        raise NotImplementedError

    def canonical(self, x) -> Element:
        """Normalise a user-supplied element to its canonical tuple."""
        raise NotImplementedError

    # ---- vectorised route ---------------------------------------------
    def to_coords(self, elements: Iterable[Element]) -> np.ndarray:
        raise NotImplementedError

    def from_coords(self, coords: np.ndarray) -> list[Element]:
        raise NotImplementedError

    def pack(self, coords: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def unpack(self, keys: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def mul_coords(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def inv_coords(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    # ---- shapes ---------------------------------------------------------
    def generator_elements(self) -> list[Element]:
        raise NotImplementedError

    def generators(self) -> "FiniteSubset":
        return FiniteSubset.from_elements(self, self.generator_elements())

    def box_coords(self, length: int) -> np.ndarray:
        raise NotImplementedError

    def box_size(self, length: int) -> int:
        raise NotImplementedError

    # ---- text format ----------------------------------------------------
    def format_element(self, x: Element) -> str:
        return " ".join(str(v) for v in x)

    def parse_element(self, token: str) -> Element:
        return self.canonical(tuple(int(v) for v in token.split()))

    @property
    def is_lattice(self) -> bool:
        return False

    def __str__(self) -> str:
        return self.name


def _check_range(arr: np.ndarray, lo: int, hi: int, what: str) -> None:
    if arr.size and (arr.min() < lo or arr.max() >= hi):
        raise EncodingRangeError(f"{what} outside encodable range [{lo}, {hi})")


@dataclass(frozen=True, eq=True)
class ZdModel(GroupModel):
    """The free abelian group Z^d with keys ordered lexicographically."""

    d: int = 1

    def __post_init__(self):
        if not 1 <= self.d <= 6:
            raise ValueError("Z^d supported for 1 <= d <= 6")

    @property
    def name(self) -> str:  # type: ignore[override]
        return "Z" if self.d == 1 else f"Z{self.d}"

    @property
    def ncoords(self) -> int:  # type: ignore[override]
        return self.d

    @property
    def is_lattice(self) -> bool:
        return True

    @property
    def _bits(self) -> int:
        return 62 // self.d

    def identity(self) -> Element:
        return (0,) * self.d

    def canonical(self, x) -> Element:
        if isinstance(x, (int, np.integer)) and self.d == 1:
            return (int(x),)
        x = tuple(int(v) for v in x)
        if len(x) != self.d:
            raise ValueError(f"expected {self.d} coordinates, got {len(x)}")
        return x

    def multiply(self, x, y):
        return tuple(a + b for a, b in zip(x, y))

    def inverse(self, x):
        return tuple(-a for a in x)

    def to_coords(self, elements):
        rows = [self.canonical(e) for e in elements]
        return np.array(rows, dtype=np.int64).reshape(len(rows), self.d)

    def from_coords(self, coords):
        return [tuple(int(v) for v in row) for row in np.asarray(coords)]

    def pack(self, coords):
        coords = np.asarray(coords, dtype=np.int64)
        bits = self._bits
        off = 1 << (bits - 1)
        _check_range(coords, -off, off, "Z^d coordinate")
        key = np.zeros(coords.shape[:-1], dtype=np.int64)
        for i in range(self.d):
            key = (key << bits) | (coords[..., i] + off)
        return key

    def unpack(self, keys):
        keys = np.asarray(keys, dtype=np.int64)
        bits = self._bits
        off = 1 << (bits - 1)
        mask = (1 << bits) - 1
        out = np.empty(keys.shape + (self.d,), dtype=np.int64)
        for i in range(self.d):
            shift = bits * (self.d - 1 - i)
            out[..., i] = ((keys >> shift) & mask) - off
        return out

    def mul_coords(self, x, y):
        return np.asarray(x, dtype=np.int64) + np.asarray(y, dtype=np.int64)

    def inv_coords(self, x):
        return -np.asarray(x, dtype=np.int64)

    def generator_elements(self):
        gens = []
        for i in range(self.d):
            for s in (1, -1):
                e = [0] * self.d
                e[i] = s
                gens.append(tuple(e))
        return gens

    def box_coords(self, length):
        axes = [np.arange(length, dtype=np.int64)] * self.d
        grid = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grid], axis=-1)

    def box_size(self, length):
        return int(length) ** self.d


_H_AB_BITS = 16
_H_C_BITS = 30


@dataclass(frozen=True, eq=True)
class HeisenbergModel(GroupModel):
    """Integer Heisenberg group: (a,b,c)(a',b',c') = (a+a', b+b', c+c'+ab')."""

    @property
    def name(self) -> str:  # type: ignore[override]
        return "heisenberg"

    @property
    def ncoords(self) -> int:  # type: ignore[override]
        return 3

    def identity(self):
        return (0, 0, 0)

    def canonical(self, x):
        x = tuple(int(v) for v in x)
        if len(x) != 3:
            raise ValueError("Heisenberg elements are integer triples")
        return x

    def multiply(self, x, y):
        a, b, c = x
        a2, b2, c2 = y
        return (a + a2, b + b2, c + c2 + a * b2)

    def inverse(self, x):
        a, b, c = x
        return (-a, -b, -c + a * b)

    def to_coords(self, elements):
        rows = [self.canonical(e) for e in elements]
        return np.array(rows, dtype=np.int64).reshape(len(rows), 3)

    def from_coords(self, coords):
        return [tuple(int(v) for v in row) for row in np.asarray(coords)]

    def pack(self, coords):
        coords = np.asarray(coords, dtype=np.int64)
        oab = 1 << (_H_AB_BITS - 1)
        oc = 1 << (_H_C_BITS - 1)
        _check_range(coords[..., :2], -oab, oab, "Heisenberg a/b coordinate")
        _check_range(coords[..., 2], -oc, oc, "Heisenberg c coordinate")
        return (
            ((coords[..., 0] + oab) << (_H_AB_BITS + _H_C_BITS))
            | ((coords[..., 1] + oab) << _H_C_BITS)
            | (coords[..., 2] + oc)
        )

    def unpack(self, keys):
        keys = np.asarray(keys, dtype=np.int64)
        oab = 1 << (_H_AB_BITS - 1)
        oc = 1 << (_H_C_BITS - 1)
        out = np.empty(keys.shape + (3,), dtype=np.int64)
        out[..., 0] = ((keys >> (_H_AB_BITS + _H_C_BITS)) & ((1 << _H_AB_BITS) - 1)) - oab
        out[..., 1] = ((keys >> _H_C_BITS) & ((1 << _H_AB_BITS) - 1)) - oab
        out[..., 2] = (keys & ((1 << _H_C_BITS) - 1)) - oc
        return out

    def mul_coords(self, x, y):
        x = np.asarray(x, dtype=np.int64)
        y = np.asarray(y, dtype=np.int64)
        out = x + y
        out[..., 2] += x[..., 0] * y[..., 1]
        return out

    def inv_coords(self, x):
        x = np.asarray(x, dtype=np.int64)
        out = -x
        out[..., 2] += x[..., 0] * x[..., 1]
        return out

    def generator_elements(self):
        return [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0)]

    def box_coords(self, length):
        L = int(length)
        a = np.arange(-L, L + 1, dtype=np.int64)
        c = np.arange(-L * L, L * L + 1, dtype=np.int64)
        A, B, C = np.meshgrid(a, a, c, indexing="ij")
        return np.stack([A.ravel(), B.ravel(), C.ravel()], axis=-1)

    def box_size(self, length):
        L = int(length)
        return (2 * L + 1) ** 2 * (2 * L * L + 1)


LAMP_RADIUS = 24
_LAMP_BITS = 2 * LAMP_RADIUS + 1
_CURSOR_BITS = 13


@dataclass(frozen=True, eq=True)
class LamplighterModel(GroupModel):
    """Lamplighter group Z/2 wr Z.

    An element is ``(lamps, cursor)`` with ``lamps`` the sorted tuple of lit
    positions.  ``(f, a)(g, b) = (f xor (g shifted by a), a + b)``.  Lit lamps
    must stay within ``[-LAMP_RADIUS, LAMP_RADIUS]``.
    """

    @property
    def name(self) -> str:  # type: ignore[override]
        return "lamplighter"

    @property
    def ncoords(self) -> int:  # type: ignore[override]
        return 2

    def identity(self):
        return ((), 0)

    def canonical(self, x):
        lamps, cursor = x
        if isinstance(lamps, (int, np.integer)):
            raise ValueError("lamplighter elements are (lamps, cursor) pairs")
        lamps = tuple(sorted(int(p) for p in lamps))
        if len(set(lamps)) != len(lamps):
            raise ValueError("duplicate lamp positions")
        return (lamps, int(cursor))

    def multiply(self, x, y):
        f, a = x
        g, b = y
        lit = set(f).symmetric_difference(p + a for p in g)
        return (tuple(sorted(lit)), a + b)

    def inverse(self, x):
        f, a = x
        return (tuple(sorted(p - a for p in f)), -a)

    def to_coords(self, elements):
        rows = []
        for e in elements:
            lamps, cursor = self.canonical(e)
            mask = 0
            for p in lamps:
                if not -LAMP_RADIUS <= p <= LAMP_RADIUS:
                    raise EncodingRangeError(f"lamp position {p} outside encodable range")
                mask |= 1 << (p + LAMP_RADIUS)
            rows.append((mask, cursor))
        return np.array(rows, dtype=np.int64).reshape(len(rows), 2)

    def from_coords(self, coords):
        out = []
        for mask, cursor in np.asarray(coords):
            mask = int(mask)
            lamps = tuple(p - LAMP_RADIUS for p in range(_LAMP_BITS) if mask >> p & 1)
            out.append((lamps, int(cursor)))
        return out

    def pack(self, coords):
        coords = np.asarray(coords, dtype=np.int64)
        off = 1 << (_CURSOR_BITS - 1)
        _check_range(coords[..., 0], 0, 1 << _LAMP_BITS, "lamp configuration")
        _check_range(coords[..., 1], -off, off, "lamplighter cursor")
        return (coords[..., 0] << _CURSOR_BITS) | (coords[..., 1] + off)

    def unpack(self, keys):
        keys = np.asarray(keys, dtype=np.int64)
        off = 1 << (_CURSOR_BITS - 1)
        out = np.empty(keys.shape + (2,), dtype=np.int64)
        out[..., 0] = keys >> _CURSOR_BITS
        out[..., 1] = (keys & ((1 << _CURSOR_BITS) - 1)) - off
        return out

    @staticmethod
    def _shift(mask: np.ndarray, s: np.ndarray) -> np.ndarray:
        mask, s = np.broadcast_arrays(np.asarray(mask, np.int64), np.asarray(s, np.int64))
        mag = np.minimum(np.abs(s), _LAMP_BITS)
        up = s >= 0
        lost = np.where(
            up,
            np.right_shift(mask, _LAMP_BITS - mag),
            mask & (np.left_shift(np.int64(1), mag) - 1),
        )
        if np.any(lost != 0):
            raise EncodingRangeError("lamp moved outside encodable range")
        return np.where(up, np.left_shift(mask, mag), np.right_shift(mask, mag))

    def mul_coords(self, x, y):
        x = np.asarray(x, dtype=np.int64)
        y = np.asarray(y, dtype=np.int64)
        mask = x[..., 0] ^ self._shift(y[..., 0], x[..., 1])
        return np.stack([mask, x[..., 1] + y[..., 1]], axis=-1)

    def inv_coords(self, x):
        x = np.asarray(x, dtype=np.int64)
        return np.stack([self._shift(x[..., 0], -x[..., 1]), -x[..., 1]], axis=-1)

    def generator_elements(self):
        return [((), 1), ((), -1), ((0,), 0)]

    def box_coords(self, length):
        L = int(length)
        if L > LAMP_RADIUS:
            raise EncodingRangeError("lamplighter box exceeds lamp radius")
        width = 2 * L + 1
        masks = np.arange(1 << width, dtype=np.int64) << (LAMP_RADIUS - L)
        cursors = np.arange(-L, L + 1, dtype=np.int64)
        M, C = np.meshgrid(masks, cursors, indexing="ij")
        return np.stack([M.ravel(), C.ravel()], axis=-1)

    def box_size(self, length):
        L = int(length)
        return (1 << (2 * L + 1)) * (2 * L + 1)

    def format_element(self, x):
        lamps, cursor = x
        return ",".join(str(p) for p in lamps) + f"|{cursor}"

    def parse_element(self, token):
        lamps, _, cursor = token.strip().partition("|")
        lit = [int(p) for p in lamps.split(",") if p.strip()]
        return self.canonical((lit, int(cursor)))


def get_model(name: str) -> GroupModel:
    """Look up a model by name: ``Z``, ``Z2``/``Z^2``, ``heisenberg``, ``lamplighter``."""
    key = name.strip().lower().replace("^", "")
    if key == "z":
        return ZdModel(1)
    if key.startswith("z") and key[1:].isdigit():
        return ZdModel(int(key[1:]))
    if key in ("heisenberg", "h3"):
        return HeisenbergModel()
    if key in ("lamplighter", "lamplighter2"):
        return LamplighterModel()
    raise ValueError(f"unknown group {name!r}")


class FiniteSubset:
    """A finite set of group elements held as a sorted array of unique keys.

    Iteration yields element tuples in canonical order.  ``len`` is the
    counting measure.
    """

    __slots__ = ("model", "keys")

    def __init__(self, model: GroupModel, keys, *, _sorted: bool = False):
        keys = np.asarray(keys, dtype=np.int64).ravel()
        if not _sorted:
            keys = np.unique(keys)
        keys.setflags(write=False)
        self.model = model
        self.keys = keys

    # ---- construction ---------------------------------------------------
    @classmethod
    def from_elements(cls, model: GroupModel, elements: Iterable) -> "FiniteSubset":
        elements = list(elements)
        if not elements:
            return cls.empty(model)
        return cls(model, model.pack(model.to_coords(elements)))

    @classmethod
    def from_coords(cls, model: GroupModel, coords: np.ndarray) -> "FiniteSubset":
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, model.ncoords)
        return cls(model, model.pack(coords))

    @classmethod
    def empty(cls, model: GroupModel) -> "FiniteSubset":
        return cls(model, np.empty(0, dtype=np.int64), _sorted=True)

    @classmethod
    def singleton(cls, model: GroupModel, element=None) -> "FiniteSubset":
        element = model.identity() if element is None else element
        return cls.from_elements(model, [element])

    # ---- basic protocol ---------------------------------------------------
    def __len__(self) -> int:
        return int(self.keys.size)

    @property
    def cardinality(self) -> int:
        return int(self.keys.size)

    def coords(self) -> np.ndarray:
        return self.model.unpack(self.keys)

    def elements(self) -> list[Element]:
        return self.model.from_coords(self.coords())

    def __iter__(self) -> Iterator[Element]:
        return iter(self.elements())

    def __contains__(self, element) -> bool:
        key = self.model.pack(self.model.to_coords([element]))[0]
        i = np.searchsorted(self.keys, key)
        return bool(i < self.keys.size and self.keys[i] == key)

    def contains_keys(self, keys: np.ndarray) -> np.ndarray:
        keys = np.asarray(keys, dtype=np.int64)
        if self.keys.size == 0:
            return np.zeros(keys.shape, dtype=bool)
        idx = np.searchsorted(self.keys, keys)
        idx = np.minimum(idx, self.keys.size - 1)
        return self.keys[idx] == keys

    def __eq__(self, other) -> bool:
        if not isinstance(other, FiniteSubset):
            return NotImplemented
        return self.model == other.model and np.array_equal(self.keys, other.keys)

    def __hash__(self) -> int:
        return hash((self.model, self.keys.tobytes()))

    def __repr__(self) -> str:
        shown = self.elements()[:4] if len(self) <= 1000 else []
        more = ", ..." if len(self) > len(shown) else ""
        return f"FiniteSubset({self.model.name}, |E|={len(self)}, {shown}{more})"

    def __bool__(self) -> bool:
        return self.keys.size > 0

    # ---- set algebra --------------------------------------------------------
    def _same(self, other: "FiniteSubset") -> None:
        if self.model != other.model:
            raise ModelMismatchError(f"{self.model.name} vs {other.model.name}")

    def __or__(self, other):
        self._same(other)
        return FiniteSubset(self.model, np.union1d(self.keys, other.keys), _sorted=True)

    def __and__(self, other):
        self._same(other)
        return FiniteSubset(
            self.model, np.intersect1d(self.keys, other.keys, assume_unique=True), _sorted=True
        )

    def __sub__(self, other):
        self._same(other)
        return FiniteSubset(
            self.model, np.setdiff1d(self.keys, other.keys, assume_unique=True), _sorted=True
        )

    def __xor__(self, other):
        self._same(other)
        return FiniteSubset(
            self.model, np.setxor1d(self.keys, other.keys, assume_unique=True), _sorted=True
        )

    def __le__(self, other):
        self._same(other)
        return bool(np.all(other.contains_keys(self.keys)))

    def issubset(self, other) -> bool:
        return self <= other

    def isdisjoint(self, other) -> bool:
        self._same(other)
        return not np.any(other.contains_keys(self.keys))

    @staticmethod
    def union_all(model: GroupModel, sets: Sequence["FiniteSubset"]) -> "FiniteSubset":
        if not sets:
            return FiniteSubset.empty(model)
        return FiniteSubset(model, np.concatenate([s.keys for s in sets]))

    # ---- translations ---------------------------------------------------------
    def inverse(self) -> "FiniteSubset":
        return FiniteSubset(self.model, self.model.pack(self.model.inv_coords(self.coords())))

    def left_translate(self, g) -> "FiniteSubset":
        """The set ``g E``."""
        gc = self.model.to_coords([g])[0]
        return FiniteSubset(self.model, self.model.pack(self.model.mul_coords(gc, self.coords())))

    def right_translate(self, g) -> "FiniteSubset":
        """The set ``E g``."""
        gc = self.model.to_coords([g])[0]
        return FiniteSubset(self.model, self.model.pack(self.model.mul_coords(self.coords(), gc)))

    def min_element(self) -> Element:
        return self.model.from_coords(self.model.unpack(self.keys[:1]))[0]

    # ---- text format -------------------------------------------------------------
    def to_text(self) -> str:
        lines = [f"# group: {self.model.name}", f"# size: {len(self)}"]
        lines += [self.model.format_element(e) for e in self.elements()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, model: GroupModel | None = None) -> "FiniteSubset":
        elements = []
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("group:") and model is None:
                    model = get_model(body.split(":", 1)[1])
                continue
            if model is None:
                raise ValueError("set text has no '# group:' header and no model was given")
            elements.append(model.parse_element(line))
        if model is None:
            raise ValueError("cannot infer group model from empty text")
        return cls.from_elements(model, elements)


def folner_size(model: GroupModel, n: int, schedule: Schedule | None = None) -> int:
    """Cardinality of ``folner_set(model, n)`` without enumerating it."""
    return model.box_size((schedule or DEFAULT_SCHEDULE).length(n))


def folner_set(model: GroupModel, n: int, schedule: Schedule | None = None) -> FiniteSubset:
    """Canonical Folner set of index ``n``.

    Boxes ``[0, L)^d`` in Z^d, ``[-L, L]^2 x [-L^2, L^2]`` in the Heisenberg
    group, lamps and cursor in ``[-L, L]`` for the lamplighter, where
    ``L = schedule.length(n)``.
    """
    L = (schedule or DEFAULT_SCHEDULE).length(n)
    return FiniteSubset(model, model.pack(model.box_coords(L)))


def word_ball(model: GroupModel, radius: int, generators: FiniteSubset | None = None) -> FiniteSubset:
    """Ball of the given radius in the Cayley graph, by breadth-first search."""
    gens = (generators if generators is not None else model.generators())
    gens = np.union1d(gens.keys, gens.inverse().keys)
    gcoords = model.unpack(gens)
    ident = model.pack(model.to_coords([model.identity()]))
    ball = ident
    frontier = model.unpack(ident)
    for _ in range(radius):
        prod = model.mul_coords(frontier[:, None, :], gcoords[None, :, :]).reshape(-1, model.ncoords)
        keys = np.unique(model.pack(prod))
        new = np.setdiff1d(keys, ball, assume_unique=True)
        if new.size == 0:
            break
        ball = np.union1d(ball, new)
        frontier = model.unpack(new)
    return FiniteSubset(model, ball, _sorted=True)
