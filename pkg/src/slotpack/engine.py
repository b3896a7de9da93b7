"""Exact-arithmetic virtual machine for RNS-CKKS slot semantics.

A :class:`HeContext` owns the parameters and an operation ledger.  Every
homomorphic primitive is a method on the context so that the ledger sees
every operation; ciphertexts (:class:`CtVec`) and plaintexts (:class:`PtVec`)
are immutable value objects.

No cryptography happens here: slots hold float64 values and the only
"security" state tracked is the remaining multiplicative level.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import (
    DepthExhausted,
    InvalidGeometry,
    LevelMismatch,
    MissingWeight,
    ShapeMismatch,
    TargetAboveCurrent,
)

OP_KINDS = ("add_pt", "add_ct", "mul_pt", "mul_ct", "rotate", "bootstrap", "level_drop")

# Seconds per operation measured on the reference RNS-CKKS deployment.
TABLE_I_WEIGHTS: dict[str, float] = {
    "add_pt": 0.20,
    "add_ct": 0.22,
    "mul_pt": 0.57,
    "mul_ct": 1.26,
    "rotate": 1.06,
    "bootstrap": 14.176,
    "level_drop": 0.0,
}


@dataclass(frozen=True)
class HeParams:
    """Scheme parameters.

    ``ring_dim`` is carried as metadata only; nothing in the simulator
    depends on it.
    """

    n_slots: int = 1 << 14
    max_level: int = 26
    boot_depth: int = 14
    cost_weights: Mapping[str, float] = field(default_factory=lambda: dict(TABLE_I_WEIGHTS))
    ring_dim: int = 1 << 16

    def __post_init__(self):
        if self.n_slots < 1 or self.n_slots & (self.n_slots - 1):
            raise InvalidGeometry(f"n_slots must be a power of two, got {self.n_slots}")
        if self.max_level < 0 or self.boot_depth < 0:
            raise InvalidGeometry("levels must be non-negative")
        if self.boot_depth > self.max_level:
            raise InvalidGeometry("boot_depth exceeds max_level")
        if self.max_level - self.boot_depth < 1:
            raise InvalidGeometry("bootstrapping must leave at least one usable level")
        if self.cost_weights.get("level_drop", 0.0) != 0.0:
            raise InvalidGeometry("level_drop must carry zero cost")

    @property
    def usable_level(self) -> int:
        """Level of a freshly bootstrapped ciphertext."""
        return self.max_level - self.boot_depth

    @classmethod
    def parse(cls, text: str, **overrides) -> "HeParams":
        """Build from a ``"L=26,boot=14,slots=16384"`` style string."""
        aliases = {"l": "max_level", "max_level": "max_level", "boot": "boot_depth",
                   "boot_depth": "boot_depth", "slots": "n_slots", "n_slots": "n_slots",
                   "ring": "ring_dim", "ring_dim": "ring_dim"}
        kwargs = dict(overrides)
        for item in filter(None, (p.strip() for p in text.split(","))):
            key, sep, value = item.partition("=")
            name = aliases.get(key.strip().lower())
            if not sep or name is None:
                raise ValueError(f"bad parameter item {item!r}")
            kwargs[name] = int(value)
        return cls(**kwargs)


class OpLedger:
    """Monotone per-kind operation counters."""

    def __init__(self, counts: Mapping[str, int] | None = None):
        self.counts: Counter = Counter({k: 0 for k in OP_KINDS})
        if counts:
            for kind, n in counts.items():
                self.record(kind, n)

    def record(self, kind: str, n: int = 1) -> None:
        if kind not in OP_KINDS:
            raise KeyError(kind)
        if n < 0:
            raise ValueError("ledger counts only increase")
        self.counts[kind] += n

    def __getitem__(self, kind: str) -> int:
        return self.counts[kind]

    def copy(self) -> "OpLedger":
        return OpLedger(self.counts)

    def __add__(self, other: "OpLedger") -> "OpLedger":
        return OpLedger({k: self.counts[k] + other.counts[k] for k in OP_KINDS})

    def since(self, earlier: "OpLedger") -> "OpLedger":
        """Counts accumulated after ``earlier`` was snapshotted."""
        return OpLedger({k: self.counts[k] - earlier.counts[k] for k in OP_KINDS})

    def as_dict(self) -> dict[str, int]:
        return {k: int(self.counts[k]) for k in OP_KINDS}

    def __eq__(self, other):
        if not isinstance(other, OpLedger):
            return NotImplemented
        return self.as_dict() == other.as_dict()

    def __repr__(self):
        nonzero = {k: v for k, v in self.as_dict().items() if v}
        return f"OpLedger({nonzero})"


def estimate_cost(ledger: OpLedger | Mapping[str, int], weights: Mapping[str, float]) -> float:
    """Weighted operation count in seconds."""
    counts = ledger.as_dict() if isinstance(ledger, OpLedger) else dict(ledger)
    total = 0.0
    for kind, n in counts.items():
        if not n:
            continue
        if kind not in weights:
            raise MissingWeight(kind)
        total += n * weights[kind]
    return total


@dataclass(frozen=True, eq=False)
class PtVec:
    slots: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "slots", np.asarray(self.slots, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class CtVec:
    slots: np.ndarray
    level: int

    def __post_init__(self):
        object.__setattr__(self, "slots", np.asarray(self.slots, dtype=np.float64))
        if self.level < 0:
            raise DepthExhausted(f"negative level {self.level}")


class HeContext:
    """Parameters plus the ledger of everything executed under them.

    A context is meant to be driven by a single worker; run independent
    inferences in independent contexts.
    """

    def __init__(self, params: HeParams | None = None):
        self.params = params or HeParams()
        self.ledger = OpLedger()

    @property
    def n_slots(self) -> int:
        return self.params.n_slots

    # -- encoding -------------------------------------------------------

    def _vector(self, values) -> np.ndarray:
        v = np.asarray(values, dtype=np.float64)
        if v.ndim == 0:
            v = np.full(self.n_slots, float(v))
        if v.shape != (self.n_slots,):
            raise ShapeMismatch(f"expected {self.n_slots} slots, got shape {v.shape}")
        return v

    def encode(self, values) -> PtVec:
        """Plaintext from a slot vector or a scalar broadcast to every slot."""
        return PtVec(self._vector(values).copy())

    def encrypt(self, values, level: int | None = None) -> CtVec:
        """Fresh ciphertext; defaults to the post-bootstrap level."""
        if level is None:
            level = self.params.usable_level
        if level > self.params.max_level:
            raise TargetAboveCurrent(f"level {level} above max_level")
        return CtVec(self._vector(values).copy(), level)

    def decrypt(self, ct: CtVec) -> np.ndarray:
        return ct.slots.copy()

    # -- arithmetic -----------------------------------------------------

    def _check(self, *vecs):
        for v in vecs:
            if v.slots.shape != (self.n_slots,):
                raise ShapeMismatch(f"operand has {v.slots.shape[0]} slots, context has {self.n_slots}")

    def _same_level(self, a: CtVec, b: CtVec):
        if a.level != b.level:
            raise LevelMismatch(f"levels {a.level} and {b.level}")

    def add_ct(self, a: CtVec, b: CtVec) -> CtVec:
        self._check(a, b)
        self._same_level(a, b)
        self.ledger.record("add_ct")
        return CtVec(a.slots + b.slots, a.level)

    def sub_ct(self, a: CtVec, b: CtVec) -> CtVec:
        """Subtraction; priced and counted as a ciphertext addition."""
        self._check(a, b)
        self._same_level(a, b)
        self.ledger.record("add_ct")
        return CtVec(a.slots - b.slots, a.level)

    def add_pt(self, ct: CtVec, pt: PtVec) -> CtVec:
        self._check(ct, pt)
        self.ledger.record("add_pt")
        return CtVec(ct.slots + pt.slots, ct.level)

    def mul_pt(self, ct: CtVec, pt: PtVec) -> CtVec:
        self._check(ct, pt)
        if ct.level < 1:
            raise DepthExhausted("plaintext multiply at level 0; a bootstrap is missing")
        self.ledger.record("mul_pt")
        return CtVec(ct.slots * pt.slots, ct.level - 1)

    def mul_ct(self, a: CtVec, b: CtVec) -> CtVec:
        self._check(a, b)
        self._same_level(a, b)
        if a.level < 1:
            raise DepthExhausted("ciphertext multiply at level 0; a bootstrap is missing")
        self.ledger.record("mul_ct")
        return CtVec(a.slots * b.slots, a.level - 1)

    def rotate(self, ct: CtVec, k: int) -> CtVec:
        """Left cyclic shift: slot ``i`` of the result holds slot ``i + k``."""
        self._check(ct)
        self.ledger.record("rotate")
        return CtVec(np.roll(ct.slots, -(int(k) % self.n_slots)), ct.level)

    def bootstrap(self, ct: CtVec) -> CtVec:
        self._check(ct)
        self.ledger.record("bootstrap")
        return CtVec(ct.slots.copy(), self.params.usable_level)

    def level_drop(self, ct: CtVec, target: int) -> CtVec:
        if target > ct.level:
            raise TargetAboveCurrent(f"cannot raise level {ct.level} to {target}")
        self.ledger.record("level_drop")
        return CtVec(ct.slots, target)

    def align(self, a: CtVec, b: CtVec) -> tuple[CtVec, CtVec]:
        """Drop the higher of two ciphertexts to the lower level."""
        if a.level > b.level:
            a = self.level_drop(a, b.level)
        elif b.level > a.level:
            b = self.level_drop(b, a.level)
        return a, b

    def sum_ct(self, cts) -> CtVec:
        """Left-fold ``add_ct`` over a non-empty sequence."""
        cts = list(cts)
        acc = cts[0]
        for ct in cts[1:]:
            acc = self.add_ct(acc, ct)
        return acc

    def estimated_seconds(self) -> float:
        return estimate_cost(self.ledger, self.params.cost_weights)
