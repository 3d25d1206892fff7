"""Codecs between designs, task metadata, scores and integer token ids.

Inputs are serialized as ``name: ...; description: ...; objective: ...; x: {"x0":0.5,...}``
and tokenized byte by byte.  Scores use a sign / fixed-length mantissa /
power-of-ten exponent token layout (``1.31 -> <+><1><3><1><E-2>``).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from decimal import ROUND_HALF_EVEN, Decimal
from enum import Enum
from typing import Sequence

import numpy as np


class CodecError(ValueError):
    """Raised for values or token sequences a codec cannot represent."""


class Kind(str, Enum):
    CONTINUOUS = "continuous"
    CATEGORICAL = "categorical"


@dataclass(frozen=True)
class Variable:
    name: str
    kind: Kind
    lo: float = 0.0
    hi: float = 1.0
    k: int = 0

    def __post_init__(self):
        if self.kind is Kind.CONTINUOUS and not self.lo < self.hi:
            raise ValueError(f"variable {self.name!r}: need lo < hi, got [{self.lo}, {self.hi}]")
        if self.kind is Kind.CATEGORICAL and self.k < 2:
            raise ValueError(f"variable {self.name!r}: need at least 2 categories, got {self.k}")


@dataclass(frozen=True)
class DesignSpace:
    variables: tuple[Variable, ...]

    def __post_init__(self):
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise ValueError("variable names must be unique")

    @classmethod
    def continuous(cls, dim: int, lo: float, hi: float) -> "DesignSpace":
        return cls(tuple(Variable(f"x{i}", Kind.CONTINUOUS, lo=lo, hi=hi) for i in range(dim)))

    @classmethod
    def categorical(cls, dim: int, k: int) -> "DesignSpace":
        return cls(tuple(Variable(f"x{i}", Kind.CATEGORICAL, k=k) for i in range(dim)))

    @property
    def dim(self) -> int:
        return len(self.variables)

    @property
    def is_continuous(self) -> bool:
        return all(v.kind is Kind.CONTINUOUS for v in self.variables)

    @property
    def is_categorical(self) -> bool:
        return all(v.kind is Kind.CATEGORICAL for v in self.variables)

    @property
    def lower(self) -> np.ndarray:
        return np.array([v.lo for v in self.variables], dtype=float)

    @property
    def upper(self) -> np.ndarray:
        return np.array([v.hi for v in self.variables], dtype=float)

    @property
    def n_categories(self) -> np.ndarray:
        return np.array([v.k for v in self.variables], dtype=int)

    def validate(self, x: Sequence[float]) -> None:
        """Raise CodecError naming the first variable ``x`` violates."""
        if len(x) != self.dim:
            raise CodecError(f"design has {len(x)} values, space has {self.dim} variables")
        for var, value in zip(self.variables, x):
            if var.kind is Kind.CONTINUOUS:
                if not (math.isfinite(value) and var.lo <= value <= var.hi):
                    raise CodecError(f"{var.name}={value} outside [{var.lo}, {var.hi}]")
            else:
                if value != int(value) or not 0 <= int(value) < var.k:
                    raise CodecError(f"{var.name}={value} is not a category in [0, {var.k})")

    def contains(self, x: Sequence[float]) -> bool:
        try:
            self.validate(x)
        except CodecError:
            return False
        return True

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Uniform designs, one per row."""
        out = np.empty((n, self.dim))
        for j, var in enumerate(self.variables):
            if var.kind is Kind.CONTINUOUS:
                out[:, j] = rng.uniform(var.lo, var.hi, size=n)
            else:
                out[:, j] = rng.integers(0, var.k, size=n)
        return out

    def to_dict(self) -> dict:
        return {
            "variables": [
                {"name": v.name, "kind": v.kind.value, "lo": v.lo, "hi": v.hi, "k": v.k}
                for v in self.variables
            ]
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DesignSpace":
        return cls(
            tuple(
                Variable(v["name"], Kind(v["kind"]), lo=v.get("lo", 0.0), hi=v.get("hi", 1.0), k=v.get("k", 0))
                for v in d["variables"]
            )
        )


@dataclass(frozen=True)
class Metadata:
    name: str
    description: str
    objective: str

    def __post_init__(self):
        for field in ("name", "description", "objective"):
            value = getattr(self, field)
            if not value:
                raise ValueError(f"metadata {field} must be non-empty")
            if "\n" in value or "\r" in value:
                raise ValueError(f"metadata {field} must not contain newlines")

    def text(self) -> str:
        return f"name: {self.name}; description: {self.description}; objective: {self.objective}"


# --- design strings -------------------------------------------------------


def format_number(value: float, sig_digits: int = 4) -> str:
    """Shortest decimal rendering of ``value`` at ``sig_digits`` significant digits."""
    if value == 0:
        return "0"
    text = f"{value:.{sig_digits}g}"
    if "e" in text:
        mantissa, exp = text.split("e")
        text = f"{mantissa}e{int(exp)}"
    return text


def serialize_design(space: DesignSpace, x: Sequence[float], sig_digits: int = 4) -> str:
    if space.dim == 0:
        raise CodecError("cannot serialize a design over an empty space")
    if not 3 <= sig_digits <= 8:
        raise CodecError(f"sig_digits must lie in [3, 8], got {sig_digits}")
    space.validate(x)
    parts = []
    for var, value in zip(space.variables, x):
        if var.kind is Kind.CONTINUOUS:
            rendered = format_number(float(value), sig_digits)
        else:
            rendered = str(int(value))
        parts.append(f'"{var.name}":{rendered}')
    return "{" + ",".join(parts) + "}"


def compose_input(m: Metadata, design_text: str) -> str:
    return f"{m.text()}; x: {design_text}"


# --- vocabulary -----------------------------------------------------------


class Vocabulary:
    """Token ids: bytes 0-255, then PAD/BOS/EOS/SEP, signs, digits, exponents."""

    N_BYTES = 256

    def __init__(self, e_max: int = 16):
        if e_max < 1:
            raise ValueError("e_max must be positive")
        self.e_max = e_max
        self.pad = 256
        self.bos = 257
        self.eos = 258
        self.sep = 259
        self.sign_plus = 260
        self.sign_minus = 261
        self.digit0 = 262
        self.exp0 = self.digit0 + 10  # id of E-e_max
        self.size = 256 + 4 + 2 + 10 + (2 * e_max + 1)

    def digit(self, d: int) -> int:
        return self.digit0 + d

    def exponent(self, e: int) -> int:
        if abs(e) > self.e_max:
            raise CodecError(f"exponent {e} needs e_max >= {abs(e)} (have {self.e_max})")
        return self.exp0 + e + self.e_max

    def is_byte(self, t: int) -> bool:
        return 0 <= t < 256

    def is_digit(self, t: int) -> bool:
        return self.digit0 <= t < self.digit0 + 10

    def is_exponent(self, t: int) -> bool:
        return self.exp0 <= t < self.size

    def token_names(self) -> list[str]:
        names = [f"<0x{b:02X}>" for b in range(256)]
        names += ["<PAD>", "<BOS>", "<EOS>", "<SEP>", "<+>", "<->"]
        names += [f"<{d}>" for d in range(10)]
        names += [f"<E{e}>" for e in range(-self.e_max, self.e_max + 1)]
        return names

    def fingerprint(self) -> str:
        """Hash of the id assignment; checkpoints refuse a mismatching vocabulary."""
        return hashlib.sha256("\x00".join(self.token_names()).encode()).hexdigest()[:16]


DEFAULT_VOCAB = Vocabulary()


def tokenize(s: str, vocab: Vocabulary = DEFAULT_VOCAB) -> list[int]:
    return [vocab.bos, *s.encode("utf-8"), vocab.eos]


def detokenize(tokens: Sequence[int], vocab: Vocabulary = DEFAULT_VOCAB) -> str:
    tokens = list(tokens)
    if len(tokens) < 2 or tokens[0] != vocab.bos or tokens[-1] != vocab.eos:
        raise CodecError("token sequence must be framed by BOS ... EOS")
    body = tokens[1:-1]
    for pos, t in enumerate(body, start=1):
        if not vocab.is_byte(t):
            raise CodecError(f"non-byte token {t} at position {pos}")
    return bytes(body).decode("utf-8")


# --- P10 score tokens -----------------------------------------------------


def p10_encode(y: float, mantissa_len: int = 3, vocab: Vocabulary = DEFAULT_VOCAB) -> list[int]:
    """Sign, ``mantissa_len`` digits and one exponent token, rounding half-even."""
    if mantissa_len < 1:
        raise CodecError("mantissa_len must be >= 1")
    if not math.isfinite(y):
        raise CodecError(f"cannot encode non-finite score {y}")
    if y == 0:
        return [vocab.sign_plus] + [vocab.digit(0)] * mantissa_len + [vocab.exponent(0)]
    dec = Decimal(repr(float(y)))
    sign = vocab.sign_minus if dec < 0 else vocab.sign_plus
    dec = abs(dec)
    exponent = dec.adjusted() - mantissa_len + 1
    mantissa = int((dec.scaleb(-exponent)).quantize(Decimal(1), rounding=ROUND_HALF_EVEN))
    if mantissa >= 10**mantissa_len:  # rounding carried into a new digit, e.g. 9.995
        mantissa //= 10
        exponent += 1
    if abs(exponent) > vocab.e_max:
        raise CodecError(f"score {y} needs exponent {exponent}; requires e_max >= {abs(exponent)}")
    digits = str(mantissa).zfill(mantissa_len)
    return [sign] + [vocab.digit(int(c)) for c in digits] + [vocab.exponent(exponent)]


def p10_decode(tokens: Sequence[int], vocab: Vocabulary = DEFAULT_VOCAB) -> float:
    tokens = list(tokens)
    if len(tokens) < 3:
        raise CodecError("P10 sequence needs a sign, at least one digit and an exponent")
    sign, *digits, exp = tokens
    if sign not in (vocab.sign_plus, vocab.sign_minus):
        raise CodecError(f"expected sign token first, got {sign}")
    if not all(vocab.is_digit(d) for d in digits):
        raise CodecError("expected digit tokens between sign and exponent")
    if not vocab.is_exponent(exp):
        raise CodecError(f"expected exponent token last, got {exp}")
    mantissa = int("".join(str(d - vocab.digit0) for d in digits))
    if mantissa == 0:
        return 0.0
    exponent = exp - vocab.exp0 - vocab.e_max
    value = float(Decimal(mantissa).scaleb(exponent))
    return -value if sign == vocab.sign_minus else value


def p10_length(mantissa_len: int = 3) -> int:
    return mantissa_len + 2


# --- token categories for attention profiling -----------------------------

CATEGORIES = ("metadata", "key", "numeric", "structural", "eos")


def token_categories(text: str, vocab: Vocabulary = DEFAULT_VOCAB) -> list[str]:
    """Category of every token of ``tokenize(text)`` for a composed input.

    Everything before the design dictionary counts as metadata; inside it,
    variable names are ``key``, value characters ``numeric`` and braces,
    quotes, colons and commas ``structural``.  BOS is structural.
    """
    raw = text.encode("utf-8")
    start = raw.rfind(b"x: {")
    start = len(raw) if start < 0 else start + 3
    cats = ["structural"]
    in_key = False
    for i, b in enumerate(raw):
        ch = chr(b)
        if i < start:
            cats.append("metadata")
        elif ch == '"':
            in_key = not in_key
            cats.append("structural")
        elif in_key:
            cats.append("key")
        elif ch in "{}:,":
            cats.append("structural")
        else:
            cats.append("numeric")
    cats.append("eos")
    return cats
