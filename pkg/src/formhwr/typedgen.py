"""Typed text generation: per-type grammars and distribution-matched sampling.

Every generator is a pure function of its random stream, so a dataset is
fully reproducible from (root seed, sample index, configuration).
"""

from __future__ import annotations

import calendar
import enum
from dataclasses import dataclass
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Mapping

from .errors import ConfigurationError, GenerationError
from .rng import SeedStream, Xoshiro256StarStar, as_rng
from .textnorm import ascii_fold


class ContentType(enum.IntEnum):
    """The ten semantic field categories, with stable one-hot indices."""

    FREE_TEXT = 0
    NAME = 1
    PHONE_NUMBER = 2
    DATE = 3
    TIME = 4
    ADDRESS = 5
    LICENSE_PLATE = 6
    NUMBERS = 7
    CAR_MODEL = 8
    INSURANCE_NAME = 9

    @property
    def wire_name(self) -> str:
        return _WIRE_NAMES[self]

    @classmethod
    def from_wire(cls, name: str) -> "ContentType":
        try:
            return _WIRE_LOOKUP[name]
        except KeyError:
            raise ConfigurationError(f"unknown content type {name!r}") from None


_WIRE_NAMES = {
    ContentType.FREE_TEXT: "FreeText",
    ContentType.NAME: "Name",
    ContentType.PHONE_NUMBER: "PhoneNumber",
    ContentType.DATE: "Date",
    ContentType.TIME: "Time",
    ContentType.ADDRESS: "Address",
    ContentType.LICENSE_PLATE: "LicensePlate",
    ContentType.NUMBERS: "Numbers",
    ContentType.CAR_MODEL: "CarModel",
    ContentType.INSURANCE_NAME: "InsuranceName",
}
_WIRE_LOOKUP = {v: k for k, v in _WIRE_NAMES.items()}


# Space, digits, upper, lower, then . , - / ' :  -- 69 printable symbols.
# With the CTC blank appended after them, the output layer has 70 classes.
DEFAULT_SYMBOLS = (
    " 0123456789"
    "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
    "abcdefghijklmnopqrstuvwxyz"
    ".,-/':"
)


@dataclass(frozen=True)
class Alphabet:
    """Ordered output symbols; the CTC blank sits after the last symbol."""

    symbols: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.symbols)) != len(self.symbols):
            raise ConfigurationError("alphabet contains duplicate symbols")
        for s in self.symbols:
            if len(s) != 1:
                raise ConfigurationError(f"alphabet entries must be single characters, got {s!r}")

    @classmethod
    def default(cls) -> "Alphabet":
        return cls(tuple(DEFAULT_SYMBOLS))

    @classmethod
    def from_file(cls, path: str | Path) -> "Alphabet":
        symbols = []
        with open(path, encoding="utf-8") as fh:
            for raw in fh:
                line = raw.rstrip("\n").rstrip("\r")
                if line == "":
                    continue
                symbols.append(line)
        return cls(tuple(symbols))

    @property
    def blank_index(self) -> int:
        return len(self.symbols)

    @property
    def num_classes(self) -> int:
        return len(self.symbols) + 1

    @cached_property
    def _index(self) -> dict[str, int]:
        return {s: i for i, s in enumerate(self.symbols)}

    def __contains__(self, ch: str) -> bool:
        return ch in self._index

    def index(self, ch: str) -> int:
        return self._index[ch]

    def encode(self, text: str) -> list[int]:
        try:
            return [self._index[c] for c in text]
        except KeyError as exc:
            raise KeyError(f"symbol {exc.args[0]!r} not in alphabet") from None

    def decode(self, indices) -> str:
        return "".join(self.symbols[i] for i in indices)


@dataclass(frozen=True)
class TypedString:
    text: str
    ctype: ContentType

    def __post_init__(self):
        if not self.text:
            raise ValueError("TypedString.text must be non-empty")


# Fractions from the measured distribution of content types on real forms.
# They are published rounded to two decimals of a percent and add up to
# 100.01%, so the default weights normalize them by their actual sum.
MEASURED_TYPE_FRACTIONS: dict[ContentType, float] = {
    ContentType.FREE_TEXT: 0.2849,
    ContentType.NAME: 0.1433,
    ContentType.PHONE_NUMBER: 0.0581,
    ContentType.DATE: 0.1049,
    ContentType.TIME: 0.0181,
    ContentType.ADDRESS: 0.1942,
    ContentType.LICENSE_PLATE: 0.0340,
    ContentType.NUMBERS: 0.0808,
    ContentType.CAR_MODEL: 0.0311,
    ContentType.INSURANCE_NAME: 0.0507,
}


@dataclass(frozen=True)
class TypeWeights:
    """Sampling fractions per content type; must sum to 1 within 1e-9."""

    weights: Mapping[ContentType, float]

    def __post_init__(self):
        missing = [t for t in ContentType if t not in self.weights]
        if missing:
            raise ConfigurationError(
                f"weights missing types: {[t.wire_name for t in missing]}"
            )
        for t, w in self.weights.items():
            if not (0.0 <= w <= 1.0):
                raise ConfigurationError(f"weight for {t.wire_name} out of [0,1]: {w}")
        total = sum(self.weights[t] for t in ContentType)
        if abs(total - 1.0) > 1e-9:
            raise ConfigurationError(
                f"weights sum to {total!r}, expected 1.0 within 1e-9 "
                "(use TypeWeights.normalized to rescale)"
            )

    @classmethod
    def normalized(cls, raw: Mapping[ContentType, float]) -> "TypeWeights":
        total = sum(raw[t] for t in ContentType)
        if total <= 0:
            raise ConfigurationError("weights sum to zero")
        return cls({t: raw[t] / total for t in ContentType})

    @classmethod
    def default(cls) -> "TypeWeights":
        return cls.normalized(MEASURED_TYPE_FRACTIONS)

    @classmethod
    def from_json_dict(cls, data: Mapping[str, float]) -> "TypeWeights":
        return cls({ContentType.from_wire(k): float(v) for k, v in data.items()})

    def to_json_dict(self) -> dict[str, float]:
        return {t.wire_name: self.weights[t] for t in ContentType}

    def cumulative(self) -> list[tuple[float, ContentType]]:
        out = []
        acc = 0.0
        for t in ContentType:
            acc += self.weights[t]
            out.append((acc, t))
        return out


def sample_type(weights: TypeWeights, seed: SeedStream | Xoshiro256StarStar) -> ContentType:
    """Draw a content type from the cumulative distribution of the weights."""
    rng = as_rng(seed)
    u = rng.random()
    cumulative = weights.cumulative()
    for threshold, ctype in cumulative:
        if u < threshold:
            return ctype
    return cumulative[-1][1]


# ---------------------------------------------------------------------------
# Lexicons
# ---------------------------------------------------------------------------

_LEXICON_FILES = {
    "first_names": "first_names.txt",
    "last_names": "last_names.txt",
    "street_types": "street_types.txt",
    "street_names": "street_names.txt",
    "cities": "cities.txt",
    "words": "words.txt",
    "car_models": "car_models.txt",
    "insurance_names": "insurance_names.txt",
}


def _parse_lexicon(text: str) -> tuple[str, ...]:
    entries = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        entries.append(line)
    return tuple(entries)


@dataclass(frozen=True)
class LexiconSet:
    """Word lists backing the lexicon-based content types."""

    first_names: tuple[str, ...] = ()
    last_names: tuple[str, ...] = ()
    street_types: tuple[str, ...] = ()
    street_names: tuple[str, ...] = ()
    cities: tuple[str, ...] = ()
    words: tuple[str, ...] = ()
    car_models: tuple[str, ...] = ()
    insurance_names: tuple[str, ...] = ()

    @classmethod
    def bundled(cls) -> "LexiconSet":
        fields = {}
        base = resources.files("formhwr").joinpath("data/lexicons")
        for name, filename in _LEXICON_FILES.items():
            fields[name] = _parse_lexicon(base.joinpath(filename).read_text("utf-8"))
        return cls(**fields)

    @classmethod
    def from_dir(cls, path: str | Path) -> "LexiconSet":
        """Load from a directory of one-entry-per-line UTF-8 files.

        Missing files leave the corresponding list empty; generation of a
        type that needs it then fails with a ConfigurationError naming it.
        """
        path = Path(path)
        fields = {}
        for name, filename in _LEXICON_FILES.items():
            file = path / filename
            fields[name] = _parse_lexicon(file.read_text("utf-8")) if file.exists() else ()
        return cls(**fields)

    def require(self, name: str, ctype: ContentType) -> tuple[str, ...]:
        entries = getattr(self, name)
        if not entries:
            raise ConfigurationError(
                f"content type {ctype.wire_name} needs the {name!r} lexicon, which is empty"
            )
        return entries


# ---------------------------------------------------------------------------
# Per-type generators
# ---------------------------------------------------------------------------

SIV_LETTERS = "ABCDEFGHJKLMNPQRSTVWXYZ"  # registration plates exclude I, O, U


def _gen_date(rng: Xoshiro256StarStar) -> str:
    year = rng.randint(1950, 2025)
    month = rng.randint(1, 12)
    day = rng.randint(1, calendar.monthrange(year, month)[1])
    fmt = rng.randbelow(4)
    if fmt == 0:
        return f"{day:02d}/{month:02d}/{year % 100:02d}"
    if fmt == 1:
        return f"{day:02d}/{month:02d}/{year:04d}"
    if fmt == 2:
        return f"{day:02d}.{month:02d}.{year % 100:02d}"
    return f"{day:02d}-{month:02d}-{year:04d}"


def _gen_time(rng: Xoshiro256StarStar) -> str:
    hh = rng.randint(0, 23)
    mm = rng.randint(0, 59)
    fmt = rng.randbelow(3)
    if fmt == 0:
        return f"{hh:02d}:{mm:02d}"
    if fmt == 1:
        return f"{hh:02d}H{mm:02d}"
    return f"{hh:02d} h {mm:02d}"


def _gen_phone(rng: Xoshiro256StarStar) -> str:
    digits = "0" + str(rng.randint(1, 9)) + "".join(str(rng.randbelow(10)) for _ in range(8))
    style = rng.randbelow(3)
    if style == 0:
        return digits
    pairs = [digits[i : i + 2] for i in range(0, 10, 2)]
    return (" " if style == 1 else ".").join(pairs)


def _gen_plate(rng: Xoshiro256StarStar) -> str:
    if rng.random() < 0.8:  # current SIV format
        left = rng.choice(SIV_LETTERS) + rng.choice(SIV_LETTERS)
        right = rng.choice(SIV_LETTERS) + rng.choice(SIV_LETTERS)
        return f"{left}-{rng.randint(1, 999):03d}-{right}"
    # legacy FNI format NNN AAA NN
    letters = "".join(rng.choice(SIV_LETTERS) for _ in range(3))
    return f"{rng.randint(1, 999):03d} {letters} {rng.randint(1, 99):02d}"


def _gen_numbers(rng: Xoshiro256StarStar) -> str:
    total = rng.randint(1, 10)
    if total == 1 or rng.random() < 0.7:
        first = str(rng.randint(1, 9)) if total > 1 else str(rng.randbelow(10))
        rest = "".join(str(rng.randbelow(10)) for _ in range(total - 1))
        return first + rest
    int_digits = rng.randint(1, total - 1)
    int_part = (
        str(rng.randint(1, 9)) if int_digits > 1 else str(rng.randbelow(10))
    ) + "".join(str(rng.randbelow(10)) for _ in range(int_digits - 1))
    frac_part = "".join(str(rng.randbelow(10)) for _ in range(total - int_digits))
    sep = "." if rng.random() < 0.5 else ","
    return int_part + sep + frac_part


def _gen_name(rng: Xoshiro256StarStar, lex: LexiconSet) -> str:
    first = rng.choice(lex.require("first_names", ContentType.NAME))
    last = rng.choice(lex.require("last_names", ContentType.NAME))
    return f"{first} {last}"


def _gen_address(rng: Xoshiro256StarStar, lex: LexiconSet) -> str:
    number = rng.randint(1, 199)
    stype = rng.choice(lex.require("street_types", ContentType.ADDRESS))
    sname = rng.choice(lex.require("street_names", ContentType.ADDRESS))
    text = f"{number} {stype} {sname}"
    if rng.random() < 0.5:
        zipcode = f"{rng.randint(1, 95):02d}{rng.randbelow(1000):03d}"
        city = rng.choice(lex.require("cities", ContentType.ADDRESS))
        text = f"{text} {zipcode} {city}"
    return text


def _gen_free_text(rng: Xoshiro256StarStar, lex: LexiconSet) -> str:
    words = lex.require("words", ContentType.FREE_TEXT)
    return " ".join(rng.choice(words) for _ in range(rng.randint(1, 6)))


def fold_to_alphabet(text: str, alphabet: Alphabet) -> str:
    """Fold diacritics/ligatures, then drop anything still outside the alphabet."""
    return "".join(c for c in ascii_fold(text) if c in alphabet)


_MAX_FOLD_RETRIES = 16


def generate(
    ctype: ContentType,
    seed: SeedStream | Xoshiro256StarStar,
    lexicons: LexiconSet,
    alphabet: Alphabet | None = None,
) -> TypedString:
    """Generate one string of the requested type, folded to the alphabet.

    If folding empties the string (possible only with unusual alphabets),
    generation retries on the next values of the derived stream, bounded at
    16 attempts.
    """
    rng = as_rng(seed)
    alphabet = alphabet or Alphabet.default()
    for _ in range(_MAX_FOLD_RETRIES):
        if ctype is ContentType.DATE:
            raw = _gen_date(rng)
        elif ctype is ContentType.TIME:
            raw = _gen_time(rng)
        elif ctype is ContentType.PHONE_NUMBER:
            raw = _gen_phone(rng)
        elif ctype is ContentType.LICENSE_PLATE:
            raw = _gen_plate(rng)
        elif ctype is ContentType.NUMBERS:
            raw = _gen_numbers(rng)
        elif ctype is ContentType.NAME:
            raw = _gen_name(rng, lexicons)
        elif ctype is ContentType.ADDRESS:
            raw = _gen_address(rng, lexicons)
        elif ctype is ContentType.CAR_MODEL:
            raw = rng.choice(lexicons.require("car_models", ContentType.CAR_MODEL))
        elif ctype is ContentType.INSURANCE_NAME:
            raw = rng.choice(lexicons.require("insurance_names", ContentType.INSURANCE_NAME))
        elif ctype is ContentType.FREE_TEXT:
            raw = _gen_free_text(rng, lexicons)
        else:  # pragma: no cover - enum is closed
            raise ConfigurationError(f"no generator for {ctype!r}")
        folded = fold_to_alphabet(raw, alphabet)
        if folded:
            return TypedString(folded, ctype)
    raise GenerationError(
        f"could not produce a non-empty {ctype.wire_name} string after "
        f"{_MAX_FOLD_RETRIES} attempts; alphabet too restrictive?"
    )
