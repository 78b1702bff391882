"""Edit distance, character/field error rates, and per-type reports.

CER is the macro average of per-field edit-distance ratios:
(100/N) * sum_i EditDist(pred_i, gt_i) / NumChars(gt_i). FER is the
fraction of fields that do not match letter for letter, times 100. The
ASCII variants fold diacritics on both sides first, so confusions like
'e' for 'e-acute' are not penalized.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

from .textnorm import ascii_fold
from .typedgen import ContentType

_WS_RUN = re.compile(r"\s+")


@dataclass(frozen=True)
class EvalPair:
    prediction: str
    groundtruth: str
    ctype: ContentType


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance, unit costs, over Unicode scalar values."""
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            cost = 0 if ca == cb else 1
            current.append(min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + cost))
        previous = current
    return previous[-1]


def _normalize_field(text: str) -> str:
    """Whitespace rule for field comparison: trim, collapse inner runs."""
    return _WS_RUN.sub(" ", text.strip())


def cer(pairs: list[EvalPair], ascii_fold_variant: bool = False) -> float:
    """Macro-averaged character error rate in percent.

    Empty groundtruths use denominator max(1, len(gt)); report() flags them
    separately so they are visible rather than silently distorting.
    """
    if not pairs:
        raise ValueError("cer of an empty pair list is undefined")
    total = 0.0
    for p in pairs:
        pred, gt = p.prediction, p.groundtruth
        if ascii_fold_variant:
            pred, gt = ascii_fold(pred), ascii_fold(gt)
        total += edit_distance(pred, gt) / max(1, len(gt))
    return 100.0 * total / len(pairs)


def fer(pairs: list[EvalPair], ascii_fold_variant: bool = False) -> float:
    """Percent of fields whose prediction is not letter-for-letter equal
    (after whitespace normalization, and folding for the ASCII variant)."""
    if not pairs:
        raise ValueError("fer of an empty pair list is undefined")
    wrong = 0
    for p in pairs:
        pred = _normalize_field(p.prediction)
        gt = _normalize_field(p.groundtruth)
        if ascii_fold_variant:
            pred, gt = ascii_fold(pred), ascii_fold(gt)
        wrong += pred != gt
    return 100.0 * wrong / len(pairs)


@dataclass(frozen=True)
class MetricBlock:
    count: int
    cer: float | None
    cer_ascii: float | None
    fer: float | None
    fer_ascii: float | None
    empty_groundtruths: int = 0

    @classmethod
    def from_pairs(cls, pairs: list[EvalPair]) -> "MetricBlock":
        if not pairs:
            return cls(0, None, None, None, None, 0)
        return cls(
            count=len(pairs),
            cer=cer(pairs),
            cer_ascii=cer(pairs, ascii_fold_variant=True),
            fer=fer(pairs),
            fer_ascii=fer(pairs, ascii_fold_variant=True),
            empty_groundtruths=sum(1 for p in pairs if not p.groundtruth),
        )

    def to_json_dict(self) -> dict:
        return {
            "count": self.count,
            "cer": self.cer,
            "cer_ascii": self.cer_ascii,
            "fer": self.fer,
            "fer_ascii": self.fer_ascii,
            "empty_groundtruths": self.empty_groundtruths,
        }


@dataclass(frozen=True)
class EvalReport:
    overall: MetricBlock
    per_type: dict[ContentType, MetricBlock]

    def to_json_dict(self) -> dict:
        return {
            "overall": self.overall.to_json_dict(),
            "per_type": {
                t.wire_name: block.to_json_dict() for t, block in self.per_type.items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2)

    def to_text(self) -> str:
        """Aligned-column table, one row per populated type plus overall."""
        header = f"{'Type':<16}{'Count':>7}{'CER':>9}{'CER-A':>9}{'FER':>9}{'FER-A':>9}"
        lines = [header, "-" * len(header)]

        def fmt(value: float | None) -> str:
            return f"{value:9.2f}" if value is not None else f"{'-':>9}"

        for t in ContentType:
            block = self.per_type.get(t)
            if block is None or block.count == 0:
                continue
            lines.append(
                f"{t.wire_name:<16}{block.count:>7}"
                f"{fmt(block.cer)}{fmt(block.cer_ascii)}{fmt(block.fer)}{fmt(block.fer_ascii)}"
            )
        lines.append("-" * len(header))
        o = self.overall
        lines.append(
            f"{'Overall':<16}{o.count:>7}{fmt(o.cer)}{fmt(o.cer_ascii)}{fmt(o.fer)}{fmt(o.fer_ascii)}"
        )
        return "\n".join(lines) + "\n"


def report(pairs: list[EvalPair]) -> EvalReport:
    by_type: dict[ContentType, list[EvalPair]] = {}
    for p in pairs:
        by_type.setdefault(p.ctype, []).append(p)
    return EvalReport(
        overall=MetricBlock.from_pairs(pairs),
        per_type={t: MetricBlock.from_pairs(group) for t, group in by_type.items()},
    )


def read_pairs_jsonl(path: str | Path) -> list[EvalPair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            data = json.loads(line)
            pairs.append(
                EvalPair(
                    prediction=data["prediction"],
                    groundtruth=data["groundtruth"],
                    ctype=ContentType.from_wire(data["type"]),
                )
            )
    return pairs


def write_pairs_jsonl(pairs: list[EvalPair], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in pairs:
            fh.write(
                json.dumps(
                    {
                        "prediction": p.prediction,
                        "groundtruth": p.groundtruth,
                        "type": p.ctype.wire_name,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
