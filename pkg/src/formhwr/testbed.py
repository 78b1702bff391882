"""Glyph-ambiguity testbed.

Builds datasets where the characters 0/O, 1/I, and 8/B share one bitmap per
pair, so a rendered string is pixel-identical whether it is labeled as
digits (under the PhoneNumber or Date type) or as letters (under Name).
Without the type input the transcription is genuinely ambiguous; with it,
the label is fully determined. Training a typed and an untyped model of
equal capacity on the same data isolates the value of type conditioning.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .fonts import BitmapFont, FontSet
from .formset import MANIFEST_NAME, SampleRecord, read_manifest, write_manifest
from .imaging import RenderStyle, render_text
from .metrics import EvalPair, cer
from .recognizer import (
    ArchConfig,
    TrainerConfig,
    digit_fraction,
    forced_type_histogram,
    load_checkpoint,
    train,
)
from .recognizer.infer import transcribe_records
from .rng import SeedStream, mix_seed
from .typedgen import Alphabet, ContentType

AMBIGUOUS_FONT_ID = "ambiguous-5x7"
DIGIT_TO_LETTER = {"0": "O", "1": "I", "8": "B"}
AMBIGUOUS_DIGITS = "018"


def ambiguous_font_set() -> FontSet:
    """Fallback face with the letter of each ambiguous pair aliased to the
    digit's bitmap, so both render identically."""
    aliases = {letter: digit for digit, letter in DIGIT_TO_LETTER.items()}
    font = BitmapFont().with_aliases(aliases, AMBIGUOUS_FONT_ID)
    fonts = FontSet()
    fonts.add(font)
    return fonts


def build_ambiguity_dataset(
    out_dir: str | Path,
    count: int,
    root_seed: int,
    length_range: tuple[int, int] = (2, 4),
    text_height: int = 32,
) -> Path:
    """Emit `count` clean renders of ambiguous strings with a manifest.

    Each sample is digits with probability 1/2 (typed PhoneNumber or Date,
    equally) or the letter-mapped twin string typed Name. No augmentation,
    no jitter: pixel-identical twins stay identical.
    """
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    fonts = ambiguous_font_set()
    style = RenderStyle(
        font_id=AMBIGUOUS_FONT_ID,
        text_height=text_height,
        kerning_jitter_std=0.0,
        vertical_jitter_std=0.0,
    )
    records = []
    for i in range(count):
        rng = SeedStream(root_seed, i).rng()
        length = rng.randint(*length_range)
        digits = "".join(AMBIGUOUS_DIGITS[rng.randbelow(3)] for _ in range(length))
        if rng.random() < 0.5:
            text = digits
            ctype = ContentType.PHONE_NUMBER if rng.random() < 0.5 else ContentType.DATE
        else:
            text = "".join(DIGIT_TO_LETTER[d] for d in digits)
            ctype = ContentType.NAME
        img = render_text(text, style, rng, fonts)
        rel_path = f"images/{i:08d}.png"
        img.save_png(out_dir / rel_path)
        records.append(
            SampleRecord(
                image_path=rel_path,
                text=text,
                ctype=ctype,
                original_width=img.width,
                font_id=AMBIGUOUS_FONT_ID,
                seed=mix_seed(root_seed, i),
                augmentations=(),
            )
        )
    manifest = out_dir / MANIFEST_NAME
    write_manifest(records, manifest)
    return manifest


@dataclass
class AmbiguityResult:
    typed_cer: float
    untyped_cer: float
    digit_fraction_phone: float
    digit_fraction_name: float
    typed_checkpoint: Path
    untyped_checkpoint: Path

    def to_json_dict(self) -> dict:
        return {
            "typed_cer": self.typed_cer,
            "untyped_cer": self.untyped_cer,
            "cer_gap": self.untyped_cer - self.typed_cer,
            "digit_fraction_phone": self.digit_fraction_phone,
            "digit_fraction_name": self.digit_fraction_name,
            "digit_fraction_gap": self.digit_fraction_phone - self.digit_fraction_name,
            "typed_checkpoint": str(self.typed_checkpoint),
            "untyped_checkpoint": str(self.untyped_checkpoint),
        }


EXPERIMENT_MIN_WIDTH = 128  # fits the longest testbed string, divisible by 4
EXPERIMENT_LEARNING_RATE = 3e-3  # the desk net is tiny; 1e-3 converges too


def run_ambiguity_experiment(
    workdir: str | Path,
    n_train: int = 2000,
    n_test: int = 600,
    iterations: int = 700,
    seed: int = 20190901,
    batch_size: int = 32,
) -> AmbiguityResult:
    """Train one typed and one untyped model on identical data and measure
    the ambiguity gap. All CER here is over ambiguous positions: every
    character of every testbed string belongs to an ambiguous pair."""
    workdir = Path(workdir)
    train_manifest = build_ambiguity_dataset(workdir / "train", n_train, root_seed=seed)
    test_manifest = build_ambiguity_dataset(workdir / "test", n_test, root_seed=seed + 1)
    alphabet = Alphabet.default()

    trainer = TrainerConfig(
        learning_rate=EXPERIMENT_LEARNING_RATE,
        batch_size=batch_size,
        max_iterations=iterations,
        seed=seed,
        val_every=max(50, iterations // 10),
        min_width=EXPERIMENT_MIN_WIDTH,
    )
    typed_ckpt = workdir / "typed.checkpoint.json"
    untyped_ckpt = workdir / "untyped.checkpoint.json"
    train(ArchConfig.desk_default(type_input_enabled=True), trainer, train_manifest, typed_ckpt, alphabet)
    train(ArchConfig.desk_default(type_input_enabled=False), trainer, train_manifest, untyped_ckpt, alphabet)

    test_records = read_manifest(test_manifest)
    base_dir = test_manifest.parent
    results = {}
    for name, ckpt in (("typed", typed_ckpt), ("untyped", untyped_ckpt)):
        params, arch, ckpt_alphabet = load_checkpoint(ckpt)
        preds = transcribe_records(
            params, arch, test_records, base_dir, ckpt_alphabet, min_width=EXPERIMENT_MIN_WIDTH
        )
        pairs = [EvalPair(p, r.text, r.ctype) for p, r in zip(preds, test_records)]
        results[name] = cer(pairs)

    params, arch, ckpt_alphabet = load_checkpoint(typed_ckpt)
    hist_phone = forced_type_histogram(
        params, arch, test_records, base_dir, ContentType.PHONE_NUMBER, ckpt_alphabet,
        min_width=EXPERIMENT_MIN_WIDTH,
    )
    hist_name = forced_type_histogram(
        params, arch, test_records, base_dir, ContentType.NAME, ckpt_alphabet,
        min_width=EXPERIMENT_MIN_WIDTH,
    )

    return AmbiguityResult(
        typed_cer=results["typed"],
        untyped_cer=results["untyped"],
        digit_fraction_phone=digit_fraction(hist_phone),
        digit_fraction_name=digit_fraction(hist_name),
        typed_checkpoint=typed_ckpt,
        untyped_checkpoint=untyped_ckpt,
    )
