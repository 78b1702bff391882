"""Diacritic folding shared by label generation and ASCII metric variants."""

from __future__ import annotations

import unicodedata

# NFD does not decompose ligatures (they are compatibility, not canonical,
# mappings), so they are expanded explicitly; case is preserved throughout.
_LIGATURES = {
    "œ": "oe",  # oe ligature
    "Œ": "OE",
    "æ": "ae",  # ae ligature
    "Æ": "AE",
}


def ascii_fold(text: str) -> str:
    """Fold diacritics to their base letters: 'é' -> 'e', 'œ' -> 'oe'.

    Characters without a decomposition pass through unchanged; nothing is
    dropped here, so the result may still contain symbols outside a given
    alphabet (see ``typedgen.fold_to_alphabet`` for the filtering variant).
    """
    out = []
    for ch in text:
        mapped = _LIGATURES.get(ch)
        if mapped is not None:
            out.append(mapped)
            continue
        decomposed = unicodedata.normalize("NFD", ch)
        out.append("".join(c for c in decomposed if not unicodedata.combining(c)))
    return "".join(out)
