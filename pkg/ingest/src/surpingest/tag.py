"""Word metadata tagging: named entities, POS classes, log frequency.

Taggers are pluggable callables so corpora can be annotated without the
heavyweight model dependencies installed; an unavailable tagger leaves the
corresponding fields absent (None), and downstream factor analyses simply
exclude those words.
"""

from __future__ import annotations

import math
from dataclasses import replace
from typing import Callable, Mapping, Sequence

from .formats import IngestWord

# Penn Treebank tag -> coarse class. Open classes keep their own buckets;
# the listed closed-class tags map to CC; anything else is OTHER.
_CLOSED_CLASS = {
    "DT", "IN", "CC", "PRP", "PRP$", "TO", "WDT", "WP", "WP$", "WRB",
    "PDT", "POS", "MD", "EX", "RP", "UH",
}


def ptb_to_class(tag: str) -> str:
    if tag.startswith("NN"):
        return "NN"
    if tag.startswith("JJ"):
        return "ADJ"
    if tag.startswith("VB"):
        return "VERB"
    if tag.startswith("RB"):
        return "ADV"
    if tag in _CLOSED_CLASS:
        return "CC"
    return "OTHER"


NeTagger = Callable[[Sequence[str]], Sequence[bool]]
PosTagger = Callable[[Sequence[str]], Sequence[str]]  # returns PTB tags


def tag_metadata(words: Sequence[IngestWord],
                 ne_tagger: NeTagger | None = None,
                 pos_tagger: PosTagger | None = None,
                 frequency_counts: Mapping[str, float] | None = None) -> list[IngestWord]:
    """Annotate words in place-order; missing taggers leave fields absent.

    ``frequency_counts`` maps lowercased word text to corpus counts;
    ``log_freq`` is the natural log of the count, absent for unseen words.
    """
    texts = [w.text for w in words]

    ne_flags: Sequence[bool | None]
    if ne_tagger is not None:
        ne_flags = list(ne_tagger(texts))
        if len(ne_flags) != len(words):
            raise ValueError("NE tagger returned wrong number of flags")
    else:
        ne_flags = [None] * len(words)

    pos_classes: list[str | None]
    if pos_tagger is not None:
        tags = list(pos_tagger(texts))
        if len(tags) != len(words):
            raise ValueError("POS tagger returned wrong number of tags")
        pos_classes = [ptb_to_class(t) for t in tags]
    else:
        pos_classes = [None] * len(words)

    out = []
    for w, ne, pos in zip(words, ne_flags, pos_classes):
        log_freq = None
        if frequency_counts is not None:
            count = frequency_counts.get(w.text.lower())
            if count is not None and count > 0:
                log_freq = math.log(count)
        out.append(replace(w, is_ne=ne, pos_class=pos, log_freq=log_freq))
    return out


def nltk_pos_tagger() -> PosTagger:
    """PTB tagger backed by NLTK (requires nltk plus its tagger data)."""
    try:
        import nltk
    except ImportError as exc:  # pragma: no cover - optional dependency
        raise ImportError("nltk_pos_tagger needs the nltk package") from exc

    def tagger(texts: Sequence[str]) -> list[str]:
        return [tag for _, tag in nltk.pos_tag(list(texts))]

    return tagger


def transformers_ne_tagger(model_id: str = "dslim/bert-base-NER") -> NeTagger:
    """Named-entity flags from a token-classification model (requires the
    ``models`` extra). A word is flagged when any of its pieces gets a
    non-O label."""
    try:
        from transformers import pipeline
    except ImportError as exc:  # pragma: no cover - optional dependency
        raise ImportError("transformers_ne_tagger needs the [models] extra") from exc
    nlp = pipeline("token-classification", model=model_id, aggregation_strategy="simple")

    def tagger(texts: Sequence[str]) -> list[bool]:
        flags = []
        for text in texts:
            flags.append(bool(nlp(text)))
        return flags

    return tagger
