"""Raw corpus rows and per-corpus preprocessing filters.

A row is one word occurrence with its per-subject reading times. Filters
never delete rows (the word stream must stay intact as language-model
context); they prune reading-time measurements, so a fully filtered word
survives as a context-only word. The audit counts measurements removed by
each rule; a measurement is attributed to the first rule that hits it.

Rule sets:

- ``dundee``: drop words containing digits or punctuation, words whose
  previous word does, and words first or last on their line (``lineN``).
- ``natural_stories``: reading times outside [100, 3000] ms, words first
  or last in their story, digit/punctuation words and their successors,
  and every measurement from subjects who answered fewer than 5 of 8
  comprehension questions correctly.
- ``brown``: reading times outside [100, 3000] ms and digit/punctuation
  words.
- ``custom``: reading-time bounds only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

CORPORA = ("dundee", "natural_stories", "brown", "custom")

RT_MIN_MS = 100.0
RT_MAX_MS = 3000.0
COMPREHENSION_MIN_CORRECT = 5

RULE_EDGE = "article_edge"
RULE_LINE_EDGE = "line_edge"
RULE_NUM_PUNCT = "numbers_or_punct"
RULE_PREV_NUM_PUNCT = "prev_numbers_or_punct"
RULE_COMPREHENSION = "comprehension"
RULE_RT_LOW = "rt_low"
RULE_RT_HIGH = "rt_high"


@dataclass(frozen=True)
class RawCorpusRow:
    corpus: str
    article_id: str
    position: int
    text: str
    rts: dict  # subj_id -> rt_ms
    zones: dict | None = None

    def __post_init__(self):
        if self.corpus not in CORPORA:
            raise ValueError(f"corpus must be one of {CORPORA}, got {self.corpus!r}")


def has_number_or_punct(text: str) -> bool:
    """True when the word contains any non-alphabetic character."""
    return any(not c.isalpha() for c in text)


def read_custom_corpus(path, corpus: str = "custom") -> list[RawCorpusRow]:
    """Generic long-format CSV reader.

    Columns: ``article_id, position, word, subj_id, rt_ms`` plus optional
    ``screenN, lineN, segmentN``. A word occurrence repeats once per
    subject; an empty ``subj_id`` declares a context-only word.
    """
    by_key: dict[tuple, dict] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"article_id", "position", "word", "subj_id", "rt_ms"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise ValueError(f"corpus file needs columns {sorted(required)}")
        for rec in reader:
            key = (rec["article_id"], int(rec["position"]))
            entry = by_key.setdefault(key, {"text": rec["word"], "rts": {}, "zones": None})
            if entry["text"] != rec["word"]:
                raise ValueError(f"conflicting word text at {key}")
            if rec["subj_id"]:
                entry["rts"][rec["subj_id"]] = float(rec["rt_ms"])
            zone_vals = {z: rec[z] for z in ("screenN", "lineN", "segmentN")
                         if z in rec and rec[z] not in (None, "")}
            if zone_vals:
                entry["zones"] = {z: int(v) for z, v in zone_vals.items()}
    rows = [
        RawCorpusRow(corpus=corpus, article_id=a, position=p, text=e["text"],
                     rts=e["rts"], zones=e["zones"])
        for (a, p), e in by_key.items()
    ]
    rows.sort(key=lambda r: (r.article_id, r.position))
    return rows


def _word_level_rule(row: RawCorpusRow, rows_by_article: dict, line_groups: dict) -> str | None:
    """First word-level rule that flags this row, else None."""
    corpus = row.corpus
    article_rows = rows_by_article[row.article_id]
    if corpus == "natural_stories":
        if row.position == article_rows[0].position or row.position == article_rows[-1].position:
            return RULE_EDGE
    if corpus == "dundee" and row.zones and "lineN" in row.zones:
        first, last = line_groups[(row.article_id, row.zones["lineN"])]
        if row.position in (first, last):
            return RULE_LINE_EDGE
    if corpus in ("dundee", "natural_stories", "brown") and has_number_or_punct(row.text):
        return RULE_NUM_PUNCT
    if corpus in ("dundee", "natural_stories"):
        prev = next((r for r in article_rows if r.position == row.position - 1), None)
        if prev is not None and has_number_or_punct(prev.text):
            return RULE_PREV_NUM_PUNCT
    return None


def preprocess(rows: list[RawCorpusRow], corpus: str,
               subject_scores: dict | None = None) -> tuple[list[RawCorpusRow], dict]:
    """Apply the corpus's filter rules; returns (rows, audit).

    Rows come back with pruned reading-time maps (never dropped: filtered
    words remain as context). ``subject_scores`` maps subj_id to the count
    of correctly answered comprehension questions (natural_stories only).
    """
    if corpus not in CORPORA:
        raise ValueError(f"corpus must be one of {CORPORA}, got {corpus!r}")
    for row in rows:
        if row.corpus != corpus:
            raise ValueError(f"row at ({row.article_id}, {row.position}) has corpus "
                             f"{row.corpus!r}, expected {corpus!r}")

    rows = sorted(rows, key=lambda r: (r.article_id, r.position))
    rows_by_article: dict[str, list[RawCorpusRow]] = {}
    for row in rows:
        rows_by_article.setdefault(row.article_id, []).append(row)

    line_groups: dict[tuple, tuple] = {}
    if corpus == "dundee":
        for row in rows:
            if row.zones and "lineN" in row.zones:
                key = (row.article_id, row.zones["lineN"])
                first, last = line_groups.get(key, (row.position, row.position))
                line_groups[key] = (min(first, row.position), max(last, row.position))

    audit = {
        RULE_EDGE: 0, RULE_LINE_EDGE: 0, RULE_NUM_PUNCT: 0,
        RULE_PREV_NUM_PUNCT: 0, RULE_COMPREHENSION: 0,
        RULE_RT_LOW: 0, RULE_RT_HIGH: 0,
    }
    bad_subjects = set()
    if corpus == "natural_stories" and subject_scores is not None:
        bad_subjects = {s for s, correct in subject_scores.items()
                        if correct < COMPREHENSION_MIN_CORRECT}

    rt_bounds_apply = corpus in ("natural_stories", "brown", "custom")
    out = []
    for row in rows:
        rule = _word_level_rule(row, rows_by_article, line_groups)
        if rule is not None:
            audit[rule] += len(row.rts)
            out.append(replace(row, rts={}))
            continue
        kept = {}
        for subj, rt in row.rts.items():
            if subj in bad_subjects:
                audit[RULE_COMPREHENSION] += 1
            elif rt_bounds_apply and rt < RT_MIN_MS:
                audit[RULE_RT_LOW] += 1
            elif rt_bounds_apply and rt > RT_MAX_MS:
                audit[RULE_RT_HIGH] += 1
            else:
                kept[subj] = rt
        out.append(replace(row, rts=kept))
    return out, audit
