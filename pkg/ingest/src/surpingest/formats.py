"""Writers for the surpscale file formats (see FORMATS.md).

Implemented independently of the consumer package so the formats document
is the only contract between the two; the consumer's readers are the
round-trip check, not a shared code path.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

MAGIC = b"SCLA"
VERSION = 1
_DTYPE_CODE = {"f32": 0, "f16": 1}
_NP_DTYPE = {"f32": "<f4", "f16": "<f2"}

WORDS_HEADER = {"format": "surpscale-words", "version": 1}
RTS_HEADER = "# surpscale-rts v1"


@dataclass
class IngestWord:
    """One word row of the word table; spans index the logit archive."""

    word_id: int
    text: str
    article_id: str
    position: int
    token_start: int
    token_end: int
    log_freq: float | None = None
    is_ne: bool | None = None
    pos_class: str | None = None
    zones: dict | None = None

    @property
    def length(self) -> int:
        return len(self.text)


def write_scla(path, tokens: Iterable[tuple], vocab_size: int, dtype: str = "f32") -> int:
    """Write (gold_id, word_id, logits) records; returns the token count.

    Header: magic, u32 version, u8 dtype code, 3 pad bytes, u32 K,
    u64 token count, 8 reserved bytes — 32 bytes total, little-endian.
    """
    if vocab_size < 2:
        raise ValueError("vocab_size must be >= 2")
    np_dtype = np.dtype(_NP_DTYPE[dtype])
    count = 0
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIB3xIQ8x", MAGIC, VERSION, _DTYPE_CODE[dtype],
                             vocab_size, 0))
        for gold_id, word_id, logits in tokens:
            if not 0 <= int(gold_id) < vocab_size:
                raise ValueError(f"gold_id {gold_id} out of range")
            arr = np.asarray(logits)
            if arr.shape != (vocab_size,):
                raise ValueError(f"logit vector shape {arr.shape} != ({vocab_size},)")
            if np.isnan(arr).any() or np.isposinf(arr.astype(np.float64)).any():
                raise ValueError("logits must be finite or -inf")
            fh.write(struct.pack("<II", int(gold_id), int(word_id)))
            fh.write(arr.astype(np_dtype).tobytes())
            count += 1
        fh.seek(16)
        fh.write(struct.pack("<Q", count))
    return count


def write_words_jsonl(path, words: Iterable[IngestWord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(WORDS_HEADER, sort_keys=True) + "\n")
        for w in words:
            fh.write(json.dumps({
                "word_id": w.word_id,
                "text": w.text,
                "article_id": w.article_id,
                "position": w.position,
                "token_start": w.token_start,
                "token_end": w.token_end,
                "length": w.length,
                "log_freq": w.log_freq,
                "is_ne": w.is_ne,
                "pos_class": w.pos_class,
                "zones": w.zones,
            }, sort_keys=True) + "\n")


def write_rts_csv(path, rts: Iterable[tuple]) -> None:
    """``rts`` yields (word_id, subj_id, rt_ms)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(RTS_HEADER + "\n")
        writer = csv.writer(fh)
        writer.writerow(["word_id", "subj_id", "rt_ms"])
        for word_id, subj_id, rt_ms in rts:
            writer.writerow([int(word_id), subj_id, repr(float(rt_ms))])
