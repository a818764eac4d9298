"""Bit-exact persistence: logit archives, word tables, reading-time tables.

The logit archive is a little-endian binary file (magic ``SCLA``) with a
32-byte header and fixed-stride token records, so any token is addressable
in O(1) and the file can be memory mapped. Word tables are
newline-delimited JSON with a version header line; reading-time tables are
CSV with a version comment line. See FORMATS.md for the byte-level layout;
these three formats are the entire contract with the ingestion component.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import CorruptArchiveError, InvalidInputError, TableFormatError

MAGIC = b"SCLA"
VERSION = 1
HEADER_SIZE = 32
_HEADER_FMT = "<4sIB3xIQ8x"  # magic, version, dtype, pad, K, token_count, reserved
_DTYPE_CODE = {"f32": 0, "f16": 1}
_CODE_DTYPE = {0: "f32", 1: "f16"}
_NP_DTYPE = {"f32": np.dtype("<f4"), "f16": np.dtype("<f2")}

WORDS_HEADER = {"format": "surpscale-words", "version": 1}
RTS_HEADER = "# surpscale-rts v1"

POS_CLASSES = ("NN", "ADJ", "VERB", "ADV", "CC", "OTHER")

RT_MIN_MS = 100.0
RT_MAX_MS = 3000.0


def _record_dtype(vocab_size: int, dtype: str) -> np.dtype:
    return np.dtype(
        [("gold_id", "<u4"), ("word_id", "<u4"), ("logits", _NP_DTYPE[dtype], (vocab_size,))]
    )


def write_archive(path, tokens: Iterable[tuple], vocab_size: int, dtype: str = "f32") -> int:
    """Write (gold_id, word_id, logits) records; returns the token count.

    Logits may be ``-inf`` (zero-probability sentinel) but never NaN or
    ``+inf``. The token count is patched into the header after streaming.
    """
    if dtype not in _DTYPE_CODE:
        raise InvalidInputError(f"dtype must be one of {sorted(_DTYPE_CODE)}, got {dtype!r}")
    if vocab_size < 2:
        raise InvalidInputError("vocab_size must be >= 2")
    np_dtype = _NP_DTYPE[dtype]
    count = 0
    with open(path, "wb") as fh:
        fh.write(struct.pack(_HEADER_FMT, MAGIC, VERSION, _DTYPE_CODE[dtype], vocab_size, 0))
        for gold_id, word_id, logits in tokens:
            gold_id = int(gold_id)
            word_id = int(word_id)
            if not 0 <= gold_id < vocab_size:
                raise InvalidInputError(f"gold_id {gold_id} out of range for K = {vocab_size}")
            if word_id < 0:
                raise InvalidInputError("word_id must be non-negative")
            arr = np.asarray(logits)
            if arr.shape != (vocab_size,):
                raise InvalidInputError(
                    f"logit vector has shape {arr.shape}, expected ({vocab_size},)"
                )
            arr64 = arr.astype(np.float64)
            if np.isnan(arr64).any() or np.isposinf(arr64).any():
                raise InvalidInputError("logits must be finite or -inf")
            fh.write(struct.pack("<II", gold_id, word_id))
            fh.write(arr.astype(np_dtype).tobytes())
            count += 1
        fh.seek(4 + 4 + 1 + 3 + 4)
        fh.write(struct.pack("<Q", count))
    return count


@dataclass(frozen=True)
class ArchiveToken:
    gold_id: int
    word_id: int
    logits: np.ndarray  # raw storage dtype; convert to float64 downstream


class LogitArchive:
    """Read-only, memory-mapped view of an archive file.

    Token access is O(1) and returns views into the map; nothing of size
    token_count x K is allocated unless ``logits_matrix`` is called.
    """

    def __init__(self, path):
        self.path = Path(path)
        size = self.path.stat().st_size
        if size < HEADER_SIZE:
            raise CorruptArchiveError("file shorter than header", byte_offset=size)
        with open(self.path, "rb") as fh:
            header = fh.read(HEADER_SIZE)
        magic, version, dtype_code, vocab_size, token_count = struct.unpack(_HEADER_FMT, header)
        if magic != MAGIC:
            raise CorruptArchiveError(f"bad magic {magic!r}", byte_offset=0)
        if version != VERSION:
            raise CorruptArchiveError(f"unsupported version {version}", byte_offset=4)
        if dtype_code not in _CODE_DTYPE:
            raise CorruptArchiveError(f"unknown dtype code {dtype_code}", byte_offset=8)
        if vocab_size < 2:
            raise CorruptArchiveError(f"vocab_size {vocab_size} < 2", byte_offset=12)
        self.vocab_size = int(vocab_size)
        self.token_count = int(token_count)
        self.dtype = _CODE_DTYPE[dtype_code]
        self._rec = _record_dtype(self.vocab_size, self.dtype)
        expected = HEADER_SIZE + self.token_count * self._rec.itemsize
        if size != expected:
            raise CorruptArchiveError(
                f"file size {size} does not match header "
                f"({self.token_count} tokens of {self._rec.itemsize} bytes)",
                byte_offset=min(size, expected),
            )
        self._records = (
            np.memmap(self.path, dtype=self._rec, mode="r", offset=HEADER_SIZE,
                      shape=(self.token_count,))
            if self.token_count
            else np.empty(0, dtype=self._rec)
        )
        bad = np.nonzero(self._records["gold_id"] >= self.vocab_size)[0]
        if bad.size:
            i = int(bad[0])
            raise CorruptArchiveError(
                f"token {i} has gold_id {int(self._records['gold_id'][i])} >= K",
                byte_offset=HEADER_SIZE + i * self._rec.itemsize,
            )

    def __len__(self) -> int:
        return self.token_count

    def token(self, index: int) -> ArchiveToken:
        if not 0 <= index < self.token_count:
            raise IndexError(f"token index {index} out of range")
        rec = self._records[index]
        return ArchiveToken(int(rec["gold_id"]), int(rec["word_id"]), rec["logits"])

    def iter_tokens(self) -> Iterator[ArchiveToken]:
        for i in range(self.token_count):
            yield self.token(i)

    @property
    def gold_ids(self) -> np.ndarray:
        return np.asarray(self._records["gold_id"])

    @property
    def word_ids(self) -> np.ndarray:
        return np.asarray(self._records["word_id"])

    def logits_matrix(self) -> np.ndarray:
        """Full (token_count, K) float64 matrix; allocates, by request only."""
        return np.asarray(self._records["logits"], dtype=np.float64)


def read_archive(path) -> LogitArchive:
    return LogitArchive(path)


@dataclass(frozen=True)
class WordRecord:
    word_id: int
    text: str
    article_id: str
    position: int
    token_start: int
    token_end: int  # exclusive
    length: int
    log_freq: float | None = None
    is_ne: bool | None = None
    pos_class: str | None = None
    zones: dict | None = None

    def __post_init__(self):
        if self.token_end <= self.token_start:
            raise InvalidInputError(
                f"word {self.word_id}: empty token span "
                f"[{self.token_start}, {self.token_end})"
            )
        if self.pos_class is not None and self.pos_class not in POS_CLASSES:
            raise InvalidInputError(f"word {self.word_id}: unknown pos_class {self.pos_class!r}")

    @property
    def token_span(self) -> tuple[int, int]:
        return self.token_start, self.token_end

    @property
    def n_tokens(self) -> int:
        return self.token_end - self.token_start


@dataclass(frozen=True)
class RtObservation:
    word_id: int
    subj_id: str
    rt_ms: float


def write_word_table(path, words: Iterable[WordRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(WORDS_HEADER, sort_keys=True) + "\n")
        for w in words:
            row = {
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
            }
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def write_rt_table(path, rts: Iterable[RtObservation]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(RTS_HEADER + "\n")
        writer = csv.writer(fh)
        writer.writerow(["word_id", "subj_id", "rt_ms"])
        for r in rts:
            writer.writerow([r.word_id, r.subj_id, repr(float(r.rt_ms))])


def _parse_words(path) -> list[WordRecord]:
    words = []
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
        try:
            header = json.loads(first)
        except json.JSONDecodeError as exc:
            raise TableFormatError("word table header is not JSON", str(path), 1) from exc
        if header != WORDS_HEADER:
            raise TableFormatError(f"unexpected word table header {header!r}", str(path), 1)
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                word = WordRecord(
                    word_id=int(row["word_id"]),
                    text=str(row["text"]),
                    article_id=str(row["article_id"]),
                    position=int(row["position"]),
                    token_start=int(row["token_start"]),
                    token_end=int(row["token_end"]),
                    length=int(row["length"]),
                    log_freq=None if row.get("log_freq") is None else float(row["log_freq"]),
                    is_ne=None if row.get("is_ne") is None else bool(row["is_ne"]),
                    pos_class=row.get("pos_class"),
                    zones=row.get("zones"),
                )
            except (KeyError, ValueError, TypeError, InvalidInputError) as exc:
                raise TableFormatError(f"bad word record: {exc}", str(path), lineno) from exc
            words.append(word)
    return words


def _parse_rts(path) -> list[tuple[int, RtObservation]]:
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        first = fh.readline().rstrip("\r\n")
        if first != RTS_HEADER:
            raise TableFormatError(f"unexpected RT table header {first!r}", str(path), 1)
        reader = csv.reader(fh)
        try:
            columns = next(reader)
        except StopIteration:
            raise TableFormatError("RT table missing column header", str(path), 2) from None
        if columns != ["word_id", "subj_id", "rt_ms"]:
            raise TableFormatError(f"unexpected RT columns {columns!r}", str(path), 2)
        for lineno, row in enumerate(reader, start=3):
            if not row:
                continue
            try:
                if len(row) != 3:
                    raise ValueError(f"expected 3 fields, got {len(row)}")
                obs = RtObservation(int(row[0]), row[1], float(row[2]))
            except ValueError as exc:
                raise TableFormatError(f"bad RT record: {exc}", str(path), lineno) from exc
            out.append((lineno, obs))
    return out


def load_tables(word_path, rt_path,
                token_count: int | None = None) -> tuple[list[WordRecord], list[RtObservation]]:
    """Load and cross-validate the word and reading-time tables.

    Words come back in stable (article_id, position) order; observations in
    word order, then subject. Referential integrity is enforced: an RT row
    naming an unknown word, a duplicate (word, subject) pair, or an
    out-of-bounds reading time fails with the offending line.
    """
    words = _parse_words(word_path)
    seen_ids: dict[int, WordRecord] = {}
    for w in words:
        if w.word_id in seen_ids:
            raise TableFormatError(f"duplicate word_id {w.word_id}", str(word_path))
        seen_ids[w.word_id] = w
    keys = {(w.article_id, w.position) for w in words}
    if len(keys) != len(words):
        raise TableFormatError("duplicate (article_id, position) pair", str(word_path))
    if token_count is not None:
        for w in words:
            if w.token_end > token_count:
                raise TableFormatError(
                    f"word {w.word_id} span [{w.token_start}, {w.token_end}) "
                    f"exceeds archive token count {token_count}",
                    str(word_path),
                )
    by_start = sorted(words, key=lambda w: w.token_start)
    for prev, cur in zip(by_start, by_start[1:]):
        if cur.token_start < prev.token_end:
            raise TableFormatError(
                f"token spans of words {prev.word_id} and {cur.word_id} overlap",
                str(word_path),
            )

    words.sort(key=lambda w: (w.article_id, w.position))
    order = {w.word_id: i for i, w in enumerate(words)}

    raw = _parse_rts(rt_path)
    seen_pairs = set()
    for lineno, obs in raw:
        if obs.word_id not in seen_ids:
            raise TableFormatError(f"RT references unknown word_id {obs.word_id}",
                                   str(rt_path), lineno)
        pair = (obs.word_id, obs.subj_id)
        if pair in seen_pairs:
            raise TableFormatError(f"duplicate (word_id, subj_id) pair {pair}",
                                   str(rt_path), lineno)
        seen_pairs.add(pair)
        if not (RT_MIN_MS <= obs.rt_ms <= RT_MAX_MS) or not math.isfinite(obs.rt_ms):
            raise TableFormatError(
                f"rt_ms {obs.rt_ms} outside [{RT_MIN_MS:g}, {RT_MAX_MS:g}]",
                str(rt_path), lineno)
    rts = [obs for _, obs in raw]
    rts.sort(key=lambda o: (order[o.word_id], o.subj_id))
    return words, rts
