"""Per-token logit extraction and subword-to-word alignment.

A scorer wraps a tokenizer with character offsets plus a causal language
model; ``extract_logits`` runs it over each article with full left
context, aligns every subword token to exactly one word by character
offsets, and writes the archive and word table.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .corpus import RawCorpusRow
from .formats import IngestWord, write_scla, write_words_jsonl


class AlignmentError(Exception):
    """A token straddles a word boundary; names the offending word."""


class CausalScorer(Protocol):
    """Tokenizer + causal LM facade.

    ``encode`` returns token ids and per-token character (start, end)
    offsets into the text. ``token_logits`` returns one pre-softmax row per
    input token: row t is the model's distribution for token t given
    tokens < t (implementations handle any BOS shifting internally).
    """

    vocab_size: int

    def encode(self, text: str) -> tuple[list[int], list[tuple[int, int]]]: ...

    def token_logits(self, token_ids: Sequence[int]) -> np.ndarray: ...


@dataclass(frozen=True)
class Article:
    article_id: str
    rows: tuple[RawCorpusRow, ...]  # position-ordered words

    @property
    def text(self) -> str:
        return " ".join(r.text for r in self.rows)

    def word_char_spans(self) -> list[tuple[int, int]]:
        spans = []
        cursor = 0
        for r in self.rows:
            spans.append((cursor, cursor + len(r.text)))
            cursor += len(r.text) + 1
        return spans


def articles_from_rows(rows: Sequence[RawCorpusRow]) -> list[Article]:
    by_article: dict[str, list[RawCorpusRow]] = {}
    for row in rows:
        by_article.setdefault(row.article_id, []).append(row)
    articles = []
    for aid in sorted(by_article):
        ordered = sorted(by_article[aid], key=lambda r: r.position)
        positions = [r.position for r in ordered]
        if positions != list(range(positions[0], positions[0] + len(positions))):
            raise ValueError(f"article {aid!r}: positions are not contiguous")
        articles.append(Article(aid, tuple(ordered)))
    return articles


def _align(article: Article, offsets: list[tuple[int, int]]) -> list[tuple[int, int]]:
    """Token span [start, end) per word, by character offsets.

    A token belongs to the word containing its first non-space character;
    a token reaching into the next word raises ``AlignmentError``.
    """
    text = article.text
    word_spans = article.word_char_spans()
    n_words = len(word_spans)
    token_owner = []
    w = 0
    for t, (lo, hi) in enumerate(offsets):
        core_lo = lo
        while core_lo < hi and text[core_lo] == " ":
            core_lo += 1
        if core_lo >= hi:  # an all-whitespace token cannot be attributed
            raise AlignmentError(f"token {t} of article {article.article_id!r} is whitespace")
        while w < n_words and core_lo >= word_spans[w][1]:
            w += 1
        if w >= n_words:
            raise AlignmentError(f"token {t} falls beyond the last word")
        if hi > word_spans[w][1]:
            raise AlignmentError(
                f"word {article.rows[w].text!r} (article {article.article_id!r}, "
                f"position {article.rows[w].position}) shares token {t} with its neighbour"
            )
        token_owner.append(w)

    spans: list[tuple[int, int]] = []
    for wi in range(n_words):
        toks = [t for t, owner in enumerate(token_owner) if owner == wi]
        if not toks:
            raise AlignmentError(
                f"word {article.rows[wi].text!r} (article {article.article_id!r}, "
                f"position {article.rows[wi].position}) received no tokens"
            )
        if toks != list(range(toks[0], toks[-1] + 1)):
            raise AlignmentError(f"word {article.rows[wi].text!r} has a gapped token span")
        spans.append((toks[0], toks[-1] + 1))
    return spans


def extract_logits(rows: Sequence[RawCorpusRow], scorer: CausalScorer,
                   archive_path, words_path, dtype: str = "f32") -> list[IngestWord]:
    """Run the scorer over every article and write archive + word table.

    Token order in the archive is article order (sorted ids) then position;
    every word's span covers its subword tokens exactly once. Deterministic
    given the scorer and text.
    """
    articles = articles_from_rows(rows)
    words: list[IngestWord] = []
    archive_tokens: list[tuple[int, int, np.ndarray]] = []
    word_id = 0
    token_cursor = 0
    for article in articles:
        ids, offsets = scorer.encode(article.text)
        if len(ids) != len(offsets):
            raise AlignmentError("scorer returned mismatched ids and offsets")
        spans = _align(article, offsets)
        logits = np.asarray(scorer.token_logits(ids))
        if logits.shape != (len(ids), scorer.vocab_size):
            raise ValueError(
                f"scorer logits shape {logits.shape} != ({len(ids)}, {scorer.vocab_size})"
            )
        for row, (lo, hi) in zip(article.rows, spans):
            for t in range(lo, hi):
                archive_tokens.append((int(ids[t]), word_id, logits[t]))
            words.append(IngestWord(
                word_id=word_id,
                text=row.text,
                article_id=article.article_id,
                position=row.position,
                token_start=token_cursor + lo,
                token_end=token_cursor + hi,
                zones=row.zones,
            ))
            word_id += 1
        token_cursor += len(ids)

    write_scla(archive_path, archive_tokens, vocab_size=scorer.vocab_size, dtype=dtype)
    write_words_jsonl(words_path, words)
    return words


class TransformersScorer:
    """Adapter over a Hugging Face causal LM (requires the optional
    ``models`` extra). The tokenizer must support character offsets."""

    def __init__(self, model_id: str, device: str = "cpu"):
        try:
            import torch  # noqa: F401
            from transformers import AutoModelForCausalLM, AutoTokenizer
        except ImportError as exc:  # pragma: no cover - optional dependency
            raise ImportError(
                "TransformersScorer needs the [models] extra (torch, transformers)"
            ) from exc
        self._torch = __import__("torch")
        self.tokenizer = AutoTokenizer.from_pretrained(model_id, use_fast=True)
        self.model = AutoModelForCausalLM.from_pretrained(model_id).to(device).eval()
        self.device = device
        self.vocab_size = int(self.model.config.vocab_size)
        bos = self.tokenizer.bos_token_id
        self._prefix = bos if bos is not None else self.tokenizer.eos_token_id
        if self._prefix is None:
            raise ValueError(f"model {model_id!r} has neither BOS nor EOS token")

    def encode(self, text: str):
        enc = self.tokenizer(text, return_offsets_mapping=True, add_special_tokens=False)
        return list(enc["input_ids"]), [tuple(o) for o in enc["offset_mapping"]]

    def token_logits(self, token_ids):
        torch = self._torch
        ids = torch.tensor([[self._prefix, *token_ids]], device=self.device)
        with torch.no_grad():
            out = self.model(ids).logits[0, :-1]  # row t predicts token t
        return out.float().cpu().numpy()
