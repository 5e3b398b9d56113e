"""Sentence-level inference: score, decode, annotate."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

from arcparse.conllx import Sentence
from arcparse.decoder import DecodeResult, decode
from arcparse.model import ParserModel


def parse_sentence(model: ParserModel, sentence: Sentence) -> tuple[Sentence, DecodeResult]:
    result = decode(model.scores(sentence))
    return sentence.with_annotation(result.heads, result.rels), result


def parse_sentences(model: ParserModel, sentences: Sequence[Sentence], threads: int = 1) -> list[Sentence]:
    """Annotate every sentence; output order always follows input order."""
    if threads < 1:
        raise ValueError("threads must be >= 1")
    if threads == 1 or len(sentences) < 2:
        return [parse_sentence(model, s)[0] for s in sentences]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return [parsed for parsed, _ in pool.map(lambda s: parse_sentence(model, s), sentences)]
