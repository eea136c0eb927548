"""Whitespace tokenizer shared by the synthetic world and the toy text encoder.

Synthetic transcripts spell their tokens as ``w<id>`` so they map back onto
their vocabulary slot exactly; any other token (real transcripts) is bucketed
by CRC-32, which is stable across processes and platforms.
"""

from __future__ import annotations

import re
import zlib

_SYNTH_TOKEN = re.compile(r"w(\d+)")


def token_to_id(token: str, vocab_size: int) -> int:
    m = _SYNTH_TOKEN.fullmatch(token)
    if m:
        return int(m.group(1)) % vocab_size
    return zlib.crc32(token.encode("utf-8")) % vocab_size


def tokenize(text: str, vocab_size: int) -> list[int]:
    """Token ids for a transcript. Raises on empty/blank input."""
    parts = text.split()
    if not parts:
        raise ValueError("cannot tokenize empty text")
    return [token_to_id(tok, vocab_size) for tok in parts]
