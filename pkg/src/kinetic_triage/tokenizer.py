"""WordPiece tokenization into fixed-length id sequences with attention masks.

Vocabulary files are plain text, one token per line; the id is the zero-based
line number. The four special tokens [PAD], [UNK], [CLS], [SEP] must be
present. Continuation pieces carry the "##" prefix.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from kinetic_triage.errors import DataError

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
CONTINUATION = "##"


class Vocab:
    """Immutable token list with id lookup and the four special-token ids."""

    def __init__(self, tokens: Sequence[str], lowercase: bool = True):
        self.tokens = tuple(tokens)
        self.lowercase = lowercase
        self.token_to_id = {}
        for i, tok in enumerate(self.tokens):
            if tok in self.token_to_id:
                raise DataError(f"duplicate token {tok!r} at ids {self.token_to_id[tok]} and {i}")
            self.token_to_id[tok] = i
        for special in (PAD, UNK, CLS, SEP):
            if special not in self.token_to_id:
                raise DataError(f"vocabulary is missing {special}")
        self.pad_id = self.token_to_id[PAD]
        self.unk_id = self.token_to_id[UNK]
        self.cls_id = self.token_to_id[CLS]
        self.sep_id = self.token_to_id[SEP]

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    @classmethod
    def from_file(cls, path: str | Path, lowercase: bool = True) -> "Vocab":
        path = Path(path)
        if not path.exists():
            raise DataError(f"no such vocabulary file: {path}")
        lines = path.read_text(encoding="utf-8").splitlines()
        # a trailing blank line is a file artifact, interior blanks are real tokens
        while lines and lines[-1] == "":
            lines.pop()
        if not lines:
            raise DataError(f"{path}: empty vocabulary")
        return cls(lines, lowercase=lowercase)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class TokenSequence:
    """Fixed-length id sequence: [CLS] pieces [SEP] then [PAD] fill; mask is 1
    exactly on the non-pad positions."""

    ids: tuple[int, ...]
    mask: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def n_real(self) -> int:
        return sum(self.mask)


def _is_punctuation(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def pretokenize(text: str, lowercase: bool = True) -> list[str]:
    """Split on whitespace, then split punctuation characters off as their
    own words."""
    if lowercase:
        text = text.lower()
    words: list[str] = []
    for chunk in text.split():
        buf = []
        for ch in chunk:
            if _is_punctuation(ch):
                if buf:
                    words.append("".join(buf))
                    buf = []
                words.append(ch)
            else:
                buf.append(ch)
        if buf:
            words.append("".join(buf))
    return words


def wordpiece(word: str, vocab: Vocab) -> list[str]:
    """Greedy longest-match subword split; a word with any unmatched span
    becomes a single [UNK]."""
    pieces = []
    start = 0
    while start < len(word):
        end = len(word)
        piece = None
        while start < end:
            candidate = word[start:end]
            if start > 0:
                candidate = CONTINUATION + candidate
            if candidate in vocab:
                piece = candidate
                break
            end -= 1
        if piece is None:
            return [UNK]
        pieces.append(piece)
        start = end
    return pieces


def tokenize(text: str, vocab: Vocab, max_len: int = 128) -> TokenSequence:
    """Tokenize to exactly max_len ids: [CLS] + pieces + [SEP], tail-truncated
    so [CLS] and a final [SEP] always survive, then padded."""
    if max_len < 2:
        raise DataError(f"max_len must be >= 2, got {max_len}")
    pieces: list[str] = []
    for word in pretokenize(text, lowercase=vocab.lowercase):
        pieces.extend(wordpiece(word, vocab))
    pieces = pieces[: max_len - 2]
    ids = [vocab.cls_id] + [vocab.token_to_id.get(p, vocab.unk_id) for p in pieces] + [vocab.sep_id]
    mask = [1] * len(ids)
    pad = max_len - len(ids)
    return TokenSequence(tuple(ids + [vocab.pad_id] * pad), tuple(mask + [0] * pad))
