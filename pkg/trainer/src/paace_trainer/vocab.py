"""Word-level vocabulary with newline preserved as its own token."""

from __future__ import annotations

from collections.abc import Iterable

PAD = "<pad>"
UNK = "<unk>"
BOS = "<bos>"
SEP = "<sep>"
EOS = "<eos>"
NL = "<nl>"
NUM = "<num>"
SPECIALS = (PAD, UNK, BOS, SEP, EOS, NL, NUM)


def words(text: str) -> list[str]:
    """Whitespace tokens, with line breaks kept as explicit markers.

    Bare integers collapse into one number class: concrete values change from
    workflow to workflow, and the model selects lines rather than spelling
    digits back out, so sharing one bucket generalizes across corpora.
    """
    out = []
    for tok in text.replace("\n", f" {NL} ").split():
        out.append(NUM if tok.isdigit() else tok)
    return out


class Vocab:
    def __init__(self, tokens: list[str]) -> None:
        if tuple(tokens[: len(SPECIALS)]) != SPECIALS:
            raise ValueError("vocabulary must start with the special tokens")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary contains duplicates")
        self._tokens = list(tokens)
        self._ids = {tok: i for i, tok in enumerate(tokens)}

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "Vocab":
        seen = set()
        for text in texts:
            seen.update(words(text))
        seen.difference_update(SPECIALS)
        return cls(list(SPECIALS) + sorted(seen))

    def __len__(self) -> int:
        return len(self._tokens)

    @property
    def pad_id(self) -> int:
        return self._ids[PAD]

    @property
    def unk_id(self) -> int:
        return self._ids[UNK]

    @property
    def bos_id(self) -> int:
        return self._ids[BOS]

    @property
    def sep_id(self) -> int:
        return self._ids[SEP]

    @property
    def eos_id(self) -> int:
        return self._ids[EOS]

    def encode(self, text: str) -> list[int]:
        unk = self.unk_id
        return [self._ids.get(tok, unk) for tok in words(text)]

    def decode(self, ids: Iterable[int]) -> str:
        parts: list[str] = []
        for i in ids:
            tok = self._tokens[i]
            if tok in (PAD, BOS, SEP, EOS):
                continue
            if tok == NL:
                parts.append("\n")
            elif not parts or parts[-1] == "\n":
                parts.append(tok)
            else:
                parts.append(" " + tok)
        return "".join(parts)

    def to_list(self) -> list[str]:
        return list(self._tokens)
