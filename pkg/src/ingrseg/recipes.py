"""Recipe records, the corpus file format, and the semantic dish vocabulary."""

from __future__ import annotations

import json
import os
import re
import warnings
from collections import Counter
from dataclasses import dataclass

from . import DataError

_PUNCT = re.compile(r"[^\w\s]", flags=re.UNICODE)


@dataclass(frozen=True)
class Recipe:
    recipe_id: str
    title: str
    ingredient_tokens: tuple[int, ...]
    instruction_sentences: tuple[tuple[int, ...], ...]
    semantic_label: int | None = None

    def __post_init__(self):
        if not self.ingredient_tokens:
            raise DataError(f"recipe {self.recipe_id}: needs at least one ingredient token")
        object.__setattr__(self, "ingredient_tokens", tuple(int(t) for t in self.ingredient_tokens))
        object.__setattr__(
            self,
            "instruction_sentences",
            tuple(tuple(int(t) for t in s) for s in self.instruction_sentences),
        )


@dataclass(frozen=True)
class SemanticVocabulary:
    """Top-K normalized dish titles, labels ordered by descending frequency."""

    title_to_label: dict[str, int]
    frequencies: dict[int, int]

    @property
    def num_labels(self) -> int:
        return len(self.title_to_label)

    def label_for(self, title: str) -> int | None:
        return self.title_to_label.get(normalize_title(title))


def normalize_title(title: str) -> str:
    return " ".join(_PUNCT.sub(" ", title.lower()).split())


def build_semantic_vocab(titles: list[str], k: int = 2000) -> SemanticVocabulary:
    """Assign labels 0..K-1 to the K most frequent normalized titles.

    Ties break lexicographically; if fewer than K distinct titles exist the
    vocabulary shrinks to the distinct count with a warning.
    """
    if not titles:
        raise DataError("cannot build a semantic vocabulary from an empty title list")
    counts = Counter(normalize_title(t) for t in titles)
    counts.pop("", None)
    if k > len(counts):
        warnings.warn(
            f"requested {k} semantic labels but only {len(counts)} distinct titles exist",
            stacklevel=2,
        )
        k = len(counts)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:k]
    title_to_label = {t: i for i, (t, _) in enumerate(ranked)}
    return SemanticVocabulary(
        title_to_label=title_to_label,
        frequencies={i: c for i, (_, c) in enumerate(ranked)},
    )


def save_corpus(recipes: list[Recipe], path: str | os.PathLike) -> None:
    """One JSON record per line: id, title, ingredient tokens, instruction sentences."""
    with open(path, "w") as f:
        for r in recipes:
            f.write(
                json.dumps(
                    {
                        "id": r.recipe_id,
                        "title": r.title,
                        "ingredient_tokens": list(r.ingredient_tokens),
                        "instruction_sentences": [list(s) for s in r.instruction_sentences],
                        "semantic_label": r.semantic_label,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def load_corpus(path: str | os.PathLike) -> list[Recipe]:
    if not os.path.exists(path):
        raise DataError(f"recipe corpus not found: {path}")
    recipes = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
                recipes.append(
                    Recipe(
                        recipe_id=str(d["id"]),
                        title=str(d["title"]),
                        ingredient_tokens=tuple(d["ingredient_tokens"]),
                        instruction_sentences=tuple(tuple(s) for s in d["instruction_sentences"]),
                        semantic_label=d.get("semantic_label"),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise DataError(f"{path}:{lineno}: bad recipe record: {e}") from None
    return recipes


def label_recipes(recipes: list[Recipe], vocab: SemanticVocabulary) -> list[Recipe]:
    """Attach semantic labels from the vocabulary (None when out of vocabulary)."""
    out = []
    for r in recipes:
        out.append(
            Recipe(
                recipe_id=r.recipe_id,
                title=r.title,
                ingredient_tokens=r.ingredient_tokens,
                instruction_sentences=r.instruction_sentences,
                semantic_label=vocab.label_for(r.title),
            )
        )
    return out
