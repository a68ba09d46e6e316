"""Category taxonomy with supercategory-based exclusions and label mapping.

The default table is the 46-name apparel taxonomy the shipped datasets use;
after dropping the part/closure/decoration supercategories and five
under-represented names, 22 primary-apparel categories remain.
"""

from __future__ import annotations

import re
import string
from dataclasses import dataclass
from typing import Iterable

from .datamodel import Category

# (id, name, supercategory)
DEFAULT_CATEGORY_TABLE: tuple[tuple[int, str, str], ...] = (
    (1, "shirt, blouse", "upperbody"),
    (2, "top, t-shirt, sweatshirt", "upperbody"),
    (3, "sweater", "upperbody"),
    (4, "cardigan", "upperbody"),
    (5, "jacket", "upperbody"),
    (6, "vest", "upperbody"),
    (7, "pants", "lowerbody"),
    (8, "shorts", "lowerbody"),
    (9, "skirt", "lowerbody"),
    (10, "coat", "wholebody"),
    (11, "dress", "wholebody"),
    (12, "jumpsuit", "wholebody"),
    (13, "cape", "wholebody"),
    (14, "glasses", "head"),
    (15, "hat", "head"),
    (16, "headband, head covering, hair accessory", "head"),
    (17, "tie", "neck"),
    (18, "glove", "arms and hands"),
    (19, "watch", "arms and hands"),
    (20, "belt", "waist"),
    (21, "leg warmer", "legs and feet"),
    (22, "tights, stockings", "legs and feet"),
    (23, "sock", "legs and feet"),
    (24, "shoe", "legs and feet"),
    (25, "bag, wallet", "others"),
    (26, "scarf", "neck"),
    (27, "umbrella", "others"),
    (28, "hood", "garment parts"),
    (29, "collar", "garment parts"),
    (30, "lapel", "garment parts"),
    (31, "epaulette", "garment parts"),
    (32, "sleeve", "garment parts"),
    (33, "pocket", "garment parts"),
    (34, "neckline", "garment parts"),
    (35, "buckle", "closures"),
    (36, "zipper", "closures"),
    (37, "applique", "decorations"),
    (38, "bead", "decorations"),
    (39, "bow", "decorations"),
    (40, "flower", "decorations"),
    (41, "fringe", "decorations"),
    (42, "ribbon", "decorations"),
    (43, "rivet", "decorations"),
    (44, "ruffle", "decorations"),
    (45, "sequin", "decorations"),
    (46, "tassel", "decorations"),
)

DEFAULT_EXCLUDED_SUPERCATEGORIES = frozenset({"garment parts", "closures", "decorations"})
DEFAULT_EXCLUDED_NAMES = frozenset({"sweater", "cape", "tie", "belt", "leg warmer"})

_PUNCT_TABLE = str.maketrans({c: " " for c in string.punctuation})


def normalize_label(text: str) -> str:
    """Lowercases, strips punctuation and collapses whitespace.

    Comma-form names like "bag, wallet" normalize to "bag wallet", so oracle
    outputs match on the full normalized string.
    """
    return re.sub(r"\s+", " ", text.lower().translate(_PUNCT_TABLE)).strip()


@dataclass(frozen=True)
class LabelRejection:
    reason: str  # "excluded_category" | "unknown_label"
    detail: str


@dataclass(frozen=True)
class Ontology:
    categories: tuple[Category, ...]
    excluded_supercategories: frozenset[str] = DEFAULT_EXCLUDED_SUPERCATEGORIES
    excluded_names: frozenset[str] = DEFAULT_EXCLUDED_NAMES

    @classmethod
    def default(cls) -> "Ontology":
        return cls(
            categories=tuple(
                Category(id=i, name=n, supercategory=s) for i, n, s in DEFAULT_CATEGORY_TABLE
            )
        )

    def surviving(self) -> tuple[Category, ...]:
        """Categories kept after supercategory and name exclusions."""
        excluded_names = {normalize_label(n) for n in self.excluded_names}
        return tuple(
            c
            for c in self.categories
            if c.supercategory not in self.excluded_supercategories
            and normalize_label(c.name) not in excluded_names
        )

    def lookup(self) -> dict[str, Category]:
        return {normalize_label(c.name): c for c in self.categories}


def map_label(label: str, ont: Ontology) -> Category | LabelRejection:
    """Maps a free-text label onto the ontology.

    Unknown labels and labels landing in excluded supercategories or on the
    excluded-name list come back as :class:`LabelRejection` data, not errors.
    """
    norm = normalize_label(label)
    cat = ont.lookup().get(norm)
    if cat is None:
        return LabelRejection(reason="unknown_label", detail=label)
    if cat.supercategory in ont.excluded_supercategories:
        return LabelRejection(reason="excluded_category", detail=cat.supercategory)
    if norm in {normalize_label(n) for n in ont.excluded_names}:
        return LabelRejection(reason="excluded_category", detail=cat.name)
    return cat
