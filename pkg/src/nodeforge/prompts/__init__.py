"""Prompt assets, loaded from text files at runtime.

Each asset file holds ``@@ system`` and/or ``@@ user`` sections. Slots are
written ``<name>`` or ``{name}``; :func:`fill` substitutes only the names it
is given, in a single pass, so substituted text is never re-scanned.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Mapping

_SECTION = re.compile(r"^@@ (system|user)\s*$", re.MULTILINE)


@dataclass(frozen=True)
class PromptAsset:
    name: str
    system: str
    user: str

    @property
    def text(self) -> str:
        return "\n".join(p for p in (self.system, self.user) if p)


def asset_names() -> list[str]:
    return sorted(manifest()["assets"])


@lru_cache(maxsize=None)
def manifest() -> dict:
    return json.loads(resources.files(__name__).joinpath("manifest.json").read_text("utf-8"))


@lru_cache(maxsize=None)
def raw(name: str) -> str:
    if name not in manifest()["assets"]:
        raise KeyError(f"unknown prompt asset {name!r}")
    return resources.files(__name__).joinpath(f"{name}.txt").read_text("utf-8")


def load(name: str) -> PromptAsset:
    text = raw(name)
    parts = _SECTION.split(text)
    if len(parts) == 1:
        return PromptAsset(name, "", text.strip("\n"))
    sections = {"system": "", "user": ""}
    for label, body in zip(parts[1::2], parts[2::2]):
        sections[label] = body.strip("\n")
    return PromptAsset(name, sections["system"], sections["user"])


def fill(text: str, values: Mapping[str, object]) -> str:
    if not values:
        return text
    names = "|".join(re.escape(k) for k in sorted(values, key=len, reverse=True))
    pattern = re.compile(r"<(" + names + r")>|\{(" + names + r")\}")
    return pattern.sub(lambda m: str(values[m.group(1) or m.group(2)]), text)


def render(name: str, **values) -> tuple[str, str]:
    """Load an asset and fill both sections; returns ``(system, user)``."""
    asset = load(name)
    return fill(asset.system, values), fill(asset.user, values)
