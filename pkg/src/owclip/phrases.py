"""LLM-backed visual feature phrase generation.

A class label is rendered into a fixed prompt template, the provider's raw
character stream is parsed back into a numbered phrase list, and the user
ticks the phrases that actually describe the class. Tests and offline use
run against the deterministic mock provider; the HTTP provider talks to any
chat-completions style endpoint.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from typing import Protocol

from .errors import ConfigError, InputError, ParseError

N_PHRASES_DEFAULT = 10
MAX_LABEL_LEN = 64
MAX_REPROMPTS = 2

_TEMPLATE = (
    "You are helping build an object recognition dataset.\n"
    "List exactly {n} short visual feature phrases for the object class {label}.\n"
    "Each phrase must name a visible attribute (shape, texture, color, part),\n"
    "be at most eight words, and mention no other object classes.\n"
    "Answer with a numbered list only, one phrase per line, in the form\n"
    "'1. <phrase>'. No introduction, no prose, no closing remarks."
)


@dataclass(frozen=True)
class PhrasePrompt:
    template_id: str
    class_label: str
    n_phrases: int
    rendered: str


def render_prompt(class_label: str, n_phrases: int = N_PHRASES_DEFAULT) -> PhrasePrompt:
    """Deterministic prompt for one class label.

    The label is embedded JSON-quoted so delimiter characters cannot break
    the template structure.
    """
    if not class_label:
        raise InputError("class label must be non-empty")
    if len(class_label) > MAX_LABEL_LEN:
        raise InputError(f"class label longer than {MAX_LABEL_LEN} chars")
    if "\n" in class_label or "\r" in class_label:
        raise InputError("class label must not contain line breaks")
    rendered = _TEMPLATE.format(n=n_phrases, label=json.dumps(class_label))
    return PhrasePrompt(template_id="visual-attributes-v1", class_label=class_label,
                        n_phrases=n_phrases, rendered=rendered)


@dataclass
class PhraseList:
    class_label: str
    phrases: list[str]
    selected: list[bool] = field(default_factory=list)

    def __post_init__(self):
        if not self.selected:
            self.selected = [False] * len(self.phrases)

    def selected_phrases(self) -> list[str]:
        return [p for p, s in zip(self.phrases, self.selected) if s]

    def to_json(self) -> dict:
        return {"class_label": self.class_label, "phrases": self.phrases,
                "selected": self.selected}

    @classmethod
    def from_json(cls, row: dict) -> "PhraseList":
        return cls(class_label=row["class_label"], phrases=list(row["phrases"]),
                   selected=list(row["selected"]))


_LINE_RE = re.compile(r"^\s*\d+[.)]\s+(.+)$")


def parse_phrases(raw: str, class_label: str = "") -> PhraseList:
    """Extract numbered-list lines from arbitrary text.

    Lines matching ``<number>. phrase`` or ``<number>) phrase`` are kept in
    order, trimmed, and deduplicated case-insensitively. Anything else is
    ignored. Raises ParseError when nothing matches (caller should re-prompt).
    """
    phrases: list[str] = []
    seen: set[str] = set()
    for line in str(raw).splitlines():
        m = _LINE_RE.match(line)
        if not m:
            continue
        phrase = m.group(1).strip()
        key = phrase.lower()
        if phrase and key not in seen:
            seen.add(key)
            phrases.append(phrase)
    if not phrases:
        raise ParseError("no numbered phrases found in provider output")
    return PhraseList(class_label=class_label, phrases=phrases)


def select_phrases(phrase_list: PhraseList, indices) -> PhraseList:
    """Set the selection flags for the given indices (replaces the previous set)."""
    flags = [False] * len(phrase_list.phrases)
    for i in indices:
        if not (0 <= i < len(flags)):
            raise InputError(f"phrase index {i} out of range")
        flags[i] = True
    phrase_list.selected = flags
    return phrase_list


def format_phrases(phrases: list[str]) -> str:
    """Inverse of parse_phrases for well-formed phrase sets."""
    return "\n".join(f"{i + 1}. {p}" for i, p in enumerate(phrases))


class LLMProvider(Protocol):
    name: str

    def generate(self, prompt: str) -> str: ...


# Small attribute vocabulary the mock provider draws from. Realistic enough
# for demos; deterministic per label either way.
_FIXTURE_BANK = {
    "zebra": [
        "black and white striped pattern",
        "erect short mane",
        "horse-like body shape",
        "long narrow muzzle",
        "thin upright ears",
        "striped legs down to hooves",
        "tail ending in a tuft",
        "barrel-shaped torso",
        "stripes converging on the shoulders",
        "dark muzzle tip",
    ],
    "giraffe": [
        "extremely long neck",
        "brown patchwork coat pattern",
        "two short skin-covered horns",
        "long thin legs",
        "sloped back from shoulder to tail",
        "small head with large eyes",
        "short upright mane along the neck",
        "whitish belly with no patches",
        "tall stature above surrounding animals",
        "prehensile upper lip",
    ],
    "tie": [
        "long narrow strip of fabric",
        "pointed triangular lower end",
        "knot at the collar",
        "hangs vertically down the chest",
        "silky reflective texture",
        "diagonal stripe pattern",
        "worn against a buttoned shirt",
        "wider blade over a narrow tail",
        "folded band around the neck",
        "smooth woven fabric surface",
    ],
}

_SHAPES = ["rounded", "elongated", "angular", "tapered", "compact", "slender",
           "boxy", "curved"]
_PARTS = ["outline", "surface", "upper section", "base", "edge", "front face",
          "body", "top"]
_TEXTURES = ["smooth", "ridged", "glossy", "matte", "patterned", "speckled",
             "striped", "textured"]


class MockLLMProvider:
    """Deterministic provider: fixture bank when known, generated attributes otherwise."""

    name = "mock"

    def __init__(self, extra_bank: dict[str, list[str]] | None = None):
        self.bank = dict(_FIXTURE_BANK)
        if extra_bank:
            self.bank.update(extra_bank)

    def generate(self, prompt: str) -> str:
        label, n = self._extract(prompt)
        if label in self.bank:
            phrases = self.bank[label][:n]
        else:
            phrases = self._synth(label, n)
        return format_phrases(phrases)

    @staticmethod
    def _extract(prompt: str) -> tuple[str, int]:
        m = re.search(r"List exactly (\d+) short visual feature phrases for the object class (\".*\")\.", prompt)
        if not m:
            raise InputError("prompt does not match the rendered template")
        return json.loads(m.group(2)), int(m.group(1))

    @staticmethod
    def _synth(label: str, n: int) -> list[str]:
        import hashlib

        import numpy as np

        seed = int.from_bytes(hashlib.sha256(label.encode("utf-8")).digest()[:8], "little")
        rng = np.random.default_rng(seed)
        phrases: list[str] = []
        seen: set[str] = set()
        while len(phrases) < n:
            shape = _SHAPES[rng.integers(len(_SHAPES))]
            part = _PARTS[rng.integers(len(_PARTS))]
            texture = _TEXTURES[rng.integers(len(_TEXTURES))]
            phrase = f"{shape} {part} with a {texture} finish"
            if phrase not in seen:
                seen.add(phrase)
                phrases.append(phrase)
        return phrases


class HttpChatProvider:
    """Minimal chat-completions client. The API key comes from an env var
    and is never persisted."""

    name = "http-chat"

    def __init__(self, endpoint: str, model: str, api_key_env: str = "OWCLIP_LLM_API_KEY",
                 timeout: float = 30.0):
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout

    def generate(self, prompt: str) -> str:
        import requests

        api_key = os.environ.get(self.api_key_env)
        if not api_key:
            raise ConfigError(f"missing API key env var {self.api_key_env}")
        resp = requests.post(
            self.endpoint,
            json={"model": self.model,
                  "messages": [{"role": "user", "content": prompt}]},
            headers={"Authorization": f"Bearer {api_key}"},
            timeout=self.timeout)
        resp.raise_for_status()
        return resp.json()["choices"][0]["message"]["content"]


def generate_phrases(provider: LLMProvider, class_label: str,
                     n_phrases: int = N_PHRASES_DEFAULT,
                     max_reprompts: int = MAX_REPROMPTS) -> PhraseList:
    """Render, invoke, parse; re-prompt a bounded number of times on garbage."""
    prompt = render_prompt(class_label, n_phrases)
    last_error: ParseError | None = None
    for _ in range(1 + max_reprompts):
        raw = provider.generate(prompt.rendered)
        try:
            return parse_phrases(raw, class_label=class_label)
        except ParseError as exc:
            last_error = exc
    raise last_error
