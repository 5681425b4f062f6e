"""Positive-caption generation through a text-completion service.

The prompt embeds four in-context structure/caption pairs, a warm-up
question that separates them from the query, and the query object's
serialized structure. Generated answers are screened by twelve empirical
checks; a failing answer triggers one targeted follow-up prompt per
remaining iteration.
"""

from __future__ import annotations

import json
import logging
import os
import re
from dataclasses import dataclass, field, replace
from enum import IntEnum
from importlib import resources
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import requests
import yaml

from .errors import BackendError, ConfigurationError, InputValidationError
from .taxonomy import ImageRecord, StructuredObject

log = logging.getLogger("fgovd.captiongen")

DEFAULT_MAX_WORDS = 60

_SYSTEM_INSTRUCTION = (
    "You write exactly one natural-language caption for the object described "
    "by a JSON structure. Mention the object name, every part, and every "
    "attribute value exactly as given. Answer with the caption wrapped in "
    "double quotes and nothing else."
)

_WARMUP_QUESTION = (
    "I will now send one new object in the same JSON format. Describe only "
    "that object. Are you ready?"
)

_WARMUP_ANSWER = "Yes, I am ready. Send the JSON description."


@dataclass(frozen=True)
class Turn:
    role: str  # system | user | assistant
    text: str
    tag: str = ""  # example | warmup | query | answer | followup


@dataclass(frozen=True)
class PromptTranscript:
    turns: tuple[Turn, ...] = ()

    def extend(self, *turns: Turn) -> "PromptTranscript":
        return PromptTranscript(self.turns + tuple(turns))

    def example_pairs(self) -> int:
        return sum(1 for t in self.turns if t.role == "assistant" and t.tag == "example")

    def query_turn(self) -> Turn:
        for turn in reversed(self.turns):
            if turn.tag == "query":
                return turn
        raise ConfigurationError("transcript has no query turn")


class IssueCode(IntEnum):
    """The twelve empirical failure conditions, checked in key order."""

    TOO_LONG = 0
    DEFINITION = 1
    OBJECT_MISSING = 2
    PART_MISSING = 3
    ATTRIBUTE_MISSING = 4
    CONTAINS_COLON = 5
    TOO_MANY_QUOTES = 6
    CONTAINS_DIGIT = 7
    UNCLOSED_QUOTE = 8
    ILLEGAL_CHARACTER = 9
    CONTAINS_OR = 10
    CONTAINS_SINGLE = 11


FOLLOWUP_TEMPLATES: dict[IssueCode, str] = {
    IssueCode.TOO_LONG: (
        "Your answer was too long. Create only one sentence for the object "
        "that describes what the object looks like considering its attributes"
    ),
    IssueCode.DEFINITION: (
        "Your answer is a definition of what the object is. Give me a caption "
        "that only describes the object and its attributes"
    ),
    IssueCode.OBJECT_MISSING: (
        "You did not specify that you are describing a {object_name}. "
        "Reformulate the caption with this addition"
    ),
    IssueCode.PART_MISSING: (
        "You did not specify that the {object_name} has a {part_name}. "
        "Reformulate the caption with this addition"
    ),
    IssueCode.ATTRIBUTE_MISSING: (
        "Could you specify that the {attribute_type} of the {object_name} "
        "is {attribute_value}?"
    ),
    IssueCode.CONTAINS_COLON: (
        "Do not list the elements of the object. Summarize the description "
        "of the object in a natural language caption"
    ),
    IssueCode.TOO_MANY_QUOTES: (
        "You gave me more than one caption. Summarize them in only one caption"
    ),
    IssueCode.CONTAINS_DIGIT: (
        "Your answer contains a number not present in the JSON. Create a new "
        "caption considering only the attributes I gave you and without "
        "adding information"
    ),
    IssueCode.UNCLOSED_QUOTE: "Answer is not complete. Write a complete caption",
    IssueCode.ILLEGAL_CHARACTER: "Illegal characters in the caption. Remove them",
    IssueCode.CONTAINS_OR: (
        "Ensure that the attributes are described using 'and' instead of 'or' "
        "to correctly represent all the specified attributes."
    ),
    IssueCode.CONTAINS_SINGLE: (
        "You used the word 'single'; reformulate the caption without it"
    ),
}


@dataclass(frozen=True)
class CaptionIssue:
    code: IssueCode
    context: dict[str, str] = field(default_factory=dict)

    def followup_text(self, templates: Mapping[IssueCode, str] | None = None) -> str:
        template = (templates or FOLLOWUP_TEMPLATES)[self.code]
        class _Default(dict):
            def __missing__(self, key):
                return ""
        return template.format_map(_Default(self.context))


_LEGAL_EXTRA = set(" ,.'-\"")


def find_issue(
    caption_text: str,
    obj: StructuredObject,
    *,
    max_words: int = DEFAULT_MAX_WORDS,
) -> CaptionIssue | None:
    """First failing condition in key order 0-11, or None when clean."""
    text = caption_text
    lowered = text.lower()
    base_ctx = {"object_name": obj.category}

    if len(text.split()) > max_words:
        return CaptionIssue(IssueCode.TOO_LONG, base_ctx)
    if " is a " in lowered:
        return CaptionIssue(IssueCode.DEFINITION, base_ctx)
    if obj.category.lower() not in lowered:
        return CaptionIssue(IssueCode.OBJECT_MISSING, base_ctx)
    for part in obj.parts:
        if part.name.lower() not in lowered:
            return CaptionIssue(
                IssueCode.PART_MISSING, {**base_ctx, "part_name": part.name}
            )
    for slot in obj.all_slots():
        if slot.value.lower() not in lowered:
            return CaptionIssue(
                IssueCode.ATTRIBUTE_MISSING,
                {
                    **base_ctx,
                    "attribute_type": slot.attr_type,
                    "attribute_value": slot.value,
                    "object_name": slot.owner or obj.category,
                },
            )
    if ":" in text:
        return CaptionIssue(IssueCode.CONTAINS_COLON, base_ctx)
    if text.count('"') > 2:
        return CaptionIssue(IssueCode.TOO_MANY_QUOTES, base_ctx)
    if any(ch.isdigit() for ch in text):
        return CaptionIssue(IssueCode.CONTAINS_DIGIT, base_ctx)
    if text.count('"') == 1:
        return CaptionIssue(IssueCode.UNCLOSED_QUOTE, base_ctx)
    if any(not ch.isalpha() and ch not in _LEGAL_EXTRA for ch in text):
        return CaptionIssue(IssueCode.ILLEGAL_CHARACTER, base_ctx)
    if " or " in lowered:
        return CaptionIssue(IssueCode.CONTAINS_OR, base_ctx)
    if re.search(r"\bsingle\b", lowered):
        return CaptionIssue(IssueCode.CONTAINS_SINGLE, base_ctx)
    return None


def check_caption(
    caption_text: str,
    obj: StructuredObject,
    *,
    max_words: int = DEFAULT_MAX_WORDS,
) -> IssueCode | None:
    issue = find_issue(caption_text, obj, max_words=max_words)
    return None if issue is None else issue.code


@dataclass(frozen=True)
class Caption:
    text: str
    source_object_id: int
    provenance: str = "generated"  # generated | provided | propagated
    transcript: PromptTranscript | None = None


class CompletionClient(Protocol):
    """Text-completion backend; must be deterministic for fixed inputs
    when the underlying service supports seeding."""

    def complete(self, transcript: PromptTranscript) -> str: ...


# ---------------------------------------------------------------------------
# Prompt construction
# ---------------------------------------------------------------------------


def structure_dict(obj: StructuredObject) -> dict:
    """Serializable view of an object: category, attributes, parts."""

    def slot_view(slots) -> dict:
        view: dict = {}
        for slot in slots:
            existing = view.get(slot.attr_type)
            if existing is None:
                view[slot.attr_type] = slot.value
            elif isinstance(existing, list):
                existing.append(slot.value)
            else:
                view[slot.attr_type] = [existing, slot.value]
        return view

    doc: dict = {"object": obj.category}
    doc.update(slot_view(obj.attributes))
    if obj.parts:
        doc["parts"] = [
            {"name": part.name, **slot_view(part.attributes)} for part in obj.parts
        ]
    return doc


def serialize_structure(obj: StructuredObject) -> str:
    return json.dumps(structure_dict(obj))


def default_examples() -> list[tuple[dict, str]]:
    raw = json.loads(
        resources.files("fgovd.data")
        .joinpath("prompt_examples.json")
        .read_text(encoding="utf-8")
    )
    return [(entry["structure"], entry["caption"]) for entry in raw]


def load_examples(path: str | Path) -> list[tuple[dict, str]]:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return [(entry["structure"], entry["caption"]) for entry in raw]


def build_prompt(
    obj: StructuredObject,
    examples: Sequence[tuple[dict, str]] | None = None,
) -> PromptTranscript:
    """Transcript with 4 in-context pairs, the warm-up, and the query."""
    if examples is None:
        examples = default_examples()
    if len(examples) != 4:
        raise ConfigurationError(
            f"prompt needs exactly 4 in-context examples, got {len(examples)}"
        )
    turns = [Turn("system", _SYSTEM_INSTRUCTION)]
    for structure, caption in examples:
        turns.append(Turn("user", json.dumps(structure), tag="example"))
        turns.append(Turn("assistant", f'"{caption}"', tag="example"))
    turns.append(Turn("user", _WARMUP_QUESTION, tag="warmup"))
    turns.append(Turn("assistant", _WARMUP_ANSWER, tag="warmup"))
    turns.append(Turn("user", serialize_structure(obj), tag="query"))
    return PromptTranscript(tuple(turns))


# ---------------------------------------------------------------------------
# The generation loop
# ---------------------------------------------------------------------------


def extract_caption(raw_answer: str) -> str:
    """Normalize a raw model answer into caption text."""
    text = raw_answer.replace("\n", " ").replace("\t", " ").strip()
    while "  " in text:
        text = text.replace("  ", " ")
    if text.count('"') == 2:
        text = text.split('"')[1].strip()
    return text


@dataclass
class CaptionOutcome:
    caption: Caption | None
    transcript: PromptTranscript
    issues: list[IssueCode] = field(default_factory=list)

    @property
    def accepted(self) -> bool:
        return self.caption is not None


def create_caption(
    obj: StructuredObject,
    client: CompletionClient,
    *,
    followups: Mapping[IssueCode, str] | None = None,
    n_iterations: int = 1,
    examples: Sequence[tuple[dict, str]] | None = None,
    max_words: int = DEFAULT_MAX_WORDS,
) -> CaptionOutcome:
    """Generate-check-refine loop over the completion backend.

    Each of the n_iterations rounds generates an answer and returns it if
    clean; otherwise the answer plus the follow-up prompt matching its
    first issue are appended to the transcript for the next round.
    """
    if n_iterations < 1:
        raise ConfigurationError("n_iterations must be >= 1")
    transcript = build_prompt(obj, examples)
    issues: list[IssueCode] = []
    for _ in range(n_iterations):
        raw = client.complete(transcript)
        issue = find_issue(raw, obj, max_words=max_words)
        if issue is None:
            transcript = transcript.extend(Turn("assistant", raw, tag="answer"))
            caption = Caption(
                text=extract_caption(raw),
                source_object_id=obj.object_id,
                provenance="generated",
                transcript=transcript,
            )
            return CaptionOutcome(caption, transcript, issues)
        issues.append(issue.code)
        transcript = transcript.extend(
            Turn("assistant", raw, tag="answer"),
            Turn("user", issue.followup_text(followups), tag="followup"),
        )
    return CaptionOutcome(None, transcript, issues)


def propagate_captions(
    image: ImageRecord,
    captions: Mapping[int, Caption],
) -> dict[int, Caption]:
    """Give uncaptioned objects the caption of a same-category neighbor.

    The donor is the captioned object with the lowest object_id of the
    same category; existing assignments are never changed. Propagated
    entries are flagged for later review.
    """
    result = dict(captions)
    donors: dict[str, Caption] = {}
    for obj in sorted(image.objects, key=lambda o: o.object_id):
        if obj.object_id in captions and obj.category not in donors:
            donors[obj.category] = captions[obj.object_id]
    for obj in image.objects:
        if obj.object_id in result:
            continue
        donor = donors.get(obj.category)
        if donor is not None:
            result[obj.object_id] = replace(donor, provenance="propagated")
    return result


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------


class FakeCompletionClient:
    """Replays canned answers in call order; deterministic by design."""

    def __init__(self, responses: Sequence[str], repeat_last: bool = False):
        self._responses = list(responses)
        self._repeat_last = repeat_last
        self.calls = 0

    def complete(self, transcript: PromptTranscript) -> str:
        if self.calls < len(self._responses):
            answer = self._responses[self.calls]
        elif self._repeat_last and self._responses:
            answer = self._responses[-1]
        else:
            raise ConfigurationError("fake backend ran out of canned responses")
        self.calls += 1
        return answer


class TemplateCompletionClient:
    """Rule-based captioner over the query structure; needs no service.

    Useful for dry runs and pipeline demos: the produced captions contain
    every attribute value and part name verbatim, so they pass the checks.
    """

    def complete(self, transcript: PromptTranscript) -> str:
        structure = json.loads(transcript.query_turn().text)
        return f'"{self.caption_for(structure)}"'

    @staticmethod
    def caption_for(structure: dict) -> str:
        def values(entry: dict) -> list[str]:
            out: list[str] = []
            for attr_type in ("color", "material", "pattern", "transparency"):
                value = entry.get(attr_type)
                if value is None:
                    continue
                out.extend(value if isinstance(value, list) else [value])
            return out

        head = " ".join(values(structure) + [structure["object"]])
        clauses = [
            " ".join(values(part) + [part["name"]])
            for part in structure.get("parts", [])
        ]
        caption = f"A {head}"
        if clauses:
            caption += " with a " + " and a ".join(clauses)
        return caption + "."


@dataclass
class BackendProfile:
    """Declarative description of a completion backend."""

    type: str  # fake | template | http
    url: str = ""
    model: str = ""
    temperature: float = 0.0
    max_tokens: int = 120
    seed: int | None = None
    headers: dict[str, str] = field(default_factory=dict)
    request_template: dict | None = None
    response_path: str = "text"
    responses: list[str] = field(default_factory=list)
    repeat_last: bool = False
    timeout: float = 60.0


def _flatten(transcript: PromptTranscript) -> str:
    prefixes = {"system": "", "user": "User: ", "assistant": "Assistant: "}
    lines = [prefixes[t.role] + t.text for t in transcript.turns]
    return "\n".join(lines) + "\nAssistant:"


def _walk_path(payload, dotted: str):
    node = payload
    for key in dotted.split("."):
        if isinstance(node, list):
            node = node[int(key)]
        elif isinstance(node, dict):
            node = node[key]
        else:
            raise KeyError(dotted)
    return node


class HttpCompletionClient:
    """POSTs the flattened transcript to a text-completion endpoint.

    The request body and the answer's location in the response are both
    profile-configurable so different serving stacks can be plugged in.
    """

    def __init__(self, profile: BackendProfile):
        if not profile.url:
            raise ConfigurationError("http backend profile needs a url")
        self.profile = profile

    def _body(self, prompt: str) -> dict:
        p = self.profile
        if p.request_template is not None:
            def fill(node):
                if isinstance(node, str):
                    return (
                        node.replace("{prompt}", prompt)
                        .replace("{model}", p.model)
                    )
                if isinstance(node, dict):
                    return {k: fill(v) for k, v in node.items()}
                if isinstance(node, list):
                    return [fill(v) for v in node]
                return node
            return fill(p.request_template)
        body = {
            "model": p.model,
            "prompt": prompt,
            "temperature": p.temperature,
            "max_tokens": p.max_tokens,
        }
        if p.seed is not None:
            body["seed"] = p.seed
        return body

    def complete(self, transcript: PromptTranscript) -> str:
        prompt = _flatten(transcript)
        try:
            response = requests.post(
                self.profile.url,
                json=self._body(prompt),
                headers=self.profile.headers,
                timeout=self.profile.timeout,
            )
            response.raise_for_status()
            payload = response.json()
        except requests.RequestException as exc:
            raise BackendError(f"completion request failed: {exc}") from exc
        try:
            return str(_walk_path(payload, self.profile.response_path))
        except (KeyError, IndexError, ValueError) as exc:
            raise BackendError(
                f"response lacks field {self.profile.response_path!r}"
            ) from exc


def load_backend(
    profile_path: str | Path | None = None,
    *,
    env: Mapping[str, str] | None = None,
) -> CompletionClient:
    """Build a CompletionClient from a profile file.

    Without a profile the deterministic template backend is used. The
    FGOVD_BACKEND_URL environment variable overrides the profile URL.
    """
    env = env if env is not None else os.environ
    if profile_path is None:
        return TemplateCompletionClient()
    path = Path(profile_path)
    if not path.exists():
        raise ConfigurationError(f"backend profile {path} not found")
    doc = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    if not isinstance(doc, dict) or "type" not in doc:
        raise ConfigurationError(f"{path}: backend profile needs a 'type' field")
    kind = doc.pop("type")
    if kind == "template":
        return TemplateCompletionClient()
    if kind == "fake":
        return FakeCompletionClient(
            doc.get("responses", []), repeat_last=bool(doc.get("repeat_last", False))
        )
    if kind == "http":
        known = {f for f in BackendProfile.__dataclass_fields__}
        profile = BackendProfile(
            type="http", **{k: v for k, v in doc.items() if k in known and k != "type"}
        )
        override = env.get("FGOVD_BACKEND_URL")
        if override:
            profile.url = override
        return HttpCompletionClient(profile)
    raise ConfigurationError(f"{path}: unknown backend type {kind!r}")


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def write_transcript(transcript: PromptTranscript, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for turn in transcript.turns:
            fh.write(json.dumps({"role": turn.role, "text": turn.text, "tag": turn.tag}))
            fh.write("\n")


def read_transcript(path: str | Path) -> PromptTranscript:
    turns = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        turns.append(Turn(doc["role"], doc["text"], doc.get("tag", "")))
    return PromptTranscript(tuple(turns))


def write_captions(path: str | Path, rows: Sequence[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row))
            fh.write("\n")


def load_captions(path: str | Path) -> dict[int, Caption]:
    """Read a captions JSONL file into an object_id -> Caption map."""
    captions: dict[int, Caption] = {}
    for lineno, line in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), start=1
    ):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
            object_id = int(doc["object_id"])
            text = doc["text"]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise InputValidationError(f"{path}: line {lineno}: {exc}") from exc
        captions[object_id] = Caption(
            text=text,
            source_object_id=int(doc.get("source_object_id", object_id)),
            provenance=doc.get("provenance", "provided"),
        )
    return captions
