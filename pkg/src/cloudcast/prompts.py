"""3D-oriented language commands, the LLM client, and the response cache.

Command templates are data, not code: they ship as an editable JSON file
with a family tag and a "[CLASS]" placeholder each. Responses are cached
one JSON file per content hash, so a fully cached run never touches the
network.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import httpx

from .errors import DomainError, FormatError, ProtocolError, TransportError

FAMILIES = ("caption", "question", "paraphrase", "words")
CLASS_SLOT = "[CLASS]"
PART_SLOT = "[PART]"

DEFAULT_ENGINE = "text-davinci-002"
DEFAULT_TEMPERATURE = 0.7
DEFAULT_MAX_TOKENS = 40
DEFAULT_N_PER_COMMAND = 20


@dataclass(frozen=True)
class CommandTemplate:
    """One command pattern; text must carry a class (or part) placeholder."""

    family: str
    text: str

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"unknown command family {self.family!r}; expected {FAMILIES}")
        if CLASS_SLOT not in self.text and PART_SLOT not in self.text:
            raise DomainError(f"template lacks a {CLASS_SLOT} or {PART_SLOT} placeholder: {self.text!r}")


@dataclass(frozen=True)
class Command:
    """A template instantiated for one class."""

    family: str
    text: str


@dataclass(frozen=True)
class CommandSet:
    """Instantiated commands per class, in class and template order."""

    classes: Dict[str, List[Command]]

    def total(self) -> int:
        return sum(len(cmds) for cmds in self.classes.values())


@dataclass(frozen=True)
class Description:
    text: str
    family: str


@dataclass(frozen=True)
class DescriptionSet:
    """Generated descriptions per class, with the generation settings used."""

    classes: Dict[str, List[Description]]
    engine: str
    temperature: float
    max_tokens: int

    def counts(self) -> Dict[str, int]:
        return {name: len(descs) for name, descs in self.classes.items()}


def default_templates() -> List[CommandTemplate]:
    raw = resources.files("cloudcast.data").joinpath("commands_default.json").read_text()
    return [CommandTemplate(e["family"], e["text"]) for e in json.loads(raw)]


def load_templates(path: Union[str, Path]) -> List[CommandTemplate]:
    path = Path(path)
    try:
        entries = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: cannot parse template file: {exc}")
    if not isinstance(entries, list) or not entries:
        raise FormatError(f"{path}: expected a non-empty JSON list of templates")
    try:
        return [CommandTemplate(e["family"], e["text"]) for e in entries]
    except (TypeError, KeyError) as exc:
        raise FormatError(f"{path}: template entry missing field: {exc}")


def build_commands(
    class_names: Sequence[str],
    templates: Optional[Sequence[CommandTemplate]] = None,
) -> CommandSet:
    """Instantiate every template once per class, preserving both orders."""
    if templates is None:
        templates = default_templates()
    for name in class_names:
        if not isinstance(name, str) or not name.strip():
            raise DomainError(f"class names must be non-empty strings, got {name!r}")
    classes = {
        name: [Command(t.family, t.text.replace(CLASS_SLOT, name)) for t in templates]
        for name in class_names
    }
    return CommandSet(classes)


def build_part_command(part: str, cls: str) -> str:
    if not part or not cls:
        raise DomainError("part and class names must be non-empty")
    return f"Describe the {part} part of a {cls} in a depth map:"


class LlmClient:
    """Single-POST JSON protocol against a completion endpoint."""

    def __init__(self, url: str, timeout: float = 60.0, transport=None):
        self.url = url
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "LlmClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def complete(self, command: str, n: int, temperature: float, max_tokens: int, engine: str) -> List[str]:
        body = {
            "command": command,
            "n": n,
            "temperature": temperature,
            "max_tokens": max_tokens,
            "engine": engine,
        }
        try:
            resp = self._client.post(self.url, json=body)
        except httpx.HTTPError as exc:
            raise TransportError(f"language service unreachable: {exc}")
        if resp.status_code != 200:
            raise TransportError(f"language service returned HTTP {resp.status_code}")
        try:
            payload = resp.json()
            descriptions = payload["descriptions"]
        except (ValueError, KeyError, TypeError) as exc:
            raise ProtocolError(f"malformed language service reply: {exc}")
        if not isinstance(descriptions, list) or not all(isinstance(d, str) for d in descriptions):
            raise ProtocolError("language service reply must carry a list of strings")
        return descriptions


def cache_key(command: str, n: int, temperature: float, max_tokens: int, engine: str) -> str:
    blob = json.dumps(
        {
            "command": command,
            "n": n,
            "temperature": temperature,
            "max_tokens": max_tokens,
            "engine": engine,
        },
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _write_cache_atomic(path: Path, payload: dict) -> None:
    # concurrent writers race benignly: temp file plus atomic rename
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".json")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def _read_cache(path: Path) -> List[str]:
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
        descriptions = payload["descriptions"]
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: corrupt cache entry: {exc}")
    if not isinstance(descriptions, list) or not all(isinstance(d, str) for d in descriptions):
        raise FormatError(f"{path}: cache entry must hold a list of strings")
    return descriptions


def generate_descriptions(
    commands: CommandSet,
    client,
    cache_dir: Union[str, Path],
    *,
    n_per_command: int = DEFAULT_N_PER_COMMAND,
    temperature: float = DEFAULT_TEMPERATURE,
    max_tokens: int = DEFAULT_MAX_TOKENS,
    engine: str = DEFAULT_ENGINE,
    max_workers: int = 1,
) -> DescriptionSet:
    """Fulfil every command from the cache, querying only what is missing.

    Duplicate command strings collapse to one service call. If any command
    can be neither loaded nor fetched, a transport error lists them all.
    """
    cache = Path(cache_dir)
    cache.mkdir(parents=True, exist_ok=True)

    unique: List[str] = []
    seen = set()
    for cmds in commands.classes.values():
        for cmd in cmds:
            if cmd.text not in seen:
                seen.add(cmd.text)
                unique.append(cmd.text)

    results: Dict[str, List[str]] = {}
    to_fetch: List[str] = []
    for text in unique:
        path = cache / f"{cache_key(text, n_per_command, temperature, max_tokens, engine)}.json"
        if path.exists():
            results[text] = _read_cache(path)[:n_per_command]
        else:
            to_fetch.append(text)

    failures: List[str] = []

    def fetch(text: str):
        try:
            descriptions = client.complete(text, n_per_command, temperature, max_tokens, engine)
        except TransportError:
            return text, None
        return text, descriptions[:n_per_command]

    if to_fetch:
        if max_workers > 1:
            with ThreadPoolExecutor(max_workers=max_workers) as pool:
                fetched = list(pool.map(fetch, to_fetch))
        else:
            fetched = [fetch(t) for t in to_fetch]
        for text, descriptions in fetched:
            if descriptions is None:
                failures.append(text)
                continue
            path = cache / f"{cache_key(text, n_per_command, temperature, max_tokens, engine)}.json"
            _write_cache_atomic(
                path,
                {
                    "command": text,
                    "n": n_per_command,
                    "temperature": temperature,
                    "max_tokens": max_tokens,
                    "engine": engine,
                    "descriptions": descriptions,
                },
            )
            results[text] = descriptions

    if failures:
        listing = "; ".join(failures[:5]) + ("; ..." if len(failures) > 5 else "")
        raise TransportError(f"{len(failures)} command(s) unfulfilled and not cached: {listing}")

    classes = {
        name: [Description(d, cmd.family) for cmd in cmds for d in results[cmd.text]]
        for name, cmds in commands.classes.items()
    }
    return DescriptionSet(classes, engine=engine, temperature=temperature, max_tokens=max_tokens)
