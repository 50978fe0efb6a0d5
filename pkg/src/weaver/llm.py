"""Completion plumbing: requests, the on-disk cache, and prompt builders.

Completions are cached content-addressed: the key hashes everything that
changes the sampling distribution (prompt, decoding parameters, backend
identity) but not ``n``, so asking for more samples later appends to the
same entry and earlier samples never change.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Protocol

import requests as _requests
from filelock import FileLock

from .errors import BackendUnavailable, FixtureMissing, InferenceFailed, RateLimited
from .parser import FunctionNode, try_parse_definition
from .target import TargetConfig

log = logging.getLogger(__name__)

# Named logit-bias presets; backends translate tags into whatever their wire
# format expects. "suppress-def" discourages restating the def line when
# completing a body.
BIAS_PRESETS: dict[str, dict[str, float]] = {
    "suppress-def": {"def": -100.0},
}


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    n: int = 1
    temperature: float = 0.6
    max_tokens: int = 500
    stop: tuple[str, ...] = ()
    logit_bias_tags: tuple[str, ...] = ()
    presence_penalty: float = 0.0


@dataclass
class CandidateSet:
    """Ordered implementation candidates for one function."""

    function: str
    implementations: list[str]
    sample_indices: list[int]

    def __len__(self) -> int:
        return len(self.implementations)


def cache_key(request: GenerationRequest, backend_id: str) -> str:
    """Stable hex digest of the request identity. ``n`` is excluded."""

    payload = json.dumps(
        [
            request.prompt,
            request.temperature,
            request.max_tokens,
            list(request.stop),
            backend_id,
            list(request.logit_bias_tags),
            request.presence_penalty,
        ],
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class CompletionCache:
    """One ``<key>.completions`` file per key, one JSON string per line."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def path(self, key: str) -> Path:
        return self.directory / f"{key}.completions"

    def lock(self, key: str) -> FileLock:
        return FileLock(str(self.path(key)) + ".lock")

    def read(self, key: str) -> list[str]:
        path = self.path(key)
        if not path.exists():
            return []
        return [json.loads(line) for line in path.read_text().splitlines() if line]

    def append(self, key: str, completions: list[str]) -> None:
        with self.path(key).open("a") as fh:
            for text in completions:
                fh.write(json.dumps(text, ensure_ascii=False) + "\n")


class Backend(Protocol):
    id: str

    def complete(self, request: GenerationRequest, offset: int = 0) -> list[str]:
        """Return ``request.n`` completion texts.

        ``offset`` says how many completions for this request identity were
        served before; sampling backends ignore it, replay backends use it.
        """


class MockBackend:
    """Serves completions from fixture files laid out like the cache."""

    def __init__(self, fixture_dir: str | Path, backend_id: str = "mock"):
        self.id = backend_id
        self.fixtures = CompletionCache(fixture_dir)

    def complete(self, request: GenerationRequest, offset: int = 0) -> list[str]:
        key = cache_key(request, self.id)
        available = self.fixtures.read(key)
        if not available and not self.fixtures.path(key).exists():
            raise FixtureMissing(
                f"no fixture for key {key[:12]}... "
                f"(prompt starts {request.prompt[:60]!r})"
            )
        got = available[offset : offset + request.n]
        if len(got) < request.n:
            raise FixtureMissing(
                f"fixture {key[:12]}... has {len(available)} completions, "
                f"need {offset + request.n}"
            )
        return got


class HttpBackend:
    """Plain completions-over-HTTP client (OpenAI-compatible wire shape)."""

    MAX_ATTEMPTS = 5

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        *,
        backoff: float = 0.5,
        sleep=time.sleep,
        session=None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.id = f"http:{model}"
        self.backoff = backoff
        self.sleep = sleep
        self.session = session or _requests.Session()

    def _bias(self, tags: tuple[str, ...]) -> dict[str, float]:
        merged: dict[str, float] = {}
        for tag in tags:
            merged.update(BIAS_PRESETS.get(tag, {}))
        return merged

    def complete(self, request: GenerationRequest, offset: int = 0) -> list[str]:
        payload = {
            "model": self.model,
            "prompt": request.prompt,
            "n": request.n,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "presence_penalty": request.presence_penalty,
        }
        if request.stop:
            payload["stop"] = list(request.stop)
        bias = self._bias(request.logit_bias_tags)
        if bias:
            payload["logit_bias"] = bias
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error: Exception | None = None
        rate_limited = False
        for attempt in range(self.MAX_ATTEMPTS):
            if attempt:
                self.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self.session.post(
                    f"{self.base_url}/completions",
                    json=payload,
                    headers=headers,
                    timeout=120,
                )
            except _requests.RequestException as exc:
                last_error = exc
                continue
            if resp.status_code == 429:
                rate_limited = True
                last_error = RuntimeError("rate limited")
                continue
            if resp.status_code >= 500:
                last_error = RuntimeError(f"server error {resp.status_code}")
                continue
            if resp.status_code != 200:
                raise BackendUnavailable(
                    f"backend rejected request: {resp.status_code} {resp.text[:200]}"
                )
            choices = resp.json().get("choices", [])
            texts = [c.get("text", "") for c in choices]
            if len(texts) != request.n:
                raise BackendUnavailable(
                    f"backend returned {len(texts)} completions, asked for {request.n}"
                )
            return texts
        if rate_limited:
            raise RateLimited(f"gave up after {self.MAX_ATTEMPTS} attempts: {last_error}")
        raise BackendUnavailable(
            f"gave up after {self.MAX_ATTEMPTS} attempts: {last_error}"
        )


def truncate_at_stops(text: str, stop: tuple[str, ...]) -> str:
    cut = len(text)
    for s in stop:
        idx = text.find(s)
        if idx >= 0:
            cut = min(cut, idx)
    return text[:cut]


def generate(
    request: GenerationRequest, backend: Backend, cache: CompletionCache
) -> list[str]:
    """Return the first ``n`` completions for the request, via the cache.

    Cached prefixes are reused verbatim; only the shortfall is fetched and
    appended, so growing ``n`` never changes earlier samples.
    """

    key = cache_key(request, backend.id)
    with cache.lock(key):
        cached = cache.read(key)
        if len(cached) >= request.n:
            return cached[: request.n]
        shortfall = request.n - len(cached)
        fresh = backend.complete(replace(request, n=shortfall), offset=len(cached))
        fresh = [truncate_at_stops(text, request.stop) for text in fresh]
        cache.append(key, fresh)
        return cached + fresh


def _args_text(node: FunctionNode) -> str:
    return ", ".join(node.args)


def build_implementation_prompt(
    fn: FunctionNode,
    header: str | None,
    target: TargetConfig,
    child_nodes: tuple[FunctionNode, ...] = (),
    child_impls: str = "",
    description_override: str | None = None,
) -> str:
    """Assemble the generation prompt for one function.

    ``child_nodes`` are the functions fn may call (its children plus resolved
    references, in that order); each contributes a description/signature
    block. ``child_impls`` is already-solved source prepended verbatim.
    """

    parts: list[str] = []
    if header:
        parts.append(header.rstrip("\n") + "\n\n")
    if child_impls:
        parts.append(child_impls.rstrip("\n") + "\n\n")
    child_template = target.template("child_block")
    for child in child_nodes:
        parts.append(
            child_template.format(
                description=child.description,
                name=child.name,
                args=_args_text(child),
            )
        )
    uses = ""
    if child_nodes:
        uses = target.template("uses_line").format(
            names=", ".join(c.name for c in child_nodes)
        )
    parts.append(
        target.template("target_block").format(
            description=description_override
            if description_override is not None
            else fn.description,
            uses=uses,
            name=fn.name,
            args=_args_text(fn),
        )
    )
    return "".join(parts)


def truncate_prelude(child_impls: str, cap: int) -> str:
    """Keep the most recent solved source under ``cap`` characters.

    Blocks are separated by blank lines; the oldest blocks go first when the
    total is too long.
    """

    if len(child_impls) <= cap:
        return child_impls
    blocks = child_impls.split("\n\n")
    while blocks and len("\n\n".join(blocks)) > cap:
        dropped = blocks.pop(0)
        log.warning(
            "prompt prefix over %d chars; dropping oldest solved block (%d chars)",
            cap,
            len(dropped),
        )
    return "\n\n".join(blocks)


def build_decomposition_prompt(
    fn: FunctionNode, header: str | None, target: TargetConfig
) -> str:
    prompt = target.template("decomposition_prompt").format(
        name=fn.name, args=_args_text(fn), description=fn.description
    )
    if header:
        prompt = header.rstrip("\n") + "\n\n" + prompt
    return prompt


_SIGNATURE = re.compile(r"([A-Za-z_]\w*)\s*\(([^)]*)\)")


def infer_signature(
    description: str,
    backend: Backend,
    cache: CompletionCache,
    target: TargetConfig,
) -> tuple[str, list[str]]:
    """Ask the backend for a ``name(args)`` signature matching a description."""

    if not description.strip():
        raise InferenceFailed("cannot infer a signature from an empty description")
    role = target.role("translation")
    request = GenerationRequest(
        prompt=target.template("signature_prompt").format(description=description),
        n=4,
        temperature=role.temperature,
        max_tokens=64,
        stop=("\n",),
        logit_bias_tags=role.logit_bias_tags,
        presence_penalty=role.presence_penalty,
    )
    for completion in generate(request, backend, cache):
        m = _SIGNATURE.search(completion)
        if m:
            name = m.group(1)
            args = [a.strip() for a in m.group(2).split(",") if a.strip()]
            return name, args
    raise InferenceFailed(f"no usable signature for description {description!r}")


def render_function(fn_name: str, args: list[str], description: str, body: str,
                    target: TargetConfig) -> str:
    """One candidate as it appears in programs and prompts."""

    return target.template("rendered_function").format(
        description=description, name=fn_name, args=", ".join(args), body=body
    )


def parse_decomposition(completion: str) -> list[tuple[str, list[str], list[str], str]]:
    """Pull ``name(args): description`` child definitions out of a completion.

    Unparseable lines are skipped with a warning; order is preserved.
    """

    out = []
    for line in completion.splitlines():
        line = line.strip().lstrip("#").lstrip("-").strip()
        if not line:
            continue
        try:
            parsed = try_parse_definition(line)
        except Exception:
            parsed = None
        if parsed is None:
            log.warning("skipping unparseable decomposition line: %r", line)
            continue
        out.append(parsed)
    return out
