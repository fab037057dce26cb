"""Reasoning-trace data model and file IO.

A corpus is a JSONL file, one trace per line. Each trace records the problem
statement, the generated tokens with their log-probabilities (natural log)
and top-k alternatives, and optional answer/correctness fields. Hidden-state
matrices live in sidecar files next to the corpus: ``<id>.hsd.json`` holds
the metadata and ``<id>.hsd.bin`` the raw row-major float32 payload.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .answers import answers_match
from .errors import CorpusLoadError, SidecarError

LOGPROB_MATCH_TOL = 1e-6


@dataclass
class TokenRecord:
    """One generated token with its scoring context."""

    text: str
    logprob: float
    topk: list[tuple[str, float]] = field(default_factory=list)
    hidden_index: int | None = None


@dataclass
class Trace:
    """A single reasoning trace over one problem."""

    id: str
    problem: str
    tokens: list[TokenRecord]
    answer_gt: str | None = None
    answer_pred: str | None = None
    correct: bool | None = None
    model: str = ""
    meta: dict = field(default_factory=dict)


@dataclass(eq=False)
class HiddenStates:
    """Row-major hidden-state matrix tied to a trace.

    ``answer_row`` indexes the gold-answer embedding inside ``data`` when
    the sidecar declares one (stored as the final row by convention).
    """

    data: np.ndarray
    answer_row: int | None = None

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def trajectory(self) -> np.ndarray:
        """All rows except the answer row, in order."""
        if self.answer_row is None:
            return self.data
        keep = [i for i in range(self.rows) if i != self.answer_row]
        return self.data[keep]

    def answer_vector(self) -> np.ndarray | None:
        if self.answer_row is None:
            return None
        return self.data[self.answer_row]


@dataclass
class LoadDiagnostic:
    line: int
    message: str


@dataclass
class Corpus:
    traces: list[Trace]
    source: str = ""
    diagnostics: list[LoadDiagnostic] = field(default_factory=list)

    def __iter__(self):
        return iter(self.traces)

    def __len__(self) -> int:
        return len(self.traces)


def trace_text(trace: Trace) -> str:
    """Concatenated surface text of a trace."""
    return "".join(t.text for t in trace.tokens)


def _parse_token(obj: dict, pos: int) -> TokenRecord:
    if not isinstance(obj, dict):
        raise ValueError(f"token {pos} is not an object")
    try:
        text = obj["text"]
        logprob = obj["logprob"]
    except KeyError as exc:
        raise ValueError(f"token {pos} missing field {exc}") from None
    if not isinstance(text, str):
        raise ValueError(f"token {pos} text is not a string")
    logprob = float(logprob)
    if logprob > 0:
        raise ValueError(f"token {pos} has positive logprob {logprob}")
    raw_topk = obj.get("topk", [])
    topk: list[tuple[str, float]] = []
    prev = None
    for j, pair in enumerate(raw_topk):
        tok, lp = pair[0], float(pair[1])
        if lp > 0:
            raise ValueError(f"token {pos} topk[{j}] has positive logprob")
        if prev is not None and lp > prev:
            raise ValueError(f"token {pos} topk not sorted non-increasing")
        prev = lp
        topk.append((str(tok), lp))
    for tok, lp in topk:
        if tok == text and abs(lp - logprob) > LOGPROB_MATCH_TOL:
            raise ValueError(
                f"token {pos} logprob {logprob} disagrees with its topk entry {lp}"
            )
    hidden_index = obj.get("hidden_index")
    if hidden_index is not None:
        hidden_index = int(hidden_index)
    return TokenRecord(text=text, logprob=logprob, topk=topk, hidden_index=hidden_index)


def _parse_trace(obj: dict) -> Trace:
    if not isinstance(obj, dict):
        raise ValueError("line is not a JSON object")
    for key in ("id", "problem", "tokens"):
        if key not in obj:
            raise ValueError(f"missing field {key!r}")
    if not isinstance(obj["id"], str) or not obj["id"]:
        raise ValueError("id must be a non-empty string")
    tokens = [_parse_token(t, i) for i, t in enumerate(obj["tokens"])]
    trace = Trace(
        id=obj["id"],
        problem=str(obj["problem"]),
        tokens=tokens,
        answer_gt=obj.get("answer_gt"),
        answer_pred=obj.get("answer_pred"),
        correct=obj.get("correct"),
        model=obj.get("model", ""),
        meta=obj.get("meta", {}),
    )
    if (
        trace.correct is not None
        and trace.answer_gt is not None
        and trace.answer_pred is not None
    ):
        if bool(trace.correct) != answers_match(trace.answer_gt, trace.answer_pred):
            raise ValueError(
                "correct flag disagrees with the canonical answer comparison"
            )
    return trace


def load_corpus(path: str, strict: bool = False) -> Corpus:
    """Read a JSONL corpus.

    Lenient mode (default) keeps every valid trace and records a line-numbered
    diagnostic for each bad one. Strict mode raises on the first problem.
    An unreadable file is fatal in both modes.
    """
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise CorpusLoadError(f"cannot read corpus {path}: {exc}") from exc
    traces: list[Trace] = []
    diagnostics: list[LoadDiagnostic] = []
    seen: set[str] = set()
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                trace = _parse_trace(obj)
                if trace.id in seen:
                    raise ValueError(f"duplicate trace id {trace.id!r}")
            except ValueError as exc:
                if strict:
                    raise CorpusLoadError(f"{path}:{lineno}: {exc}") from exc
                diagnostics.append(LoadDiagnostic(line=lineno, message=str(exc)))
                continue
            seen.add(trace.id)
            traces.append(trace)
    return Corpus(traces=traces, source=path, diagnostics=diagnostics)


def _token_to_dict(tok: TokenRecord) -> dict:
    d: dict = {"text": tok.text, "logprob": tok.logprob}
    if tok.topk:
        d["topk"] = [[t, lp] for t, lp in tok.topk]
    if tok.hidden_index is not None:
        d["hidden_index"] = tok.hidden_index
    return d


def trace_to_dict(trace: Trace) -> dict:
    d: dict = {
        "id": trace.id,
        "problem": trace.problem,
        "tokens": [_token_to_dict(t) for t in trace.tokens],
    }
    if trace.answer_gt is not None:
        d["answer_gt"] = trace.answer_gt
    if trace.answer_pred is not None:
        d["answer_pred"] = trace.answer_pred
    if trace.correct is not None:
        d["correct"] = trace.correct
    if trace.model:
        d["model"] = trace.model
    if trace.meta:
        d["meta"] = trace.meta
    return d


def save_corpus(corpus: Corpus, path: str) -> None:
    """Write a corpus back to JSONL. Round-trips through load_corpus."""
    with open(path, "w", encoding="utf-8") as fh:
        for trace in corpus.traces:
            fh.write(json.dumps(trace_to_dict(trace), ensure_ascii=False))
            fh.write("\n")


def load_hidden_states(meta_path: str, data_path: str | None = None) -> HiddenStates:
    """Read a hidden-state sidecar pair.

    The metadata file declares rows, dim, dtype, byte_order, and whether the
    final row is the gold-answer embedding. Byte-count mismatches between the
    declaration and the binary payload are fatal, as are NaN or Inf values.
    """
    try:
        with open(meta_path, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise SidecarError(f"cannot read sidecar metadata {meta_path}: {exc}") from exc
    try:
        rows = int(meta["rows"])
        dim = int(meta["dim"])
    except (KeyError, TypeError, ValueError) as exc:
        raise SidecarError(f"{meta_path}: bad rows/dim: {exc}") from exc
    if rows < 1 or dim < 1:
        raise SidecarError(f"{meta_path}: rows and dim must be positive")
    dtype = meta.get("dtype", "float32")
    if dtype != "float32":
        raise SidecarError(f"{meta_path}: unsupported dtype {dtype!r}")
    byte_order = meta.get("byte_order", "little")
    if byte_order not in ("little", "big"):
        raise SidecarError(f"{meta_path}: unsupported byte_order {byte_order!r}")
    if data_path is None:
        base, ext = os.path.splitext(meta_path)
        data_path = base + ".bin" if ext == ".json" else meta_path + ".bin"
    try:
        with open(data_path, "rb") as fh:
            payload = fh.read()
    except OSError as exc:
        raise SidecarError(f"cannot read sidecar data {data_path}: {exc}") from exc
    expected = rows * dim * 4
    if len(payload) != expected:
        raise SidecarError(
            f"{data_path}: expected {expected} bytes for {rows}x{dim} float32, "
            f"found {len(payload)}"
        )
    np_dtype = "<f4" if byte_order == "little" else ">f4"
    data = np.frombuffer(payload, dtype=np_dtype).reshape(rows, dim)
    data = data.astype(np.float32)  # native order, writable copy
    if not np.isfinite(data).all():
        raise SidecarError(f"{data_path}: payload contains NaN or Inf")
    answer_row = rows - 1 if meta.get("has_answer_row") else None
    return HiddenStates(data=data, answer_row=answer_row)


_SENTENCE_END = ".?!"
_CLOSERS = "\"')]}”’"


def _ends_sentence(text: str) -> bool:
    stripped = text.rstrip()
    core = stripped.rstrip(_CLOSERS)
    return bool(core) and core[-1] in _SENTENCE_END


def segment_steps(trace: Trace, mode: str = "newline") -> list[tuple[int, int]]:
    """Partition token indices into reasoning steps.

    newline mode ends a span after any token containing a newline. sentence
    mode ends a span after a token whose text finishes a sentence (. ? !)
    with whitespace following, either inside that token or at the start of
    the next one. Spans are half-open [start, end) ranges that cover every
    token exactly once; a trace with no delimiter is one span.
    """
    if mode not in ("newline", "sentence"):
        raise ValueError(f"unknown segmentation mode {mode!r}")
    n = len(trace.tokens)
    if n == 0:
        raise ValueError("cannot segment an empty trace")
    boundaries: list[int] = []
    for i in range(n - 1):
        text = trace.tokens[i].text
        if mode == "newline":
            if "\n" in text:
                boundaries.append(i + 1)
        else:
            if not _ends_sentence(text):
                continue
            trailing_ws = len(text.rstrip()) < len(text)
            next_text = trace.tokens[i + 1].text
            if trailing_ws or (next_text and next_text[0].isspace()):
                boundaries.append(i + 1)
    spans: list[tuple[int, int]] = []
    start = 0
    for b in boundaries:
        spans.append((start, b))
        start = b
    spans.append((start, n))
    return spans


def iter_sidecar_paths(directory: str) -> Iterable[tuple[str, str]]:
    """Yield (trace_id, metadata path) pairs for every sidecar in a directory."""
    for name in sorted(os.listdir(directory)):
        if name.endswith(".hsd.json"):
            yield name[: -len(".hsd.json")], os.path.join(directory, name)
