import json
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from stub_backend import StubServer

from cotlens.backend import (
    ALL_CAPABILITIES,
    BackendClient,
    BackendLimits,
    InferenceBackend,
)
from cotlens.traces import TokenRecord, Trace


@pytest.fixture
def stub():
    server = StubServer()
    yield server
    server.close()


def make_client(
    server,
    mode="chat",
    capabilities=ALL_CAPABILITIES,
    auth_env=None,
    retries=2,
    backoff=0.01,
    timeout=10.0,
):
    backend = InferenceBackend(
        base_url=server.url,
        auth_env=auth_env,
        capabilities=frozenset(capabilities),
        limits=BackendLimits(timeout=timeout, retries=retries, backoff=backoff),
        mode=mode,
    )
    return BackendClient(backend)


def token(text, logprob=-0.5, topk=None):
    return TokenRecord(text=text, logprob=logprob, topk=topk or [])


def tokens_from_text(text, logprob=-0.5):
    """Whitespace-preserving word split into TokenRecords."""
    pieces = []
    word = ""
    for ch in text:
        word += ch
        if ch.isspace():
            pieces.append(word)
            word = ""
    if word:
        pieces.append(word)
    return [TokenRecord(text=p, logprob=logprob) for p in pieces]


def make_trace(trace_id, text, correct=None, **kwargs):
    return Trace(
        id=trace_id,
        problem=kwargs.pop("problem", "p"),
        tokens=tokens_from_text(text),
        correct=correct,
        **kwargs,
    )


def trace_line(trace_id="t1", text="a b", logprob=-0.5, topk=None, **extra):
    toks = []
    for rec in tokens_from_text(text, logprob):
        d = {"text": rec.text, "logprob": rec.logprob}
        if topk:
            d["topk"] = topk
        toks.append(d)
    return {"id": trace_id, "problem": "p", "tokens": toks, **extra}


def write_corpus(tmp_path, lines, name="corpus.jsonl"):
    path = tmp_path / name
    with open(path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line if isinstance(line, str) else json.dumps(line))
            fh.write("\n")
    return str(path)


def write_sidecar(directory, trace_id, data, has_answer_row=True, byte_order="little"):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(data, dtype=np.float32)
    meta = {
        "rows": arr.shape[0],
        "dim": arr.shape[1],
        "dtype": "float32",
        "byte_order": byte_order,
        "has_answer_row": has_answer_row,
    }
    meta_path = directory / f"{trace_id}.hsd.json"
    meta_path.write_text(json.dumps(meta))
    payload = arr.astype("<f4" if byte_order == "little" else ">f4").tobytes()
    (directory / f"{trace_id}.hsd.bin").write_bytes(payload)
    return str(meta_path)
