"""Command-line entry point.

Subcommands cover the whole pipeline: entropy and lexicon diagnostics over
trace corpora, dependence profiling of hidden states, alignment scoring,
controlled generation against a backend, distillation dataset prep, the
entropy-dynamics simulators, and plot-data emission. Every run writes its
outputs plus a manifest (inputs, config, seed, toolkit version) into the
--out directory.

Exit codes: 0 on success, 1 on data or backend errors, 2 on usage errors.
Options may come from a flat key=value config file (--config); explicit
flags win, and secrets only ever come from the environment.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .alignment import build_report, classify_support, score_dataset
from .backend import (
    ALL_CAPABILITIES,
    BackendClient,
    BackendLimits,
    InferenceBackend,
)
from .dependence import (
    MODE_MULTI,
    annotate_peaks,
    detect_peaks,
    trajectory_profile_multi,
    trajectory_profile_single,
)
from .distill import run_pipeline
from .entropy import cohort_compare, entropy_profile, token_entropy
from .errors import CotlensError
from .harness import (
    InterventionSpec,
    GenerationParams,
    aggregate_scores,
    build_bias_map,
    run_batch,
)
from .lexicon import (
    DEFAULT_LEXICON,
    EpistemicLexicon,
    corpus_report,
    size_trend,
)
from .reporting import emit_plot_data, write_csv, write_manifest
from .simulate import (
    DivergenceSchedule,
    DriftParams,
    simulate_hitting_time,
    simulate_policy,
    simulate_stagnation,
)
from .traces import (
    iter_sidecar_paths,
    load_corpus,
    load_hidden_states,
    segment_steps,
)

_MISSING = argparse.SUPPRESS


def parse_flat_config(path: str) -> dict[str, str]:
    """key = value lines; # starts a comment; keys normalize - to _."""
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, value = body.split("=", 1)
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def _convert_like(raw: str, default):
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(default, int) and not isinstance(default, bool):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def _merge_opts(args: argparse.Namespace, defaults: dict) -> dict:
    provided = {
        k: v
        for k, v in vars(args).items()
        if k not in ("func", "config", "command", "_parser")
    }
    merged = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        for key, raw in parse_flat_config(config_path).items():
            if key in defaults:
                merged[key] = (
                    _convert_like(raw, defaults[key])
                    if defaults[key] is not None
                    else raw
                )
            else:
                print(f"warning: ignoring unknown config key {key!r}", file=sys.stderr)
    merged.update(provided)
    return merged


def _require(parser: argparse.ArgumentParser, opts: dict, *names: str) -> None:
    for name in names:
        if opts.get(name) in (None, ""):
            parser.error(f"--{name.replace('_', '-')} is required")


def _out_dir(opts: dict) -> str:
    out = opts["out"]
    os.makedirs(out, exist_ok=True)
    return out


def _read_jsonl(path: str) -> list[dict]:
    from .errors import CorpusLoadError

    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise CorpusLoadError(f"cannot read {path}: {exc}") from exc
    rows = []
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise CorpusLoadError(f"{path}:{lineno}: {exc}") from exc
    return rows


def _zscores(scores: np.ndarray) -> np.ndarray:
    sd = float(scores.std())
    if sd == 0.0:
        return np.zeros_like(scores)
    return (scores - scores.mean()) / sd


def _build_backend(opts: dict) -> BackendClient:
    caps = frozenset(
        c.strip() for c in opts["capabilities"].split(",") if c.strip()
    )
    unknown = caps - ALL_CAPABILITIES
    if unknown:
        raise ValueError(f"unknown capabilities: {sorted(unknown)}")
    backend = InferenceBackend(
        base_url=opts["backend_url"],
        auth_env=opts.get("auth_env") or None,
        capabilities=caps,
        limits=BackendLimits(
            max_inflight=opts["max_inflight"],
            timeout=opts["timeout"],
            retries=opts["retries"],
        ),
        mode=opts["backend_mode"],
        model=opts.get("model", ""),
    )
    client = BackendClient(backend)
    client.probe()
    return client


# ---------------------------------------------------------------------------
# subcommand handlers


ENTROPY_DEFAULTS = {
    "corpus": None,
    "out": None,
    "tail": "bucket",
    "mode": "newline",
    "units": "nats",
    "bins": 100,
    "cohorts": False,
}


def cmd_entropy(parser, args) -> int:
    opts = _merge_opts(args, ENTROPY_DEFAULTS)
    _require(parser, opts, "corpus", "out")
    out = _out_dir(opts)
    corpus = load_corpus(opts["corpus"])
    scale = 1.0 if opts["units"] == "nats" else 1.0 / math.log(2)
    token_rows = []
    step_rows = []
    for trace in corpus.traces:
        profile = entropy_profile(
            trace, segment_steps(trace, opts["mode"]), opts["tail"]
        )
        for i, h in enumerate(profile.per_token):
            token_rows.append((trace.id, i, h * scale))
        for stat in profile.per_step:
            step_rows.append(
                (trace.id, stat.index, stat.mean * scale, stat.stddev * scale)
            )
    outputs = [
        write_csv(
            os.path.join(out, "entropy_tokens.csv"),
            ["trace_id", "token_index", "entropy"],
            token_rows,
        ),
        write_csv(
            os.path.join(out, "entropy_steps.csv"),
            ["trace_id", "step_index", "mean", "stddev"],
            step_rows,
        ),
    ]
    if opts["cohorts"]:
        rows = cohort_compare(corpus, tail=opts["tail"], bins=opts["bins"])
        outputs.append(
            write_csv(
                os.path.join(out, "cohort.csv"),
                ["bin", "mean_correct", "mean_incorrect", "n_correct", "n_incorrect"],
                [
                    (
                        r.bin,
                        r.mean_correct * scale,
                        r.mean_incorrect * scale,
                        r.n_correct,
                        r.n_incorrect,
                    )
                    for r in rows
                ],
            )
        )
    outputs.append(
        write_manifest(
            out, "entropy", opts, None, [opts["corpus"]], outputs
        )
    )
    print(
        f"entropy: {len(corpus.traces)} traces, {len(token_rows)} tokens, "
        f"{len(corpus.diagnostics)} diagnostics -> {out}"
    )
    return 0


LEXICON_DEFAULTS = {
    "corpus": None,
    "label": None,
    "out": None,
    "context_window": 40,
    "max_contexts": 5,
    "markers": "",
}


def cmd_lexicon(parser, args) -> int:
    opts = _merge_opts(args, LEXICON_DEFAULTS)
    _require(parser, opts, "corpus", "out")
    out = _out_dir(opts)
    paths = opts["corpus"]
    labels = opts["label"] or [
        os.path.splitext(os.path.basename(p))[0] for p in paths
    ]
    if len(labels) != len(paths):
        parser.error("--label count must match --corpus count")
    lexicon = DEFAULT_LEXICON
    if opts["markers"]:
        lexicon = EpistemicLexicon(
            markers=tuple(m.strip() for m in opts["markers"].split(",") if m.strip())
        )
    reports = []
    for label, path in zip(labels, paths):
        corpus = load_corpus(path)
        reports.append((label, corpus_report(
            corpus,
            lexicon,
            context_window=opts["context_window"],
            max_contexts=opts["max_contexts"],
        )))
    count_rows = []
    total_rows = []
    context_rows = []
    for label, rep in reports:
        for trace_id, counts in rep.per_trace.items():
            for marker, count in counts.items():
                count_rows.append((label, trace_id, marker, count))
        for marker in lexicon.markers:
            total_rows.append(
                (label, marker, rep.totals[marker], rep.per_response_mean[marker])
            )
        for marker, ctxs in rep.contexts.items():
            for ctx in ctxs:
                context_rows.append((label, ctx.trace_id, marker, ctx.snippet))
    outputs = [
        write_csv(
            os.path.join(out, "marker_counts.csv"),
            ["label", "trace_id", "marker", "count"],
            count_rows,
        ),
        write_csv(
            os.path.join(out, "marker_totals.csv"),
            ["label", "marker", "total", "per_response_mean"],
            total_rows,
        ),
        write_csv(
            os.path.join(out, "marker_contexts.csv"),
            ["label", "trace_id", "marker", "snippet"],
            context_rows,
        ),
    ]
    if len(reports) >= 2:
        trend = size_trend(reports)
        outputs.append(
            write_csv(
                os.path.join(out, "marker_trend.csv"),
                ["marker", "from_label", "to_label", "pct_change"],
                [
                    (c.marker, c.from_label, c.to_label, c.pct_change)
                    for c in trend.changes
                ],
            )
        )
    outputs.append(
        write_manifest(out, "lexicon", {**opts, "corpus": list(paths)}, None, list(paths), outputs)
    )
    print(f"lexicon: {len(reports)} corpora -> {out}")
    return 0


MI_DEFAULTS = {
    "hidden_meta": None,
    "hidden_dir": None,
    "mode": "single",
    "bandwidth": "median",
    "positions": 50,
    "z_threshold": 2.0,
    "window": 5,
    "corpus": None,
    "trace_id": None,
    "out": None,
}


def cmd_mi(parser, args) -> int:
    opts = _merge_opts(args, MI_DEFAULTS)
    _require(parser, opts, "out")
    out = _out_dir(opts)
    bandwidth = opts["bandwidth"]
    if bandwidth != "median":
        bandwidth = float(bandwidth)
    inputs = []
    if opts["mode"] == "single":
        _require(parser, opts, "hidden_meta")
        inputs.append(opts["hidden_meta"])
        hs = load_hidden_states(opts["hidden_meta"])
        label = opts["trace_id"] or os.path.basename(opts["hidden_meta"]).split(".")[0]
        profile = trajectory_profile_single(hs, bandwidth=bandwidth, label=label)
    elif opts["mode"] == "multi":
        _require(parser, opts, "hidden_dir")
        inputs.append(opts["hidden_dir"])
        trajectories = []
        answers = []
        for trace_id, meta_path in iter_sidecar_paths(opts["hidden_dir"]):
            hs = load_hidden_states(meta_path)
            vec = hs.answer_vector()
            if vec is None:
                raise CotlensError(
                    f"sidecar for {trace_id} has no answer row; multi mode needs one"
                )
            trajectories.append(hs.trajectory())
            answers.append(vec)
        profile = trajectory_profile_multi(
            trajectories,
            np.stack(answers) if answers else [],
            positions=opts["positions"],
            bandwidth=bandwidth,
        )
    else:
        parser.error(f"unknown mode {opts['mode']!r}")
    profile.peaks = detect_peaks(profile.scores, opts["z_threshold"])
    z = _zscores(profile.scores)
    peak_set = set(profile.peaks)
    outputs = [
        write_csv(
            os.path.join(out, "dependence_profile.csv"),
            ["trace_id", "position", "score", "z", "is_peak", "mode"],
            [
                (profile.trace_id, i, float(s), float(z[i]), int(i in peak_set), profile.mode)
                for i, s in enumerate(profile.scores)
            ],
        )
    ]
    if opts["corpus"] and opts["mode"] == "single":
        corpus = load_corpus(opts["corpus"])
        inputs.append(opts["corpus"])
        wanted = opts["trace_id"] or profile.trace_id
        match = [t for t in corpus.traces if t.id == wanted]
        if not match:
            raise CotlensError(f"trace {wanted!r} not found in corpus")
        annotations = annotate_peaks(profile, match[0], window=opts["window"])
        outputs.append(
            write_csv(
                os.path.join(out, "peak_annotations.csv"),
                ["position", "is_epistemic_context", "snippet"],
                [
                    (a.position, int(a.is_epistemic_context), a.snippet)
                    for a in annotations
                ],
            )
        )
    outputs.append(write_manifest(out, "mi", opts, None, inputs, outputs))
    print(
        f"mi: mode={profile.mode} positions={len(profile.scores)} "
        f"peaks={profile.peaks} -> {out}"
    )
    return 0


ALIGN_DEFAULTS = {
    "dataset": None,
    "backend_url": None,
    "backend_mode": "completion",
    "auth_env": "",
    "capabilities": "sampling,per-token-logprobs,echo-logprobs",
    "classes": None,
    "tail": "bucket",
    "gap_threshold": 5.0,
    "top_logprobs": 5,
    "timeout": 30.0,
    "retries": 2,
    "max_inflight": 4,
    "model": "",
    "out": None,
}


def cmd_align(parser, args) -> int:
    opts = _merge_opts(args, ALIGN_DEFAULTS)
    _require(parser, opts, "dataset", "backend_url", "out")
    out = _out_dir(opts)
    samples = _read_jsonl(opts["dataset"])
    classes = {}
    if opts["classes"]:
        with open(opts["classes"], "r", encoding="utf-8") as fh:
            classes = {k: set(v) for k, v in json.load(fh).items()}
    client = _build_backend(opts)
    scored, diagnostics = score_dataset(
        samples, client, top_logprobs=opts["top_logprobs"]
    )
    report = build_report(scored, classes, tail=opts["tail"])
    calls = classify_support(report, gap_threshold=opts["gap_threshold"])
    outputs = [
        write_csv(
            os.path.join(out, "sample_means.csv"),
            ["sample_id", "mean_logprob"],
            sorted(report.per_sample_mean.items()),
        ),
        write_csv(
            os.path.join(out, "cdf.csv"),
            ["mean_logprob", "cum_fraction"],
            report.cdf,
        ),
        write_csv(
            os.path.join(out, "class_support.csv"),
            ["class", "count", "mean_logprob", "mean_entropy", "gap", "status", "zero_count"],
            [
                (
                    name,
                    stat.count,
                    stat.mean_logprob,
                    stat.mean_entropy,
                    calls[name].gap,
                    calls[name].status,
                    int(calls[name].zero_count),
                )
                for name, stat in sorted(report.class_stats.items())
            ],
        ),
        write_csv(
            os.path.join(out, "diagnostics.csv"),
            ["sample_id", "message"],
            [(d.sample_id, d.message) for d in diagnostics],
        ),
    ]
    outputs.append(
        write_manifest(out, "align", opts, None, [opts["dataset"]], outputs)
    )
    print(
        f"align: {len(scored)} scored, {len(diagnostics)} diagnostics, "
        f"all-token mean {report.all_token_mean:.4f} -> {out}"
    )
    return 0


CONTROL_DEFAULTS = {
    "backend_url": None,
    "backend_mode": "chat",
    "auth_env": "",
    "capabilities": "sampling",
    "problems": None,
    "temp": 0.0,
    "top_p": 1.0,
    "n": 1,
    "k": 1,
    "max_tokens": 1024,
    "seed": 0,
    "intervention": "none",
    "token_map": None,
    "markers": ",".join(DEFAULT_LEXICON.markers),
    "few_shot_file": None,
    "forced_prefix": "",
    "resume": False,
    "timeout": 30.0,
    "retries": 2,
    "max_inflight": 4,
    "model": "",
    "out": None,
}


def cmd_control(parser, args) -> int:
    opts = _merge_opts(args, CONTROL_DEFAULTS)
    _require(parser, opts, "backend_url", "problems", "out")
    out = _out_dir(opts)
    problems = _read_jsonl(opts["problems"])
    kind = opts["intervention"]
    spec_kwargs: dict = {"kind": kind, "forced_prefix": opts["forced_prefix"]}
    if kind == "suppress":
        if not opts["token_map"]:
            parser.error("--token-map is required for suppression")
        with open(opts["token_map"], "r", encoding="utf-8") as fh:
            token_map = json.load(fh)
        markers = [m.strip() for m in opts["markers"].split(",") if m.strip()]
        bias = build_bias_map(markers, token_map)
        if not bias:
            raise CotlensError("token map covers none of the markers")
        spec_kwargs["suppress_bias"] = bias
    elif kind == "few-shot":
        if not opts["few_shot_file"]:
            parser.error("--few-shot-file is required for few-shot")
        with open(opts["few_shot_file"], "r", encoding="utf-8") as fh:
            spec_kwargs["few_shot_prompt"] = fh.read()
    intervention = InterventionSpec(**spec_kwargs)
    params = GenerationParams(
        temperature=opts["temp"],
        top_p=opts["top_p"],
        max_tokens=opts["max_tokens"],
        n=opts["n"],
        seed=opts["seed"],
    )
    client = _build_backend(opts)
    journal_path = os.path.join(out, "journal.jsonl")
    results = run_batch(
        client,
        problems,
        params,
        intervention,
        k=opts["k"],
        journal_path=journal_path,
        resume=opts["resume"],
    )
    score_rows = [
        (
            r.problem_id,
            r.scores.pass_at_1 if r.scores else None,
            r.scores.acc_at_k if r.scores else None,
            r.scores.len_at_k if r.scores else None,
        )
        for r in results
    ]
    summary = aggregate_scores(results)
    summary_path = os.path.join(out, "summary.json")
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    outputs = [
        journal_path,
        write_csv(
            os.path.join(out, "scores.csv"),
            ["problem_id", "pass_at_1", "acc_at_k", "len_at_k"],
            score_rows,
        ),
        summary_path,
    ]
    outputs.append(
        write_manifest(out, "control", opts, opts["seed"], [opts["problems"]], outputs)
    )
    print(
        f"control: {len(results)} problems, pass@1={summary['pass_at_1']:.3f} -> {out}"
    )
    return 0


DISTILL_DEFAULTS = {
    "input": None,
    "mode": "teacher",
    "backend_url": None,
    "backend_mode": "chat",
    "auth_env": "",
    "capabilities": "sampling",
    "max_markers": 0,
    "timeout": 30.0,
    "retries": 2,
    "max_inflight": 4,
    "model": "",
    "out": None,
}


def cmd_distill(parser, args) -> int:
    opts = _merge_opts(args, DISTILL_DEFAULTS)
    _require(parser, opts, "input", "backend_url", "out")
    out = _out_dir(opts)
    items = _read_jsonl(opts["input"])
    client = _build_backend(opts)
    records = run_pipeline(
        client,
        items,
        mode=opts["mode"],
        max_markers=opts["max_markers"],
        out_path=os.path.join(out, "distill.jsonl"),
        training_path=os.path.join(out, "training.jsonl"),
    )
    kept = sum(1 for r in records if r.kept)
    unparseable = sum(1 for r in records if not r.verdict_parsed)
    summary = {
        "items": len(records),
        "kept": kept,
        "unparseable_verdicts": unparseable,
    }
    summary_path = os.path.join(out, "summary.json")
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    outputs = [
        os.path.join(out, "distill.jsonl"),
        os.path.join(out, "training.jsonl"),
        summary_path,
    ]
    outputs.append(
        write_manifest(out, "distill", opts, None, [opts["input"]], outputs)
    )
    print(f"distill: {kept}/{len(records)} kept -> {out}")
    return 0


SIMULATE_DEFAULTS = {
    "kind": "hitting",
    "h0": 2.5,
    "eps": 0.5,
    "p": 0.4,
    "delta": 0.2,
    "trials": 10000,
    "seed": 0,
    "max_steps": 1000000,
    "reduction": "exact",
    "residual": 2.0,
    "schedule": "",
    "at_maximum": False,
    "policy": "procedural-only",
    "correction_threshold": 1.0,
    "out": None,
}


def _parse_schedule(raw: str) -> tuple[float, ...]:
    eps = tuple(float(x) for x in raw.split(",") if x.strip())
    if not eps:
        raise ValueError("empty divergence schedule")
    return eps


def cmd_simulate(parser, args) -> int:
    opts = _merge_opts(args, SIMULATE_DEFAULTS)
    kind = opts["kind"]
    summary: dict
    if kind == "hitting":
        params = DriftParams(
            h0=opts["h0"], epsilon=opts["eps"], p=opts["p"], delta=opts["delta"]
        )
        result = simulate_hitting_time(
            params,
            trials=opts["trials"],
            seed=opts["seed"],
            max_steps=opts["max_steps"],
            reduction=opts["reduction"],
        )
        summary = {
            "kind": kind,
            "mean_tau": result.mean_tau,
            "ci95": list(result.ci95),
            "bound": result.bound,
            "censored": result.censored,
            "trials": result.trials,
            "seed": result.seed,
            "reduction": result.reduction,
        }
        print(
            f"hitting-time: mean_tau={result.mean_tau:.4f} "
            f"ci95=[{result.ci95[0]:.4f}, {result.ci95[1]:.4f}] "
            f"bound={result.bound:.4f} censored={result.censored}"
        )
    elif kind == "stagnation":
        schedule = DivergenceSchedule(
            residual_entropy=opts["residual"], eps=_parse_schedule(opts["schedule"])
        )
        result = simulate_stagnation(
            schedule,
            trials=opts["trials"],
            seed=opts["seed"],
            at_maximum=opts["at_maximum"],
        )
        summary = {
            "kind": kind,
            "floor": result.floor,
            "min_final": result.min_final,
            "mean_final": float(result.final.mean()),
            "trials": result.trials,
            "seed": result.seed,
        }
        print(
            f"stagnation: floor={result.floor} min_final={result.min_final} "
            f"(never below the floor)"
        )
    elif kind == "policy":
        schedule = DivergenceSchedule(
            residual_entropy=opts["residual"], eps=_parse_schedule(opts["schedule"])
        )
        params = DriftParams(
            h0=opts["residual"], epsilon=opts["eps"], p=opts["p"], delta=opts["delta"]
        )
        result = simulate_policy(
            opts["policy"],
            schedule,
            params,
            correction_threshold=opts["correction_threshold"],
            trials=opts["trials"],
            seed=opts["seed"],
        )
        summary = {
            "kind": kind,
            "policy": result.policy,
            "success_fraction": result.success_fraction,
            "mean_steps_to_success": result.mean_steps_to_success,
            "mean_final": float(result.final.mean()),
            "trials": result.trials,
            "seed": result.seed,
        }
        print(
            f"policy: {result.policy} success={result.success_fraction:.4f} "
            f"mean_steps={result.mean_steps_to_success:.2f}"
        )
    else:
        parser.error(f"unknown simulation kind {kind!r}")
    if opts["out"]:
        out = _out_dir(opts)
        summary_path = os.path.join(out, "summary.json")
        with open(summary_path, "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        write_manifest(out, "simulate", opts, opts["seed"], [], [summary_path])
    return 0


REPORT_DEFAULTS = {
    "series": None,
    "out": None,
    "stem": "series",
    "svg": False,
}


def cmd_report(parser, args) -> int:
    opts = _merge_opts(args, REPORT_DEFAULTS)
    _require(parser, opts, "series", "out")
    out = _out_dir(opts)
    series: dict[str, list[tuple[float, float]]] = {}
    for path in opts["series"]:
        name = os.path.splitext(os.path.basename(path))[0]
        points = []
        with open(path, "r", encoding="utf-8") as fh:
            for i, line in enumerate(fh):
                body = line.strip()
                if not body:
                    continue
                parts = body.split(",")
                if i == 0:
                    try:
                        float(parts[0])
                    except ValueError:
                        continue  # header row
                points.append((float(parts[0]), float(parts[1])))
        series[name] = points
    outputs = emit_plot_data(series, out, opts["stem"], chart=opts["svg"])
    outputs.append(
        write_manifest(out, "report", {**opts, "series": list(opts["series"])}, None, list(opts["series"]), outputs)
    )
    print(f"report: {len(series)} series -> {out}")
    return 0


# ---------------------------------------------------------------------------
# parser assembly


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cotlens",
        description="Information-theoretic diagnostics for reasoning traces",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, handler, configure) -> None:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="flat key=value config file")
        configure(p)
        p.set_defaults(func=handler, _parser=p)

    def entropy_args(p):
        p.add_argument("--corpus", default=_MISSING)
        p.add_argument("--out", default=_MISSING)
        p.add_argument("--tail", choices=["bucket", "drop"], default=_MISSING)
        p.add_argument("--mode", choices=["newline", "sentence"], default=_MISSING)
        p.add_argument("--units", choices=["nats", "bits"], default=_MISSING)
        p.add_argument("--bins", type=int, default=_MISSING)
        p.add_argument("--cohorts", action="store_true", default=_MISSING)

    def lexicon_args(p):
        p.add_argument("--corpus", action="append", default=_MISSING)
        p.add_argument("--label", action="append", default=_MISSING)
        p.add_argument("--out", default=_MISSING)
        p.add_argument("--context-window", type=int, default=_MISSING)
        p.add_argument("--max-contexts", type=int, default=_MISSING)
        p.add_argument("--markers", default=_MISSING)

    def mi_args(p):
        p.add_argument("--hidden-meta", default=_MISSING)
        p.add_argument("--hidden-dir", default=_MISSING)
        p.add_argument("--mode", choices=["single", "multi"], default=_MISSING)
        p.add_argument("--bandwidth", default=_MISSING)
        p.add_argument("--positions", type=int, default=_MISSING)
        p.add_argument("--z-threshold", type=float, default=_MISSING)
        p.add_argument("--window", type=int, default=_MISSING)
        p.add_argument("--corpus", default=_MISSING)
        p.add_argument("--trace-id", default=_MISSING)
        p.add_argument("--out", default=_MISSING)

    def backend_args(p, default_caps: str):
        p.add_argument("--backend-url", default=_MISSING)
        p.add_argument("--backend-mode", choices=["chat", "completion"], default=_MISSING)
        p.add_argument("--auth-env", default=_MISSING)
        p.add_argument("--capabilities", default=_MISSING,
                       help=f"comma list (default: {default_caps})")
        p.add_argument("--timeout", type=float, default=_MISSING)
        p.add_argument("--retries", type=int, default=_MISSING)
        p.add_argument("--max-inflight", type=int, default=_MISSING)
        p.add_argument("--model", default=_MISSING)

    def align_args(p):
        backend_args(p, ALIGN_DEFAULTS["capabilities"])
        p.add_argument("--dataset", default=_MISSING)
        p.add_argument("--classes", default=_MISSING)
        p.add_argument("--tail", choices=["bucket", "drop"], default=_MISSING)
        p.add_argument("--gap-threshold", type=float, default=_MISSING)
        p.add_argument("--top-logprobs", type=int, default=_MISSING)
        p.add_argument("--out", default=_MISSING)

    def control_args(p):
        backend_args(p, CONTROL_DEFAULTS["capabilities"])
        p.add_argument("--problems", default=_MISSING)
        p.add_argument("--temp", type=float, default=_MISSING)
        p.add_argument("--top-p", type=float, default=_MISSING)
        p.add_argument("--n", type=int, default=_MISSING)
        p.add_argument("--k", type=int, default=_MISSING)
        p.add_argument("--max-tokens", type=int, default=_MISSING)
        p.add_argument("--seed", type=int, default=_MISSING)
        p.add_argument(
            "--intervention",
            choices=["none", "suppress", "inject-wait", "few-shot"],
            default=_MISSING,
        )
        p.add_argument("--token-map", default=_MISSING)
        p.add_argument("--markers", default=_MISSING)
        p.add_argument("--few-shot-file", default=_MISSING)
        p.add_argument("--forced-prefix", default=_MISSING)
        p.add_argument("--resume", action="store_true", default=_MISSING)
        p.add_argument("--out", default=_MISSING)

    def distill_args(p):
        backend_args(p, DISTILL_DEFAULTS["capabilities"])
        p.add_argument("--input", default=_MISSING)
        p.add_argument("--mode", choices=["teacher", "self"], default=_MISSING)
        p.add_argument("--max-markers", type=int, default=_MISSING)
        p.add_argument("--out", default=_MISSING)

    def simulate_args(p):
        p.add_argument("--kind", choices=["hitting", "stagnation", "policy"], default=_MISSING)
        p.add_argument("--h0", type=float, default=_MISSING)
        p.add_argument("--eps", type=float, default=_MISSING)
        p.add_argument("--p", type=float, default=_MISSING)
        p.add_argument("--delta", type=float, default=_MISSING)
        p.add_argument("--trials", type=int, default=_MISSING)
        p.add_argument("--seed", type=int, default=_MISSING)
        p.add_argument("--max-steps", type=int, default=_MISSING)
        p.add_argument("--reduction", choices=["exact", "oversized"], default=_MISSING)
        p.add_argument("--residual", type=float, default=_MISSING)
        p.add_argument("--schedule", default=_MISSING)
        p.add_argument("--at-maximum", action="store_true", default=_MISSING)
        p.add_argument(
            "--policy",
            choices=["procedural-only", "procedural+epistemic"],
            default=_MISSING,
        )
        p.add_argument("--correction-threshold", type=float, default=_MISSING)
        p.add_argument("--out", default=_MISSING)

    def report_args(p):
        p.add_argument("--series", nargs="+", default=_MISSING)
        p.add_argument("--out", default=_MISSING)
        p.add_argument("--stem", default=_MISSING)
        p.add_argument("--svg", action="store_true", default=_MISSING)

    add("entropy", cmd_entropy, entropy_args)
    add("lexicon", cmd_lexicon, lexicon_args)
    add("mi", cmd_mi, mi_args)
    add("align", cmd_align, align_args)
    add("control", cmd_control, control_args)
    add("distill", cmd_distill, distill_args)
    add("simulate", cmd_simulate, simulate_args)
    add("report", cmd_report, report_args)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args._parser, args)
    except (CotlensError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
