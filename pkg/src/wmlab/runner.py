"""Named experiment pipelines: config in, report bundle out.

Each pipeline writes a deterministic bundle into the output directory:
report.json (machine-readable), report.md (banded table), data.csv (row
data), and a matplotlib figure when the result has a shape worth plotting.
Reports carry no timestamps or environment state, so re-running a config
with the same seeds reproduces every byte.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Sequence

import numpy as np

from . import aar, kgw
from .backdoor import BackdoorSpec, backdoor_pvalue, measure_trigger_rate
from .core import Corpus, TokenSequence, Vocabulary, derive_seed, tokenize
from .distill import CurvePoint, domain_retention, retention_curve
from .evaluation import evidence_band, ip_infringement_test, perplexity, seq_rep_n
from .lm import GenParams, NGramModel, generate, load_model

PIPELINES = ("backdoor-ip", "distill-ip", "distill-text", "erosion", "retention", "quality")


def watermark_from_config(cfg: dict):
    """(params, detector, step_rule) triple from a watermark config block."""
    method = cfg.get("method")
    key = int(cfg["key"])
    if method == "kgw":
        params = kgw.KgwParams(
            key=key,
            k=int(cfg.get("k", 1)),
            gamma=float(cfg.get("gamma", 0.25)),
            delta=float(cfg.get("delta", 2.0)),
        )
        return params, (lambda text, prefix: kgw.detect(text, prefix, params)), kgw.step_fn(params)
    if method == "aar":
        params = aar.AarParams(key=key, k=int(cfg.get("k", 2)))
        return params, (lambda text, prefix: aar.detect(text, prefix, params)), aar.step_fn(params)
    raise ValueError(f"unknown watermark method {method!r}")


def _gen_params(cfg: dict, seed: int) -> GenParams:
    g = cfg.get("gen", {})
    return GenParams(
        max_len=int(g.get("max_len", 200)),
        temperature=float(g.get("temperature", 1.0)),
        stop_at_eos=bool(g.get("stop_at_eos", True)),
        seed=seed,
    )


def _load_prompts(cfg: dict, key: str, n: int) -> list[TokenSequence]:
    path = cfg.get(key)
    if path is None:
        return [[] for _ in range(n)]
    seqs = Corpus.load(path).sequences
    if not seqs:
        raise ValueError(f"prompt corpus {path!r} is empty")
    return [list(seqs[i % len(seqs)]) for i in range(n)]


def _spec_from_config(cfg: dict) -> BackdoorSpec:
    vocab = Vocabulary.load(cfg["vocab"]) if "vocab" in cfg else None
    def ids(field: str) -> tuple[int, ...]:
        value = cfg[field]
        if isinstance(value, str):
            if vocab is None:
                raise ValueError(f"{field} given as text but no vocab path configured")
            return tuple(tokenize(value, vocab))
        return tuple(int(t) for t in value)
    return BackdoorSpec(
        trigger=ids("trigger"),
        target=ids("target"),
        mode=cfg.get("mode", "pt"),
        n=int(cfg.get("n", 0)),
        p0=float(cfg.get("p0", 0.01)),
    )


def _texts_from(cfg: dict, side: str, n: int, seed: int) -> list[TokenSequence]:
    """Either a pre-generated corpus ({side}_texts) or fresh samples ({side}_model)."""
    corpus_key = f"{side}_texts"
    model_key = f"{side}_model"
    if corpus_key in cfg:
        seqs = Corpus.load(cfg[corpus_key]).sequences
        if len(seqs) < n:
            raise ValueError(f"{corpus_key} holds {len(seqs)} texts, need {n}")
        return [list(s) for s in seqs[:n]]
    model = load_model(cfg[model_key])
    prompts = _load_prompts(cfg, f"{side}_prompts", n)
    out = []
    for i in range(n):
        out.append(generate(model, prompts[i], _gen_params(cfg, derive_seed(seed, i))))
    return out


def run_experiment(config: dict, out_dir: str | Path) -> dict:
    """Dispatch on config["pipeline"] and write the report bundle."""
    pipeline = config.get("pipeline")
    if pipeline not in PIPELINES:
        raise ValueError(f"unknown pipeline {pipeline!r}; expected one of {PIPELINES}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = _PIPELINE_FNS[pipeline](config, out)
    report_obj = {"pipeline": pipeline, "config": config, "result": report}
    (out / "report.json").write_text(
        json.dumps(report_obj, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return report_obj


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _write_md(path: Path, title: str, header: list[str], rows: list[list]) -> None:
    lines = [f"# {title}", ""]
    lines.append("| " + " | ".join(header) + " |")
    lines.append("|" + "|".join(" --- " for _ in header) + "|")
    for row in rows:
        lines.append("| " + " | ".join(str(c) for c in row) + " |")
    lines += ["", _BAND_LEGEND, ""]
    path.write_text("\n".join(lines), encoding="utf-8")


_BAND_LEGEND = (
    "Bands: **significant** p < 1e-3, *possible* 1e-3 <= p < 5e-2, none otherwise."
)


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def _save_figure(fig, path: Path) -> None:
    # Strip the writer software tag so re-runs are byte-identical.
    fig.savefig(path, dpi=120, metadata={"Software": None})


def _new_figure():
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    return plt


def _run_backdoor_ip(cfg: dict, out: Path) -> dict:
    model = load_model(cfg["model"])
    spec = _spec_from_config(cfg)
    n = int(cfg.get("N", 200))
    seed = int(cfg.get("seed", 0))
    prompts = _load_prompts(cfg, "prompts", n)
    trial = measure_trigger_rate(model, prompts, spec, _gen_params(cfg, seed))
    log10_p = backdoor_pvalue(trial, spec.p0)
    band = evidence_band(log10_p)
    result = {
        "N": trial.n,
        "hits": trial.hits,
        "rate": trial.rate,
        "p0": spec.p0,
        "log10_p": log10_p,
        "band": band,
        "verdict": band != "none",
    }
    rows = [[trial.n, trial.hits, _fmt(trial.rate), _fmt(spec.p0), _fmt(log10_p), band]]
    header = ["N", "hits", "rate", "p0", "log10_p", "band"]
    _write_csv(out / "data.csv", header, rows)
    _write_md(out / "report.md", "Backdoor ownership test", header, rows)
    return result


def _run_distill_ip(cfg: dict, out: Path) -> dict:
    _, detector, _ = watermark_from_config(cfg["watermark"])
    n = int(cfg.get("N", 100))
    seed = int(cfg.get("seed", 0))
    model_texts = _texts_from(cfg, "suspect", n, derive_seed(seed, 101))
    human_texts = _texts_from(cfg, "human", n, derive_seed(seed, 202))
    rep = ip_infringement_test(
        detector,
        model_texts,
        human_texts,
        alpha=float(cfg.get("alpha", 0.05)),
        boundary=float(cfg.get("boundary", 0.05)),
    )
    header = ["accuracy", "z", "log10_p", "band", "verdict", "N_per_class"]
    rows = [[_fmt(rep.accuracy), _fmt(rep.z), _fmt(rep.log10_p), rep.band, rep.verdict, rep.n_per_class]]
    _write_csv(out / "data.csv", header, rows)
    _write_md(out / "report.md", "Infringement test", header, rows)
    return rep.to_dict()


def _run_distill_text(cfg: dict, out: Path) -> dict:
    model = load_model(cfg["model"])
    _, detector, step = watermark_from_config(cfg["watermark"])
    n = int(cfg.get("N", 100))
    seed = int(cfg.get("seed", 0))
    apply_wm = bool(cfg.get("apply_watermark", False))
    prompts = _load_prompts(cfg, "prompts", n)
    values: list[float] = []
    for i in range(n):
        params = _gen_params(cfg, derive_seed(seed, i))
        text = generate(model, prompts[i], params, step if apply_wm else None)
        values.append(detector(text, prompts[i]).log10_p)
    arr = np.asarray(values)
    median = float(np.median(arr))
    bands = [evidence_band(v) for v in values]
    result = {
        "N": n,
        "apply_watermark": apply_wm,
        "median_log10_p": median,
        "band_counts": {b: bands.count(b) for b in ("significant", "possible", "none")},
        "log10_p": values,
    }
    header = ["text", "log10_p", "band"]
    rows = [[i, _fmt(v), bands[i]] for i, v in enumerate(values)]
    _write_csv(out / "data.csv", header, rows)
    _write_md(
        out / "report.md",
        "Per-text detection",
        ["N", "median_log10_p", "significant", "possible", "none"],
        [[n, _fmt(median)] + [result["band_counts"][b] for b in ("significant", "possible", "none")]],
    )
    plt = _new_figure()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(arr, bins=30, color="#4878d0")
    ax.set_xlabel("log10 p-value")
    ax.set_ylabel("texts")
    ax.set_title("Detection strength")
    fig.tight_layout()
    _save_figure(fig, out / "figure.png")
    plt.close(fig)
    return result


def _run_erosion(cfg: dict, out: Path) -> dict:
    student = load_model(cfg["student"])
    clean = Corpus.load(cfg["clean"])
    _, detector, _ = watermark_from_config(cfg["watermark"])
    steps = [float(s) for s in cfg["steps"]]
    n = int(cfg.get("N", 50))
    seed = int(cfg.get("seed", 0))
    prompts = _load_prompts(cfg, "prompts", n)
    curve = retention_curve(student, clean, steps, detector, prompts, _gen_params(cfg, seed), seed)
    points = [p.to_dict() for p in curve]
    header = ["step", "median_log10_p", "iqr"]
    rows = [[_fmt(p.step), _fmt(p.median_log10_p), _fmt(p.iqr)] for p in curve]
    _write_csv(out / "data.csv", header, rows)
    _write_md(out / "report.md", "Watermark erosion", header, rows)
    plt = _new_figure()
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = [p.step for p in curve]
    ys = [p.median_log10_p for p in curve]
    half = [p.iqr / 2.0 for p in curve]
    ax.errorbar(xs, ys, yerr=half, marker="o", color="#d65f5f", capsize=3)
    ax.set_xscale("symlog", linthresh=max(min(s for s in steps), 1e-12))
    ax.set_xlabel("clean merge weight")
    ax.set_ylabel("median log10 p-value")
    ax.set_title("Erosion under continual training")
    fig.tight_layout()
    _save_figure(fig, out / "figure.png")
    plt.close(fig)
    return {"curve": points}


def _run_retention(cfg: dict, out: Path) -> dict:
    student = load_model(cfg["student"])
    clean_a = Corpus.load(cfg["clean_a"])
    _, detector, _ = watermark_from_config(cfg["watermark"])
    n = int(cfg.get("N", 50))
    seed = int(cfg.get("seed", 0))
    prompts_a = _load_prompts(cfg, "prompts_a", n)
    prompts_b = _load_prompts(cfg, "prompts_b", n)
    res = domain_retention(
        student,
        clean_a,
        float(cfg["weight"]),
        detector,
        prompts_a,
        prompts_b,
        _gen_params(cfg, seed),
        seed,
    )
    med = res.medians()
    header = ["domain", "median_before", "median_after", "delta"]
    rows = [
        ["A", _fmt(med["before_a"]), _fmt(med["after_a"]), _fmt(med["after_a"] - med["before_a"])],
        ["B", _fmt(med["before_b"]), _fmt(med["after_b"]), _fmt(med["after_b"] - med["before_b"])],
    ]
    _write_csv(out / "data.csv", header, rows)
    _write_md(out / "report.md", "Cross-domain retention", header, rows)
    plt = _new_figure()
    fig, ax = plt.subplots(figsize=(6, 4))
    x = np.arange(2)
    width = 0.35
    ax.bar(x - width / 2, [med["before_a"], med["before_b"]], width, label="before", color="#4878d0")
    ax.bar(x + width / 2, [med["after_a"], med["after_b"]], width, label="after", color="#d65f5f")
    ax.set_xticks(x, ["domain A (eroded)", "domain B (untouched)"])
    ax.set_ylabel("median log10 p-value")
    ax.set_title("Domain-specific erosion")
    ax.legend()
    fig.tight_layout()
    _save_figure(fig, out / "figure.png")
    plt.close(fig)
    return {"medians": med, "per_text": {
        "before_a": res.before_a, "before_b": res.before_b,
        "after_a": res.after_a, "after_b": res.after_b,
    }}


def _run_quality(cfg: dict, out: Path) -> dict:
    model = load_model(cfg["model"])
    scorer = load_model(cfg["scorer"]) if "scorer" in cfg else model
    n = int(cfg.get("N", 100))
    seed = int(cfg.get("seed", 0))
    no_repeat = cfg.get("no_repeat_n", 5)
    rep_n = int(cfg.get("rep_n", 3))
    prompts = _load_prompts(cfg, "prompts", n)
    modes = cfg.get("modes") or [{"name": "plain"}]
    results = {}
    rows = []
    for mode in modes:
        name = mode["name"]
        step = None
        if mode.get("watermark"):
            _, _, step = watermark_from_config(mode["watermark"])
        texts = []
        for i in range(n):
            params = _gen_params(cfg, derive_seed(seed, i))
            texts.append(generate(model, prompts[i], params, step))
        ppl = perplexity(scorer, Corpus(texts), no_repeat)
        rep = seq_rep_n(texts, rep_n)
        results[name] = {"ppl": ppl, f"seq_rep_{rep_n}": rep}
        rows.append([name, _fmt(ppl), _fmt(rep)])
    header = ["mode", "ppl", f"seq_rep_{rep_n}"]
    _write_csv(out / "data.csv", header, rows)
    _write_md(out / "report.md", "Generation quality", header, rows)
    plt = _new_figure()
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    names = [r[0] for r in rows]
    axes[0].bar(names, [results[nm]["ppl"] for nm in names], color="#4878d0")
    axes[0].set_title("Perplexity")
    axes[1].bar(names, [results[nm][f"seq_rep_{rep_n}"] for nm in names], color="#d65f5f")
    axes[1].set_title(f"Seq-Rep-{rep_n}")
    for ax in axes:
        ax.tick_params(axis="x", rotation=20)
    fig.tight_layout()
    _save_figure(fig, out / "figure.png")
    plt.close(fig)
    return results


_PIPELINE_FNS = {
    "backdoor-ip": _run_backdoor_ip,
    "distill-ip": _run_distill_ip,
    "distill-text": _run_distill_text,
    "erosion": _run_erosion,
    "retention": _run_retention,
    "quality": _run_quality,
}
