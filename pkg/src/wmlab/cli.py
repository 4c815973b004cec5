"""Command-line surface.

Machine-readable results go to stdout as JSON or JSON lines; everything
diagnostic goes to stderr. Exit codes: 0 success, 1 usage error, 2 runtime
failure. Every random choice sits behind --seed, with the WMLAB_SEED
environment variable as fallback.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import aar, kgw
from .backdoor import (
    BackdoorSpec,
    PairCorpus,
    backdoor_pvalue,
    build_backdoor_corpus,
    measure_trigger_rate,
)
from .bridge import BridgeError, serve_stdio, serve_tcp
from .core import Corpus, Vocabulary, derive_seed, tokenize
from .distill import distill_logits, distill_sampling, retention_curve, domain_retention
from .evaluation import (
    detection_accuracy,
    evidence_band,
    ip_infringement_test,
    perplexity,
    seq_rep_n,
)
from .lm import GenParams, generate, load_model, save_model, train_ngram
from .runner import run_experiment, watermark_from_config


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _resolve_seed(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get("WMLAB_SEED")
    return int(env) if env else 0


def _pmap(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def _wm_config(args) -> dict:
    cfg = {"method": args.watermark, "key": args.key, "k": args.k}
    if args.watermark == "kgw":
        cfg["gamma"] = args.gamma
        cfg["delta"] = args.delta
    return cfg


def _add_wm_args(p: argparse.ArgumentParser, default_method: str | None = None) -> None:
    if default_method is None:
        p.add_argument("--watermark", choices=["kgw", "aar", "none"], default="none")
    else:
        p.add_argument("--method", dest="watermark", choices=["kgw", "aar"], required=True)
    p.add_argument("--key", type=int, default=None, help="watermark secret key (64-bit)")
    p.add_argument("--k", type=int, default=None, help="hash window size")
    p.add_argument("--gamma", type=float, default=0.25)
    p.add_argument("--delta", type=float, default=2.0)


def _check_wm(parser: _Parser, args) -> None:
    if args.watermark != "none" and args.key is None:
        parser.error("--key is required when a watermark method is selected")
    if args.k is None:
        args.k = 1 if args.watermark == "kgw" else 2


def _emit(obj) -> None:
    print(json.dumps(obj, separators=(",", ":")))


def _load_prompt_cycle(path: str | None, n: int) -> list[list[int]]:
    if path is None:
        return [[] for _ in range(n)]
    seqs = Corpus.load(path).sequences
    if not seqs:
        raise ValueError(f"prompt corpus {path!r} is empty")
    return [list(seqs[i % len(seqs)]) for i in range(n)]


def _cmd_train_lm(args) -> int:
    corpus = Corpus.load(args.corpus)
    if args.vocab is not None:
        vocab_size = Vocabulary.load(args.vocab).size
    elif args.vocab_size is not None:
        vocab_size = args.vocab_size
    else:
        raise ValueError("one of --vocab or --vocab-size is required")
    model = train_ngram(corpus, args.order, vocab_size, (args.alpha, args.lam))
    save_model(model, args.out)
    _emit({"out": str(args.out), "order": model.order, "V": model.vocab_size,
           "contexts": len(model.counts)})
    return 0


def _cmd_generate(args) -> int:
    model = load_model(args.model)
    step = None
    if args.watermark != "none":
        _, _, step = watermark_from_config(_wm_config(args))
    seed = _resolve_seed(args.seed)
    prompts = _load_prompt_cycle(args.prompts, args.n)
    for i in range(args.n):
        params = GenParams(
            max_len=args.max_len,
            temperature=args.temperature,
            stop_at_eos=not args.no_stop_at_eos,
            seed=derive_seed(seed, i),
        )
        completion = generate(model, prompts[i], params, step)
        rec: dict = {"tokens": completion}
        if prompts[i]:
            rec["prefix"] = prompts[i]
        _emit(rec)
    return 0


def _cmd_detect(args) -> int:
    _, detector, _ = watermark_from_config(_wm_config(args))
    fh = sys.stdin if args.infile == "-" else open(args.infile, "r", encoding="utf-8")
    try:
        records = [json.loads(line) for line in fh if line.strip()]
    finally:
        if fh is not sys.stdin:
            fh.close()

    def one(rec: dict) -> dict:
        report = detector(rec["tokens"], rec.get("prefix", []))
        return report.to_dict()

    for out in _pmap(one, records, args.jobs):
        _emit(out)
    return 0


def _backdoor_spec(args) -> BackdoorSpec:
    vocab = Vocabulary.load(args.vocab)
    return BackdoorSpec(
        trigger=tuple(tokenize(args.trigger, vocab)),
        target=tuple(tokenize(args.target, vocab)),
        mode=getattr(args, "mode", "pt"),
        n=getattr(args, "n_poison", 0),
        p0=getattr(args, "p0", 0.01),
    )


def _cmd_backdoor_build(args) -> int:
    spec = _backdoor_spec(args)
    seed = _resolve_seed(args.seed)
    if spec.mode == "pt":
        corpus = Corpus.load(args.corpus)
        poisoned = build_backdoor_corpus(corpus, spec, seed)
        poisoned.save(args.out)
        _emit({"out": str(args.out), "mode": "pt", "sequences": len(poisoned)})
    else:
        pairs = _load_pairs(args.corpus)
        poisoned = build_backdoor_corpus(pairs, spec, seed)
        _save_pairs(poisoned, args.out)
        _emit({"out": str(args.out), "mode": "it", "pairs": len(poisoned)})
    return 0


def _load_pairs(path: str) -> PairCorpus:
    prompts, completions = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            prompts.append([int(t) for t in rec["prompt"]])
            completions.append([int(t) for t in rec["completion"]])
    return PairCorpus(prompts, completions)


def _save_pairs(pairs: PairCorpus, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p, c in zip(pairs.prompts, pairs.completions):
            fh.write(json.dumps({"prompt": p, "completion": c}, separators=(",", ":")) + "\n")


def _cmd_backdoor_test(args) -> int:
    model = load_model(args.model)
    spec = _backdoor_spec(args)
    seed = _resolve_seed(args.seed)
    prompts = _load_prompt_cycle(args.prompts, args.n)
    trial = measure_trigger_rate(
        model, prompts, spec, GenParams(max_len=args.max_len, seed=seed)
    )
    log10_p = backdoor_pvalue(trial, spec.p0)
    _emit({
        "N": trial.n,
        "hits": trial.hits,
        "rate": trial.rate,
        "p0": spec.p0,
        "log10_p": log10_p,
        "band": evidence_band(log10_p),
    })
    return 0


def _cmd_distill_sample(args) -> int:
    teacher = load_model(args.teacher)
    step = None
    if args.watermark != "none":
        _, _, step = watermark_from_config(_wm_config(args))
    prompts = Corpus.load(args.prompts).sequences if args.prompts else None
    student = distill_sampling(
        teacher,
        step,
        args.order,
        args.n_samples,
        args.sample_len,
        prompts,
        _resolve_seed(args.seed),
        (args.alpha, args.lam),
    )
    save_model(student, args.out)
    _emit({"out": str(args.out), "order": student.order, "contexts": len(student.counts)})
    return 0


def _cmd_distill_logits(args) -> int:
    teacher = load_model(args.teacher)
    transform = None
    if args.watermark != "none":
        if args.key is None:
            raise ValueError("--key is required when a watermark method is selected")
        if args.watermark == "kgw":
            transform = kgw.transform_fn(
                kgw.KgwParams(key=args.key, k=args.k or 1, gamma=args.gamma, delta=args.delta)
            )
        else:
            transform = aar.transform_fn(aar.AarParams(key=args.key, k=args.k or 2))
    contexts = Corpus.load(args.contexts)
    student = distill_logits(teacher, transform, contexts, args.order, (args.alpha, args.lam))
    save_model(student, args.out)
    _emit({"out": str(args.out), "order": student.order, "contexts": len(student.counts)})
    return 0


def _cmd_erode(args) -> int:
    student = load_model(args.student)
    clean = Corpus.load(args.clean)
    _, detector, _ = watermark_from_config(_wm_config(args))
    steps = [float(s) for s in args.steps.split(",") if s]
    seed = _resolve_seed(args.seed)
    prompts = _load_prompt_cycle(args.prompts, args.n_texts)
    curve = retention_curve(
        student, clean, steps, detector, prompts,
        GenParams(max_len=args.max_len, seed=seed), seed,
    )
    _emit({"curve": [p.to_dict() for p in curve]})
    return 0


def _cmd_retain(args) -> int:
    student = load_model(args.student)
    clean_a = Corpus.load(args.clean_a)
    _, detector, _ = watermark_from_config(_wm_config(args))
    seed = _resolve_seed(args.seed)
    prompts_a = _load_prompt_cycle(args.prompts_a, args.n_texts)
    prompts_b = _load_prompt_cycle(args.prompts_b, args.n_texts)
    result = domain_retention(
        student, clean_a, args.weight, detector, prompts_a, prompts_b,
        GenParams(max_len=args.max_len, seed=seed), seed,
    )
    _emit({"medians": result.medians()})
    return 0


def _cmd_eval_quality(args) -> int:
    scorer = load_model(args.scorer)
    texts = Corpus.load(args.texts)
    no_repeat = None if args.no_repeat_n == 0 else args.no_repeat_n
    _emit({
        "ppl": perplexity(scorer, texts, no_repeat),
        f"seq_rep_{args.rep_n}": seq_rep_n(texts.sequences, args.rep_n),
    })
    return 0


def _load_reports(path: str):
    from .core import DetectionReport

    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            out.append(DetectionReport(
                method=rec.get("method", "unknown"),
                statistic=rec.get("z", rec.get("S", 0.0)),
                scored_tokens=rec.get("T", rec.get("n", 0)),
                log10_p=rec["log10_p"],
                greens=rec.get("greens"),
            ))
    return out


def _cmd_eval_accuracy(args) -> int:
    report = detection_accuracy(
        _load_reports(args.wm), _load_reports(args.human), args.alpha
    )
    _emit(report.to_dict())
    return 0


def _cmd_eval_ip(args) -> int:
    _, detector, _ = watermark_from_config(_wm_config(args))
    suspect = Corpus.load(args.suspect).sequences
    human = Corpus.load(args.human).sequences

    report = ip_infringement_test(detector, suspect, human, args.alpha, args.boundary)
    _emit(report.to_dict())
    return 0


def _cmd_experiment(args) -> int:
    config = json.loads(Path(args.config).read_text(encoding="utf-8"))
    out_dir = args.out_dir or config.get("out_dir")
    if not out_dir:
        raise ValueError("an output directory is required (--out-dir or config out_dir)")
    report = run_experiment(config, out_dir)
    _emit(report)
    return 0


def _cmd_bridge_serve(args) -> int:
    model = load_model(args.model)
    if args.port is not None:
        def announce(port: int) -> None:
            print(f"listening on {args.host}:{port}", file=sys.stderr, flush=True)
        serve_tcp(model, args.host, args.port, args.max_sessions, args.timeout, announce)
    else:
        served = serve_stdio(model, args.timeout)
        print(f"served {served} requests", file=sys.stderr)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="wmlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("train-lm", help="count an n-gram model from a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--order", type=int, required=True)
    p.add_argument("--vocab", default=None)
    p.add_argument("--vocab-size", type=int, default=None)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--lambda", dest="lam", type=float, default=0.3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_lm)

    p = sub.add_parser("generate", help="sample texts, optionally watermarked")
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--max-len", type=int, default=200)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--no-stop-at-eos", action="store_true")
    p.add_argument("--prompts", default=None)
    p.add_argument("--seed", type=int, default=None)
    _add_wm_args(p)
    p.set_defaults(func=_cmd_generate, needs_wm_check=True)

    p = sub.add_parser("detect", help="score texts with a keyed detector")
    p.add_argument("--in", dest="infile", default="-")
    p.add_argument("--jobs", type=int, default=1)
    _add_wm_args(p, default_method="required")
    p.set_defaults(func=_cmd_detect, needs_wm_check=True)

    p = sub.add_parser("backdoor", help="plant or measure a trigger/target backdoor")
    bsub = p.add_subparsers(dest="subcommand", parser_class=_Parser, required=True)
    b = bsub.add_parser("build")
    b.add_argument("--corpus", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--trigger", default="@@@")
    b.add_argument("--target", default="I am llama")
    b.add_argument("--vocab", required=True)
    b.add_argument("--mode", choices=["pt", "it"], default="pt")
    b.add_argument("--n", dest="n_poison", type=int, required=True)
    b.add_argument("--seed", type=int, default=None)
    b.set_defaults(func=_cmd_backdoor_build)
    b = bsub.add_parser("test")
    b.add_argument("--model", required=True)
    b.add_argument("--trigger", default="@@@")
    b.add_argument("--target", default="I am llama")
    b.add_argument("--vocab", required=True)
    b.add_argument("--n", type=int, default=200)
    b.add_argument("--max-len", type=int, default=20)
    b.add_argument("--p0", type=float, default=0.01)
    b.add_argument("--prompts", default=None)
    b.add_argument("--seed", type=int, default=None)
    b.set_defaults(func=_cmd_backdoor_test)

    p = sub.add_parser("distill", help="train a student from a teacher")
    dsub = p.add_subparsers(dest="subcommand", parser_class=_Parser, required=True)
    d = dsub.add_parser("sample")
    d.add_argument("--teacher", required=True)
    d.add_argument("--order", type=int, required=True)
    d.add_argument("--n-samples", type=int, required=True)
    d.add_argument("--sample-len", type=int, required=True)
    d.add_argument("--prompts", default=None)
    d.add_argument("--alpha", type=float, default=0.0)
    d.add_argument("--lambda", dest="lam", type=float, default=0.0)
    d.add_argument("--seed", type=int, default=None)
    d.add_argument("--out", required=True)
    _add_wm_args(d)
    d.set_defaults(func=_cmd_distill_sample, needs_wm_check=True)
    d = dsub.add_parser("logits")
    d.add_argument("--teacher", required=True)
    d.add_argument("--order", type=int, required=True)
    d.add_argument("--contexts", required=True)
    d.add_argument("--alpha", type=float, default=0.0)
    d.add_argument("--lambda", dest="lam", type=float, default=0.0)
    d.add_argument("--out", required=True)
    _add_wm_args(d)
    d.set_defaults(func=_cmd_distill_logits, needs_wm_check=True)

    p = sub.add_parser("erode", help="watermark strength along clean merges")
    p.add_argument("--student", required=True)
    p.add_argument("--clean", required=True)
    p.add_argument("--steps", required=True, help="comma-separated positive weights")
    p.add_argument("--n-texts", type=int, default=50)
    p.add_argument("--max-len", type=int, default=200)
    p.add_argument("--prompts", default=None)
    p.add_argument("--seed", type=int, default=None)
    _add_wm_args(p, default_method="required")
    p.set_defaults(func=_cmd_erode, needs_wm_check=True)

    p = sub.add_parser("retain", help="cross-domain retention after one merge")
    p.add_argument("--student", required=True)
    p.add_argument("--clean-a", required=True)
    p.add_argument("--weight", type=float, required=True)
    p.add_argument("--n-texts", type=int, default=50)
    p.add_argument("--max-len", type=int, default=200)
    p.add_argument("--prompts-a", default=None)
    p.add_argument("--prompts-b", default=None)
    p.add_argument("--seed", type=int, default=None)
    _add_wm_args(p, default_method="required")
    p.set_defaults(func=_cmd_retain, needs_wm_check=True)

    p = sub.add_parser("eval", help="quality metrics, accuracy, infringement")
    esub = p.add_subparsers(dest="subcommand", parser_class=_Parser, required=True)
    e = esub.add_parser("quality")
    e.add_argument("--texts", required=True)
    e.add_argument("--scorer", required=True)
    e.add_argument("--no-repeat-n", type=int, default=5, help="0 disables the mask")
    e.add_argument("--rep-n", type=int, default=3)
    e.set_defaults(func=_cmd_eval_quality)
    e = esub.add_parser("accuracy")
    e.add_argument("--wm", required=True)
    e.add_argument("--human", required=True)
    e.add_argument("--alpha", type=float, default=0.05)
    e.set_defaults(func=_cmd_eval_accuracy)
    e = esub.add_parser("ip")
    e.add_argument("--suspect", required=True)
    e.add_argument("--human", required=True)
    e.add_argument("--alpha", type=float, default=0.05)
    e.add_argument("--boundary", type=float, default=0.05)
    e.add_argument("--jobs", type=int, default=1)
    _add_wm_args(e, default_method="required")
    e.set_defaults(func=_cmd_eval_ip, needs_wm_check=True)

    p = sub.add_parser("experiment", help="run a named pipeline from a JSON config")
    p.add_argument("config")
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=_cmd_experiment)

    p = sub.add_parser("bridge-serve", help="serve a model over the wire protocol")
    p.add_argument("model")
    p.add_argument("--port", type=int, default=None, help="TCP mode; default is stdio")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--max-sessions", type=int, default=1)
    p.set_defaults(func=_cmd_bridge_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "command", None) is None:
            parser.error("a subcommand is required")
        if getattr(args, "needs_wm_check", False):
            _check_wm(parser, args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    try:
        return args.func(args)
    except BrokenPipeError:
        return 0
    except (ValueError, RuntimeError, OSError, KeyError, json.JSONDecodeError, BridgeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
