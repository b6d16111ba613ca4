"""Command-line interface: votedcrf {train,predict,eval,cv,noise,complexity,bound}.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import complexity as cx
from .core import LabeledSequence
from .data_io import (
    Corpus,
    CorpusFormatError,
    ModelFileError,
    inject_noise,
    load_corpus,
    load_model,
    make_folds,
    save_model,
    write_json,
    write_two_column,
)
from .evaluation import mean_std, metrics_tsv, tag_errors
from .features import DEFAULT_TEMPLATES, FeatureBank, parse_templates
from .optim import TrainingError
from .structboost import StructBoostConfig, train_structboost
from .vcrf import VcrfConfig, predict as predict_labels, train_vcrf

log = logging.getLogger("votedcrf")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
DEFAULT_GRID = (1.0, 0.5, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 0.0)


class DataError(Exception):
    pass


def _grid(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}") from None
    if not vals or any(v < 0 or not math.isfinite(v) for v in vals):
        raise argparse.ArgumentTypeError("grid values must be finite and nonnegative")
    return vals


def _templates(text: str):
    try:
        return parse_templates(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad template list {text!r}: {exc}") from None


# ----------------------------------------------------------------------
def make_config(kind: str, lam: float, beta: float, args) -> VcrfConfig:
    cls = StructBoostConfig if kind == "structboost" else VcrfConfig
    kw = dict(lam=lam, beta=beta, epochs=args.epochs, markov_order=args.order,
              loss=args.loss, seed=args.seed, penalty_formula=args.penalty)
    if args.eta0 is not None:
        kw["eta0"] = args.eta0
    if getattr(args, "solver", None):
        kw["solver"] = args.solver
    if getattr(args, "clip_norm", None) is not None:
        kw["clip_norm"] = args.clip_norm if args.clip_norm > 0 else None
    return cls(**kw)


def fit(kind: str, train, alphabet, templates, cfg, stats=None):
    bank = FeatureBank.from_corpus(templates, train, alphabet, stats=stats)
    trainer = train_structboost if kind == "structboost" else train_vcrf
    w, trace = trainer(train, bank, cfg)
    return bank, w, trace


def evaluate(w, bank, cfg, data) -> dict:
    pred = [predict_labels(w, s.tokens, bank, cfg) for s in data]
    return tag_errors([list(s.labels) for s in data], pred)


def _read(args) -> Corpus:
    try:
        return load_corpus(args.data, args.format)
    except FileNotFoundError as exc:
        raise DataError(f"cannot read {args.data}: {exc.strerror}") from None


def _align(corpus: Corpus, labels: list[str]) -> list[LabeledSequence]:
    """Re-index corpus labels to a model's label order."""
    index = {lab: i for i, lab in enumerate(labels)}
    unknown = sorted(set(corpus.alphabet.labels) - set(index))
    if unknown:
        raise DataError(f"labels not known to the model: {', '.join(unknown)}")
    remap = [index[lab] for lab in corpus.alphabet.labels]
    return [LabeledSequence(s.tokens, tuple(remap[y] for y in s.labels))
            for s in corpus.sentences]


def _load(path):
    try:
        m = load_model(path)
    except FileNotFoundError as exc:
        raise DataError(f"cannot read model {path}: {exc.strerror}") from None
    cfg_cls = StructBoostConfig if m.kind == "structboost" else VcrfConfig
    return m, cfg_cls(**m.config)


def _emit(obj, out: str | None, tsv: str | None = None):
    if tsv is not None:
        sys.stdout.write(tsv)
    if out:
        write_json(out, obj)
    elif tsv is None:
        sys.stdout.write(json.dumps(obj, sort_keys=True, indent=2) + "\n")


# ----------------------------------------------------------------------
def cmd_train(args) -> int:
    corpus = _read(args)
    cfg = make_config(args.kind, args.lam, args.beta, args)
    bank, w, trace = fit(args.kind, corpus.sentences, corpus.alphabet, args.templates, cfg,
                         stats=corpus.stats)
    save_model(args.out, w, bank, cfg.echo(), kind=args.kind)
    report = {
        "kind": args.kind,
        "config": cfg.echo(),
        "templates": [str(t) for t in bank.templates],
        "features": bank.dimension,
        "nonzero_features": w.nnz,
        "nonzero_per_family": [int(v) for v in w.nnz_per_family(bank.n_families)],
        "corpus": corpus.stats,
        "trace": trace.as_dict(),
    }
    write_json(args.out + ".log.json", report)
    print(f"trained {args.kind}: {bank.dimension} features, {w.nnz} nonzero, "
          f"objective {trace.objectives[-1]:.6g}, epochs {trace.epochs_run}")
    return EXIT_OK


def cmd_predict(args) -> int:
    m, cfg = _load(args.model)
    corpus = _read(args)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for s in corpus.sentences:
            labs = m.bank.alphabet.decode(predict_labels(m.weights, s.tokens, m.bank, cfg))
            for tok, lab in zip(s.tokens, labs):
                out.write(f"{tok}\t{lab}\n")
            out.write("\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_eval(args) -> int:
    m, cfg = _load(args.model)
    corpus = _read(args)
    data = _align(corpus, m.bank.alphabet.labels)
    res = evaluate(m.weights, m.bank, cfg, data)
    res["nonzero_features"] = int(np.count_nonzero(m.weights))
    cols = ["token_error", "sentence_error", "tokens", "sentences", "nonzero_features"]
    _emit(res, args.out, metrics_tsv([res], cols))
    return EXIT_OK


def _cv_cell(job):
    kind, train, val, alphabet, templates, stats, cfg = job
    bank, w, trace = fit(kind, train, alphabet, templates, cfg, stats)
    return {
        "lambda": cfg.lam, "beta": cfg.beta,
        "validation_token_error": evaluate(w, bank, cfg, val)["token_error"],
        "nonzero_features": w.nnz, "epochs_run": trace.epochs_run,
    }, (bank, w)


def _select(cells, allow):
    """Lowest validation token error; ties go to the earlier grid cell."""
    best = None
    for i, (c, _) in enumerate(cells):
        if allow(c) and (best is None or c["validation_token_error"] < cells[best][0]["validation_token_error"]):
            best = i
    return best


def run_cv(corpus: Corpus, args, kind: str, lam_grid, beta_grid, jobs: int = 1) -> dict:
    plan = make_folds(corpus, args.seed)
    runs = []
    for i in range(plan.k):
        tr_idx, va_idx, te_idx = plan.run(i)
        train = [corpus.sentences[j] for j in tr_idx]
        val = [corpus.sentences[j] for j in va_idx]
        test = [corpus.sentences[j] for j in te_idx]
        assert not (set(tr_idx) & set(va_idx) or set(tr_idx) & set(te_idx) or set(va_idx) & set(te_idx))
        stats = Corpus(train, corpus.alphabet).stats
        work = [(kind, train, val, corpus.alphabet, args.templates, stats,
                 make_config(kind, lam, beta, args)) for lam in lam_grid for beta in beta_grid]
        if jobs > 1:
            with ProcessPoolExecutor(jobs) as pool:
                cells = list(pool.map(_cv_cell, work))
        else:
            cells = [_cv_cell(job) for job in work]
        log.info("run %d: selection uses validation fold %d only (test fold %d)",
                 i, plan.roles(i)["validation"], plan.roles(i)["test"])
        run = {"run": i, **plan.roles(i), "grid": [c for c, _ in cells]}
        for name, allow in (("vcrf", lambda c: True), ("crf", lambda c: c["lambda"] == 0.0)):
            b = _select(cells, allow)
            if b is None:
                continue
            cell, (bank, w) = cells[b]
            cfg = make_config(kind, cell["lambda"], cell["beta"], args)
            res = evaluate(w, bank, cfg, test)
            run[name] = {"lambda": cell["lambda"], "beta": cell["beta"],
                         "validation_token_error": cell["validation_token_error"],
                         "test_token_error": res["token_error"],
                         "test_sentence_error": res["sentence_error"],
                         "nonzero_features": cell["nonzero_features"]}
        runs.append(run)
    summary = {}
    for name in ("vcrf", "crf"):
        if all(name in r for r in runs):
            tok = mean_std([r[name]["test_token_error"] for r in runs])
            sen = mean_std([r[name]["test_sentence_error"] for r in runs])
            nnz = mean_std([r[name]["nonzero_features"] for r in runs])
            summary[name] = {"token_error_mean": tok[0], "token_error_std": tok[1],
                             "sentence_error_mean": sen[0], "sentence_error_std": sen[1],
                             "nonzero_mean": nnz[0], "nonzero_std": nnz[1]}
    return {"kind": kind, "seed": args.seed, "epochs": args.epochs,
            "lambda_grid": list(lam_grid), "beta_grid": list(beta_grid),
            "folds": [list(f) for f in plan.folds], "runs": runs, "summary": summary}


def cmd_cv(args) -> int:
    corpus = _read(args)
    if args.noise_rate > 0:
        corpus = inject_noise(corpus, args.noise_rate, args.min_count, args.seed)
    res = run_cv(corpus, args, args.kind, args.lambda_grid, args.beta_grid, args.jobs)
    res["noise_rate"] = args.noise_rate
    rows = []
    for r in res["runs"]:
        for name in ("vcrf", "crf"):
            if name in r:
                rows.append({"run": r["run"], "model": name, **r[name]})
    cols = ["run", "model", "lambda", "beta", "validation_token_error", "test_token_error",
            "test_sentence_error", "nonzero_features"]
    tsv = metrics_tsv(rows, cols)
    for name, s in res["summary"].items():
        tsv += (f"# {name}\ttoken {100 * s['token_error_mean']:.2f} ± {100 * s['token_error_std']:.2f}"
                f"\tsentence {100 * s['sentence_error_mean']:.2f} ± {100 * s['sentence_error_std']:.2f}\n")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_json(os.path.join(args.out, "cv.json"), res)
        with open(os.path.join(args.out, "cv.tsv"), "w", encoding="utf-8") as fh:
            fh.write(tsv)
    sys.stdout.write(tsv)
    return EXIT_OK


def cmd_noise(args) -> int:
    corpus = _read(args)
    noisy, rep = inject_noise(corpus, args.noise_rate, args.min_count, args.seed, report=True)
    if not args.out:
        raise DataError("noise needs --out for the noisy corpus")
    write_two_column(noisy, args.out)
    doc = {"rate": args.noise_rate, "min_count": args.min_count, "seed": args.seed,
           "eligible": rep.eligible, "flipped": rep.flipped, "ineligible": rep.ineligible,
           "flip_fraction": rep.flipped / rep.eligible if rep.eligible else 0.0}
    write_json(args.out + ".noise.json", doc)
    sys.stdout.write(json.dumps(doc, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_complexity(args) -> int:
    corpus = _read(args)
    bank = FeatureBank.from_corpus(args.templates, corpus.sentences, corpus.alphabet,
                                   stats=corpus.stats)
    rep = cx.complexity_report(corpus.sentences, bank, norm=args.norm, Lambda=args.lambda_cap,
                               draws=args.draws, seed=args.seed, markov_order=args.order)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(rep.to_json())
        with open(args.out + ".txt", "w", encoding="utf-8") as fh:
            fh.write(rep.to_text())
    sys.stdout.write(rep.to_text())
    return EXIT_OK


def bound_report(w, bank, cfg, data, *, rho, delta, norm, Lambda, draws, seed, tau=0.0) -> dict:
    p = cfg.order(bank)
    m = len(data)
    if Lambda is None:
        Lambda = float(np.abs(w).sum()) if norm == 1 else float(np.linalg.norm(w))
    rep = cx.complexity_report(data, bank, norm=norm, Lambda=Lambda, draws=draws, seed=seed,
                               markov_order=p)
    ml = cx.margin_losses(w, data, bank, p, rho, tau, cfg.loss)
    M = ml["M"] or cfg.loss.bound()
    inputs = cx.BoundInputs(rho=rho, delta=delta, M=M, m=m)
    heldout = evaluate(w, bank, cfg, data)
    out = {
        "rho": rho, "delta": delta, "tau": tau, "norm": norm, "Lambda": Lambda,
        "draws": draws, "seed": seed, "m": m, "M": M,
        "heldout_token_error": heldout["token_error"],
        "heldout_sentence_error": heldout["sentence_error"],
        "margin_loss_add": ml["add"], "margin_loss_mult": ml["mult"],
        "complexity_mc": rep.mc_estimate, "complexity_mc_stderr": rep.mc_stderr,
        "complexity_closed_form": rep.bound_h1 if norm == 1 else rep.bound_h2,
        "bound_add": cx.generalization_bound("add", ml["add"], rep.mc_estimate, inputs, True),
        "bound_mult": cx.generalization_bound("mult", ml["mult"], rep.mc_estimate, inputs, True),
        "complexity_notes": rep.notes,
    }
    out.update(_vrm_terms(w, bank, data, p, rho, delta, M, draws, seed, tau, cfg))
    return out


def _vrm_terms(w, bank, data, p, rho, delta, M, draws, seed, tau, cfg) -> dict:
    """Voted-risk bound for f = ||w||_1 sum_k alpha_k h_k with alpha_k = ||w_k||_1 / ||w||_1."""
    norms = np.bincount(bank.family_array(), weights=np.abs(w), minlength=bank.n_families)
    total = norms.sum()
    if bank.n_families < 2 or total == 0:
        return {"vrm_bound": None, "vrm_note": "needs two families and a nonzero model"}
    ff = cx.factor_features(data, bank, p)
    fam = bank.family_array()
    comps = []
    for k in range(bank.n_families):
        cols = np.flatnonzero(fam == k)
        sub = cx.FactorFeatures(ff.matrix[:, cols].tocsr(), ff.row_example, ff.lengths,
                                ff.n_labels, ff.markov_order)
        comps.append(cx._mc_from_features(sub, 1, 1.0, draws, seed).value)
    ml = cx.margin_losses(w / total, data, bank, p, rho, tau, cfg.loss)
    c = float(bank.n_labels) ** max(len(s) for s in data)
    inputs = cx.BoundInputs(rho=rho, delta=delta, M=M, m=len(data), c=c,
                            p_families=bank.n_families, alpha_weights=[float(a) for a in norms / total],
                            per_family_complexity=comps)
    try:
        val = cx.vrm_bound(inputs, "add", ml["add"])
        note = ""
    except cx.DomainError as exc:
        val, note = None, str(exc)
    return {"vrm_bound": val, "vrm_note": note, "vrm_family_complexity": comps,
            "vrm_alpha": [float(a) for a in norms / total], "vrm_margin_loss_add": ml["add"]}


def cmd_bound(args) -> int:
    m, cfg = _load(args.model)
    corpus = _read(args)
    data = _align(corpus, m.bank.alphabet.labels)
    rep = bound_report(m.weights, m.bank, cfg, data, rho=args.rho, delta=args.delta,
                       norm=args.norm, Lambda=args.lambda_cap, draws=args.draws,
                       seed=args.seed, tau=args.tau)
    if args.out:
        write_json(args.out, rep)
    sys.stdout.write("".join(f"{k}={rep[k]!r}\n" for k in sorted(rep)))
    return EXIT_OK


# ----------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="votedcrf", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def data_opts(p, required=True):
        p.add_argument("--data", required=required, help="corpus file")
        p.add_argument("--format", default="two-column", choices=("conllu", "two-column"))

    def model_opts(p):
        p.add_argument("--templates", type=_templates, default=list(DEFAULT_TEMPLATES),
                       help='feature families as "k1,k2,k3;..."')
        p.add_argument("--order", type=int, default=None, help="Markov order p")
        p.add_argument("--epochs", type=int, default=50)
        p.add_argument("--eta0", type=float, default=None, help="initial step size")
        p.add_argument("--solver", choices=("sgd", "prox-gd"), default=None,
                       help="proximal SGD (default) or full-batch proximal gradient with line search")
        p.add_argument("--clip-norm", type=float, default=None,
                       help="cap on the gradient 2-norm per step (0 disables)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--kind", choices=("vcrf", "structboost"), default="vcrf")
        p.add_argument("--loss", choices=("hamming", "hamming-count"), default="hamming")
        p.add_argument("--penalty", choices=("counting", "columns"), default="counting",
                       help="family complexity formula")

    p = sub.add_parser("train", help="train a model")
    data_opts(p)
    model_opts(p)
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--out", required=True, help="model file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="tag a corpus")
    data_opts(p)
    p.add_argument("--model", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="token and sentence error")
    data_opts(p)
    p.add_argument("--model", required=True)
    p.add_argument("--out", help="JSON metrics file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cv", help="5-fold cross-validation with grid search")
    data_opts(p)
    model_opts(p)
    p.add_argument("--lambda-grid", type=_grid, default=list(DEFAULT_GRID))
    p.add_argument("--beta-grid", type=_grid, default=list(DEFAULT_GRID))
    p.add_argument("--noise-rate", type=float, default=0.0)
    p.add_argument("--min-count", type=int, default=5)
    p.add_argument("--jobs", type=int, default=1, help="parallel grid cells")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("noise", help="inject label noise")
    data_opts(p)
    p.add_argument("--noise-rate", type=float, default=0.2)
    p.add_argument("--min-count", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="noisy two-column corpus")
    p.set_defaults(func=cmd_noise)

    p = sub.add_parser("complexity", help="Rademacher complexity report")
    data_opts(p)
    p.add_argument("--templates", type=_templates, default=list(DEFAULT_TEMPLATES))
    p.add_argument("--order", type=int, default=None)
    p.add_argument("--norm", type=int, choices=(1, 2), default=2)
    p.add_argument("--lambda-cap", type=float, default=1.0, help="Lambda, the weight-norm cap")
    p.add_argument("--draws", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="JSON report (key=value text alongside)")
    p.set_defaults(func=cmd_complexity)

    p = sub.add_parser("bound", help="generalization bounds of a trained model")
    data_opts(p)
    p.add_argument("--model", required=True)
    p.add_argument("--rho", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--tau", type=float, default=0.0)
    p.add_argument("--norm", type=int, choices=(1, 2), default=2)
    p.add_argument("--lambda-cap", type=float, default=None,
                   help="Lambda; defaults to the model's own weight norm")
    p.add_argument("--draws", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bound)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "epochs", 1) < 1:
        ap.print_usage(sys.stderr)
        print("votedcrf: error: --epochs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (DataError, CorpusFormatError, ModelFileError) as exc:
        print(f"votedcrf: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, cx.DomainError, FloatingPointError) as exc:
        print(f"votedcrf: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"votedcrf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
