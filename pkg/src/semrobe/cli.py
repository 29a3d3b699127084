"""Command-line pipeline: expand templates, train populations, certify, assess, report.

Every file the CLI writes starts with (or, for JSON, embeds) a config header
holding the full resolved argument set and seed.  ``semrobe rerun FILE`` replays
the run that produced ``FILE`` from that header alone.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .datasets import AugmentSpec, augment, load_corpus
from .embedding import BallSpec, diameter, load_embeddings, parse_norm, write_neighbor_dump
from .errors import ExpansionCapExceeded, InsufficientSamples, NormNotSupported, SemRobeError
from .experiment import sample_templates, split_templates
from .ibp import RobustTrainConfig, certify_batch, train_robust
from .model import TrainConfig, init_model, load_model, param_norm, predict, save_model, train
from .robustness import (
    DEFAULT_TAU,
    PredictionFile,
    RobustnessReport,
    assess_global,
    assess_population,
    check_discrete_robustness,
    compare_populations,
)
from .template_engine import RulePack, count_expansions, data_path, expand_exhaustive, write_corpus

HEADER_PREFIX = "# semrobe-config "
SEED_ENV = "SEMROBE_SEED"


class CliError(SemRobeError):
    """Bad invocation: missing inputs, conflicting flags."""


# --- config headers ---------------------------------------------------------


def _header_dict(args: argparse.Namespace) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    return {"command": args.command, "config": cfg, "seed": args.seed, "version": __version__}


def header_line(args: argparse.Namespace) -> str:
    return HEADER_PREFIX + json.dumps(_header_dict(args), sort_keys=True) + "\n"


def read_header(path) -> dict:
    """Recover the config header from any file the CLI wrote."""
    path = Path(path)
    if path.is_dir():
        path = path / "population.json"
    text = path.read_text(encoding="utf-8")
    if text.startswith(HEADER_PREFIX):
        return json.loads(text.splitlines()[0][len(HEADER_PREFIX) :])
    try:
        doc = json.loads(text)
    except json.JSONDecodeError:
        doc = None
    if isinstance(doc, dict):
        hdr = doc.get("header") or doc.get("config", {}).get("header")
        if hdr:
            return hdr
    raise CliError(f"{path}: no semrobe config header found")


def _write_json(path, doc: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --- validation helpers -------------------------------------------------------


def _need_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"{what} not found: {path}")
    return p


def _out_file(path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _pair(text: str, what: str) -> tuple[str, str]:
    name, sep, value = text.partition("=")
    if not sep or not name or not value:
        raise CliError(f"{what} expects NAME=PATH, got {text!r}")
    return name, value


def _embeddings_path(args) -> str:
    return args.embeddings or str(data_path("demo_embeddings.txt"))


def _hidden(text: str) -> tuple[int, ...]:
    try:
        sizes = tuple(int(h) for h in text.split(",") if h.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"hidden sizes must be comma-separated integers, got {text!r}")
    return sizes


def _fmt(x: float) -> str:
    return "nan" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.6f}"


# --- expand -------------------------------------------------------------------


def cmd_expand(args) -> int:
    templates = _need_file(args.templates or data_path("templates.tsv"), "template file")
    lexicons = _need_file(args.lexicons or data_path("lexicons.txt"), "lexicon file")
    out = _out_file(args.out)
    pack = RulePack.load(templates, lexicons)
    chosen = pack.templates
    if args.phenomenon:
        chosen = [t for t in chosen if t.phenomenon in set(args.phenomenon)]
    if args.template_split != "all":
        train_t, eval_t = split_templates(chosen)
        chosen = train_t if args.template_split == "train" else eval_t
    if not chosen:
        raise CliError("no templates selected")

    samples = []
    for i, t in enumerate(chosen):
        total = count_expansions(t, pack.lexicons)
        if args.sample:
            batch = sample_templates([t], pack, args.sample, args.seed + 7919 * i)
        else:
            batch = expand_exhaustive(t, pack.lexicons, cap=args.cap)
        samples += batch
        print(f"{t.id}\t{t.phenomenon}\t{total}\t{len(batch)}")
    write_corpus(samples, out, header_line(args), provenance=args.provenance)
    print(f"wrote {len(samples)} samples to {out}", file=sys.stderr)
    return 0


# --- train --------------------------------------------------------------------


def _train_member(job):
    kind, x, y, seed, settings = job
    m = init_model(settings["length"], settings["dim"], settings["hidden"], seed=seed)
    tcfg = TrainConfig(
        epochs=settings["epochs"],
        batch_size=settings["batch_size"],
        learning_rate=settings["learning_rate"],
        seed=seed,
        optimizer=settings["optimizer"],
    )
    if kind == "ibp":
        rcfg = RobustTrainConfig(
            settings["epsilon"], kappa=settings["kappa"], ramp_epochs=settings["ramp_epochs"], base=tcfg
        )
        return train_robust(m, (x, y), rcfg)
    return train(m, (x, y), tcfg)


def population_name(args) -> str:
    if args.name:
        return args.name
    if args.ibp is not None:
        return f"ibp_{args.ibp:g}"
    return "augmented" if args.augment else "vanilla"


def cmd_train(args) -> int:
    corpus_path = _need_file(args.corpus, "corpus")
    emb_path = _need_file(_embeddings_path(args), "embedding file")
    rule_path = _need_file(args.augment[0], "augmentation corpus") if args.augment else None
    if args.population < 1:
        raise CliError("--population must be >= 1")
    if args.ibp is not None and args.ibp < 0:
        raise CliError("--ibp epsilon must be >= 0")
    if args.ibp is not None and args.augment:
        warnings.warn("--ibp combined with --augment is an untested combination", stacklevel=1)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    table = load_embeddings(emb_path)
    corpus = load_corpus(corpus_path)
    if rule_path is not None:
        try:
            factor = int(args.augment[1])
        except ValueError:
            raise CliError(f"augment factor must be an integer, got {args.augment[1]!r}")
        corpus = augment(corpus, AugmentSpec(factor, load_corpus(rule_path), args.seed))
    x = corpus.embed(table, args.length).astype(np.float32)
    y = corpus.labels
    settings = {
        "length": args.length,
        "dim": table.dim,
        "hidden": tuple(args.hidden),
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "learning_rate": args.lr,
        "optimizer": args.optimizer,
        "epsilon": args.ibp or 0.0,
        "kappa": args.kappa,
        "ramp_epochs": args.ramp_epochs,
    }
    kind = "ibp" if args.ibp is not None else "vanilla"
    jobs = [(kind, x, y, args.seed + i, settings) for i in range(args.population)]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as ex:
            results = list(ex.map(_train_member, jobs))
    else:
        results = [_train_member(j) for j in jobs]

    header = header_line(args)
    members = []
    for i, res in enumerate(results):
        model_file = f"model_{i:03d}.srm"
        log_file = f"train_{i:03d}.tsv"
        save_model(res.model, out / model_file)
        res.write_log(out / log_file, header)
        last = res.log[-1]
        members.append(
            {
                "model": model_file,
                "log": log_file,
                "seed": args.seed + i,
                "final_loss": round(last.loss, 6),
                "final_train_acc": round(last.train_acc, 6),
                "param_norm": round(param_norm(res.model), 6),
            }
        )
    if args.ibp is not None:
        epsilon = args.ibp
    else:
        epsilon = None if args.augment else 0.0
    _write_json(
        out / "population.json",
        {
            "header": _header_dict(args),
            "name": population_name(args),
            "epsilon": epsilon,
            "n_train": len(corpus),
            "members": members,
        },
    )
    print(f"trained {len(members)} model(s) on {len(corpus)} samples -> {out}", file=sys.stderr)
    return 0


# --- certify ------------------------------------------------------------------


def cmd_certify(args) -> int:
    model = load_model(_need_file(args.model, "model file"))
    corpus = load_corpus(_need_file(args.corpus, "corpus"))
    table = load_embeddings(_need_file(_embeddings_path(args), "embedding file"))
    out = _out_file(args.out)
    norm = parse_norm(args.norm)
    epsilons = args.epsilon
    if any(e < 0 for e in epsilons):
        raise CliError("epsilon must be >= 0")
    if args.mode == "continuous" and norm != math.inf:
        raise NormNotSupported("continuous certification propagates L-inf boxes only")
    if args.mode == "discrete" and not args.single_substitution and args.scope == "whole_sequence" and norm != math.inf:
        raise NormNotSupported("whole-sequence discrete enumeration requires L-inf; use --scope per_word or --single-substitution")

    length = model.input_shape[0]
    ids = corpus.ids()
    rows = []
    summary = []
    if args.mode == "continuous":
        x = corpus.embed(table, length)
        for eps in epsilons:
            certs = certify_batch(model, x, eps, corpus.labels)
            for sid, c in zip(ids, certs):
                verdict = "misclassified" if c.misclassified else c.verdict
                rows.append((sid, eps, verdict, c.margin))
            ok = sum(c.verdict == "certified" for c in certs)
            summary.append(f"epsilon={eps:g}: certified {ok}/{len(certs)} ({ok / len(certs):.4f})")
    else:
        for eps in epsilons:
            spec = BallSpec(eps, norm, args.scope)
            ok = 0
            for sid, sample in zip(ids, corpus.samples):
                try:
                    res = check_discrete_robustness(
                        model, table, sample.text, spec, cap=args.cap, single_substitution=args.single_substitution
                    )
                except ExpansionCapExceeded:
                    rows.append((sid, eps, "cap_exceeded", float("nan")))
                    continue
                ok += res.robust
                rows.append((sid, eps, "robust" if res.robust else "not_robust", res.min_margin))
            summary.append(f"epsilon={eps:g}: robust {ok}/{len(corpus)} ({ok / len(corpus):.4f})")

    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header_line(args))
        fh.write("sample_id\tepsilon\tverdict\tmargin\n")
        for sid, eps, verdict, margin in rows:
            fh.write(f"{sid}\t{eps:g}\t{verdict}\t{_fmt(margin)}\n")
    for line in summary:
        print(line)
    return 0


# --- assess -------------------------------------------------------------------


def _model_files(specs: list[str]) -> tuple[list[Path], dict]:
    """Expand model arguments; a training directory contributes all its members."""
    files, meta = [], {}
    for spec in specs:
        p = Path(spec)
        if p.is_dir():
            manifest = p / "population.json"
            if not manifest.is_file():
                raise CliError(f"{p}: directory has no population.json")
            doc = json.loads(manifest.read_text(encoding="utf-8"))
            meta.setdefault("name", doc.get("name"))
            meta.setdefault("epsilon", doc.get("epsilon"))
            files += [p / m["model"] for m in doc["members"]]
        else:
            files.append(_need_file(p, "model file"))
    return files, meta


def cmd_assess(args) -> int:
    base = load_corpus(_need_file(args.base_corpus, "base corpus"), split="test")
    rules = {}
    for item in args.rule:
        name, path = _pair(item, "--rule")
        rules[name] = load_corpus(_need_file(path, f"rule corpus {name!r}"), split="test")
    if not rules:
        raise CliError("at least one --rule NAME=PATH is required")
    if bool(args.models) == bool(args.predictions_base):
        raise CliError("give either --models or --predictions-base (with --predictions-rule)")
    out_json = _out_file(f"{args.out}.json")
    out_tsv = _out_file(f"{args.out}.tsv")

    meta = {}
    models_out = []
    if args.models:
        files, meta = _model_files(args.models)
        table = load_embeddings(_need_file(_embeddings_path(args), "embedding file"))
        embedded: dict = {}
        per_model = []
        for f in files:
            m = load_model(f)
            length = m.input_shape[0]
            if length not in embedded:
                embedded[length] = (
                    base.embed(table, length),
                    {k: c.embed(table, length) for k, c in rules.items()},
                )
            xb, xr = embedded[length]
            pred_base = dict(zip(base.ids(), predict(m, xb).tolist()))
            pred_rule = {k: dict(zip(rules[k].ids(), predict(m, xr[k]).tolist())) for k in rules}
            per_model.append((pred_base, pred_rule))
            rec_acc = {k: assess_global(pred_base, pred_rule[k], base.labels, rules[k].labels, args.tau, k) for k in rules}
            entry = {"model": str(f), "accuracy": next(iter(rec_acc.values())).records[0].p}
            entry.update({k: r.records[0].p_prime for k, r in rec_acc.items()})
            entry["param_norm"] = param_norm(m)
            models_out.append(entry)
        if len(files) == 1:
            pred_base, pred_rule = per_model[0]
            records = [
                assess_global(pred_base, pred_rule[k], base.labels, rules[k].labels, args.tau, k).records[0]
                for k in rules
            ]
        else:
            records = [
                assess_population(
                    [e["accuracy"] for e in models_out],
                    [e[k] for e in models_out],
                    args.tau,
                    k,
                    n_base=len(base),
                    n_rule=len(rules[k]),
                    seed=args.seed,
                )
                for k in rules
            ]
    else:
        preds_base = PredictionFile.load(_need_file(args.predictions_base, "base prediction file"))
        preds_rule = {}
        for item in args.predictions_rule:
            name, path = _pair(item, "--predictions-rule")
            preds_rule[name] = PredictionFile.load(_need_file(path, f"prediction file {name!r}"))
        missing = sorted(set(rules) - set(preds_rule))
        if missing:
            raise CliError(f"no --predictions-rule for {missing}")
        records = [
            assess_global(preds_base, preds_rule[k], base.labels, rules[k].labels, args.tau, k).records[0]
            for k in rules
        ]
        entry = {"model": str(args.predictions_base), "accuracy": records[0].p}
        entry.update({r.phenomenon: r.p_prime for r in records})
        models_out.append(entry)

    name = args.name or meta.get("name") or Path(args.out).name
    epsilon = args.epsilon if args.epsilon is not None else meta.get("epsilon")
    report = RobustnessReport(
        records,
        {"header": _header_dict(args), "population": name, "epsilon": epsilon, "tau": args.tau},
        models_out,
    )
    report.save_json(out_json)
    with open(out_tsv, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header_line(args))
        fh.write(report.render())
    sys.stdout.write(report.render())
    return 0


# --- report -------------------------------------------------------------------


def plot_table(reports: list[RobustnessReport]) -> list[tuple[float, float, float]]:
    """(epsilon, mean accuracy, mean param_norm) per distinct epsilon; reports
    without an epsilon (e.g. augmented populations) are left out."""
    by_eps: dict[float, list[dict]] = {}
    for r in reports:
        eps = r.config.get("epsilon")
        if eps is None:
            continue
        by_eps.setdefault(float(eps), []).extend(r.models)
    rows = []
    for eps in sorted(by_eps):
        ms = by_eps[eps]
        norms = [m["param_norm"] for m in ms if "param_norm" in m]
        rows.append(
            (eps, float(np.mean([m["accuracy"] for m in ms])), float(np.mean(norms)) if norms else float("nan"))
        )
    return rows


def cmd_report(args) -> int:
    reports = [RobustnessReport.load_json(_need_file(p, "report")) for p in args.reports]
    out = _out_file(args.out)
    populations: dict[str, dict[str, list[float]]] = {}
    for path, r in zip(args.reports, reports):
        name = r.config.get("population") or Path(path).stem
        if name in populations:
            raise CliError(f"duplicate population name {name!r}")
        if not r.models:
            raise InsufficientSamples(f"{path}: report holds no per-model results")
        metrics = [k for k in r.models[0] if k != "model"]
        populations[name] = {k: [float(m[k]) for m in r.models] for k in metrics}
    if args.reference and args.reference not in populations:
        raise CliError(f"reference population {args.reference!r} not among {sorted(populations)}")
    table = compare_populations(
        populations, reference=args.reference, alpha=args.alpha, seed=args.seed, n_resamples=args.n_resamples
    )
    header = header_line(args)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header)
        fh.write(table.to_tsv())
    if args.table:
        with open(_out_file(args.table), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(header)
            fh.write(table.render())
    if args.plot:
        with open(_out_file(args.plot), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(header)
            fh.write("epsilon\tmean_accuracy\tmean_param_norm\n")
            for eps, acc, norm in plot_table(reports):
                fh.write(f"{eps:g}\t{_fmt(acc)}\t{_fmt(norm)}\n")
    sys.stdout.write(table.render())
    return 0


# --- embedding utilities ------------------------------------------------------------


def cmd_diameter(args) -> int:
    table = load_embeddings(_need_file(_embeddings_path(args), "embedding file"))
    print(f"{diameter(table, parse_norm(args.norm)):.2f}")
    return 0


def cmd_neighbors(args) -> int:
    table = load_embeddings(_need_file(_embeddings_path(args), "embedding file"))
    out = _out_file(args.out)
    spec = BallSpec(args.epsilon, args.norm, "per_word")
    words = args.words or list(table.vocab)
    tmp = out.with_name(out.name + ".part")
    write_neighbor_dump(table, words, spec, tmp)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header_line(args))
        fh.write(tmp.read_text(encoding="utf-8"))
    tmp.unlink()
    return 0


# --- rerun ----------------------------------------------------------------------


def cmd_rerun(args) -> int:
    hdr = read_header(args.file)
    command = hdr["command"]
    if command not in COMMANDS:
        raise CliError(f"header names unknown command {command!r}")
    ns = argparse.Namespace(**hdr["config"])
    ns.func = COMMANDS[command]
    if command == "train":
        ns.hidden = tuple(ns.hidden)
    return ns.func(ns)


COMMANDS = {
    "expand": cmd_expand,
    "train": cmd_train,
    "certify": cmd_certify,
    "assess": cmd_assess,
    "report": cmd_report,
    "diameter": cmd_diameter,
    "neighbors": cmd_neighbors,
}


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise CliError(f"{SEED_ENV} must be an integer, got {raw!r}")


def build_parser(seed: int = 0) -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="semrobe", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"semrobe {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=seed, help=f"global seed (default from ${SEED_ENV}, else 0)")
        return p

    p = common(sub.add_parser("expand", help="expand a template pack into a labelled corpus"))
    p.add_argument("--templates", help="template TSV (default: bundled pack)")
    p.add_argument("--lexicons", help="lexicon file (default: bundled lexicons)")
    p.add_argument("--out", required=True)
    p.add_argument("--sample", type=int, help="draw this many texts per template instead of expanding fully")
    p.add_argument("--phenomenon", action="append", help="keep only templates with this tag (repeatable)")
    p.add_argument("--template-split", choices=("all", "train", "eval"), default="all",
                   help="alternating disjoint template split, per phenomenon")
    p.add_argument("--provenance", action="store_true", help="add a third provenance column")
    p.add_argument("--cap", type=int, default=10**6, help="exhaustive expansion cap per template")
    p.set_defaults(func=cmd_expand)

    p = common(sub.add_parser("train", help="train a seeded population of classifiers"))
    p.add_argument("--corpus", required=True)
    p.add_argument("--embeddings", help="embedding file (default: bundled demo table)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--population", type=int, default=1)
    p.add_argument("--ibp", type=float, metavar="EPS", help="IBP training at this L-inf radius")
    p.add_argument("--augment", nargs=2, metavar=("RULE_CORPUS", "FACTOR"))
    p.add_argument("--name", help="population name recorded for reports")
    p.add_argument("--length", type=int, default=25)
    p.add_argument("--hidden", type=_hidden, default=(32, 32))
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--optimizer", choices=("sgd", "sgd_momentum"), default="sgd_momentum")
    p.add_argument("--kappa", type=float, default=0.5)
    p.add_argument("--ramp-epochs", type=int, help="epsilon ramp length (default: half the epochs)")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("certify", help="per-sample continuous or discrete robustness verdicts"))
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--epsilon", type=float, action="append", required=True, help="repeatable")
    p.add_argument("--mode", choices=("continuous", "discrete"), default="continuous")
    p.add_argument("--norm", default="inf")
    p.add_argument("--scope", choices=("whole_sequence", "per_word"), default="whole_sequence")
    p.add_argument("--single-substitution", action="store_true")
    p.add_argument("--cap", type=int, default=10**6)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_certify)

    p = common(sub.add_parser("assess", help="semantic robustness of models or external predictions"))
    p.add_argument("--models", nargs="+", help="model files or training directories")
    p.add_argument("--predictions-base", help="external predictions on the base corpus")
    p.add_argument("--predictions-rule", action="append", default=[], metavar="NAME=PATH")
    p.add_argument("--base-corpus", required=True)
    p.add_argument("--rule", action="append", default=[], metavar="NAME=PATH", help="rule corpus per phenomenon")
    p.add_argument("--embeddings")
    p.add_argument("--tau", type=float, default=DEFAULT_TAU)
    p.add_argument("--name", help="population name (default: from the training manifest)")
    p.add_argument("--epsilon", type=float, help="IBP radius recorded for plots")
    p.add_argument("--out", required=True, help="output prefix; writes PREFIX.json and PREFIX.tsv")
    p.set_defaults(func=cmd_assess)

    p = common(sub.add_parser("report", help="compare populations across assess reports"))
    p.add_argument("reports", nargs="+")
    p.add_argument("--reference", help="population tested against (default: first)")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--n-resamples", type=int, default=10_000)
    p.add_argument("--out", required=True, help="comparison TSV")
    p.add_argument("--table", help="also write the aligned text table here")
    p.add_argument("--plot", help="plot data TSV: epsilon, mean accuracy, mean param_norm")
    p.set_defaults(func=cmd_report)

    p = common(sub.add_parser("diameter", help="brute-force embedding diameter"))
    p.add_argument("--embeddings")
    p.add_argument("--norm", default="inf")
    p.set_defaults(func=cmd_diameter)

    p = common(sub.add_parser("neighbors", help="dump per-word discrete-ball neighbours"))
    p.add_argument("--embeddings")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--norm", default="inf")
    p.add_argument("--words", nargs="*")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_neighbors)

    p = sub.add_parser("rerun", help="replay the run recorded in a file's config header")
    p.add_argument("file")
    p.set_defaults(func=cmd_rerun, seed=None)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser(default_seed()).parse_args(argv)
        return args.func(args)
    except (SemRobeError, OSError, ValueError) as exc:
        print(f"semrobe: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
