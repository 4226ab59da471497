"""Command line driver.

Every subcommand reads an optional JSON config and writes a CSV and a JSON
report into ``--out``. Exit status: 0 pass, 1 check failure, 2 usage error.

Config keys (top level): ``T``, ``d``, ``p``, ``layers``, ``heads``, ``vocab``,
``num_classes``, ``pe``, ``activation``, ``transform``, ``seed``, ``ln_eps``.
Sections: ``train`` (optimizer fields plus ``target_accuracy``, ``execution``),
``data`` (``kind``, ``n``, ``seed``, ``noise``, ``split`` or ``path``),
``verify`` (``trials``, ``seed``), ``bench`` (``reps``, ``batch``) and
``lsvd`` (``m``, ``n``, ``p``, ``rank``, ``k``, ``seed``, ``transform``).
"""

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import harness
from .checkpoint import save_checkpoint
from .encoder import Model, ModelConfig
from .exceptions import ConfigError, DivisibilityError, ShapeError, TransformError
from .ltransform import l_inverse, make_transform
from .lsvd import l_svd, truncated_l_svd, tubal_rank
from .trainer import TrainConfig, evaluate, read_dataset, synth_dataset, train, write_history

MODEL_KEYS = ("T", "d", "p", "layers", "heads", "vocab", "num_classes", "pe", "activation",
              "transform", "seed", "ln_eps")
REQUIRED = ("T", "d", "p")
SECTIONS = {
    "train": set(TrainConfig.__dataclass_fields__) | {"target_accuracy", "execution"},
    "data": {"kind", "n", "seed", "noise", "split", "path"},
    "verify": {"trials", "seed"},
    "bench": {"reps", "batch"},
    "lsvd": {"m", "n", "p", "rank", "k", "seed", "transform"},
}


class UsageError(Exception):
    pass


def load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError("config must be a JSON object")
    for key, val in data.items():
        if key in SECTIONS:
            if not isinstance(val, dict):
                raise UsageError(f"config field '{key}' must be an object")
            extra = set(val) - SECTIONS[key]
            if extra:
                raise UsageError(f"unknown config field '{key}.{sorted(extra)[0]}'")
        elif key not in MODEL_KEYS:
            raise UsageError(f"unknown config field '{key}'")
    return data


def model_config(data):
    if not any(k in data for k in MODEL_KEYS):
        return harness.default_config()
    for k in REQUIRED:
        if k not in data:
            raise UsageError(f"missing required config field '{k}'")
    try:
        return ModelConfig(**{k: data[k] for k in MODEL_KEYS if k in data})
    except ConfigError as exc:
        raise UsageError(f"config field '{exc.field}': {exc}") from None
    except DivisibilityError as exc:
        raise UsageError(f"config field 'p': {exc}") from None
    except (TransformError, ShapeError, OSError, ValueError) as exc:
        raise UsageError(f"config field 'transform': {exc}") from None


def _section(data, name):
    return dict(data.get(name, {}))


def write_report(out_dir, stem, doc, rows):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, stem + ".json"), "w") as fh:
        json.dump(doc, fh, indent=2)
    with open(os.path.join(out_dir, stem + ".csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


# -- subcommands -----------------------------------------------------------------------


def cmd_verify(data, args):
    cfg = model_config(data)
    sec = _section(data, "verify")
    report = harness.verify_equivalence(cfg, trials=sec.get("trials", 20), seed=sec.get("seed", 0))
    rows = [("check", "trial", "rel_error", "passed")]
    rows += [(e["check"], e["trial"], e["rel_error"], e["passed"]) for e in report.entries]
    write_report(args.out, "verify", report.to_dict(), rows)
    for check, err in report.worst_by_check().items():
        print(f"{'PASS' if err <= report.tol else 'FAIL'} {check}: max rel error {err:.3e}")
    return 0 if report.passed else 1


def _datasets(data, cfg):
    sec = _section(data, "data")
    if "path" in sec:
        ds = read_dataset(sec["path"], vocab=cfg.vocab, num_classes=cfg.num_classes)
    else:
        ds = synth_dataset(sec.get("kind", "keyword"), sec.get("n", 2000), cfg.T, cfg.vocab,
                           cfg.num_classes, seed=sec.get("seed", 0), noise=sec.get("noise", 0.0))
    return ds.split(sec.get("split", 0.8), seed=sec.get("seed", 0))


def cmd_train(data, args):
    cfg = model_config(data)
    sec = _section(data, "train")
    target = sec.pop("target_accuracy", None)
    execution = sec.pop("execution", "batched")
    try:
        tcfg = TrainConfig(**sec)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"config section 'train': {exc}") from None
    try:
        train_ds, eval_ds = _datasets(data, cfg)
    except (OSError, ValueError) as exc:
        raise UsageError(f"config section 'data': {exc}") from None
    model, history = train(Model.init(cfg), train_ds, tcfg, eval_dataset=eval_ds, execution=execution,
                           callback=lambda r: print(f"epoch {r['epoch']}: loss {r['loss']:.4f} "
                                                    f"eval acc {r['eval_accuracy']:.4f}"))
    os.makedirs(args.out, exist_ok=True)
    write_history(history, os.path.join(args.out, "history.csv"), os.path.join(args.out, "history.json"))
    save_checkpoint(model, os.path.join(args.out, "checkpoint.json"))
    acc = evaluate(model, eval_ds)[1]
    print(f"held-out accuracy {acc:.4f}")
    return 0 if target is None or acc >= target else 1


def cmd_count_params(data, args):
    rep = harness.count_params(model_config(data))
    rows = [("component", "count")] + rep.rows() + [("total", rep.total)]
    write_report(args.out, "params", rep.to_dict(), rows)
    for name, n in rep.rows():
        print(f"{name:22s} {n:>12,d}")
    print(f"{'total':22s} {rep.total:>12,d}")
    print(f"encoder ratio vs p=1: {rep.ratio:.4f}")
    return 0 if rep.total == sum(n for _, n in rep.rows()) else 1


def cmd_flops(data, args):
    rep = harness.flop_model(model_config(data))
    rows = [("operation", "standard", "tensor")] + list(rep.rows)
    rows.append(("total", rep.standard_total, rep.tensor_total))
    write_report(args.out, "flops", rep.to_dict(), rows)
    for name, s, t in rows[1:]:
        print(f"{name:20s} {s:>16} {t:>16}")
    return 0


def cmd_bench(data, args):
    cfg = model_config(data)
    sec = _section(data, "bench")
    rep = harness.bench(cfg, reps=sec.get("reps", 3), batch=sec.get("batch", 8))
    rows = [("mode", "sample", "seconds")]
    for mode, res in rep["modes"].items():
        rows += [(mode, i, s) for i, s in enumerate(res["samples"])]
        rows.append((mode, "median", res["median"]))
        print(f"{mode:10s} median {res['median'] * 1e3:.2f} ms")
    write_report(args.out, "bench", rep, rows)
    print(f"outputs identical: {rep['identical_outputs']}")
    return 0 if rep["identical_outputs"] else 1


def cmd_lsvd_demo(data, args):
    sec = _section(data, "lsvd")
    m, n, p = sec.get("m", 6), sec.get("n", 5), sec.get("p", data.get("p", 4))
    rank, seed = sec.get("rank", 2), sec.get("seed", 0)
    k = sec.get("k", rank)
    if not 1 <= rank <= min(m, n) or not 1 <= k <= min(m, n):
        raise UsageError(f"config field 'lsvd.rank'/'lsvd.k' must lie in [1, {min(m, n)}]")
    try:
        L = make_transform(sec.get("transform", "dct"), p)
    except (TransformError, ShapeError, OSError, ValueError) as exc:
        raise UsageError(f"config field 'lsvd.transform': {exc}") from None
    rng = np.random.default_rng(seed)
    a_hat = rng.standard_normal((m, rank, p)).transpose(2, 0, 1) @ rng.standard_normal((p, rank, n))
    a = l_inverse(np.moveaxis(a_hat, 0, -1), L)
    res = l_svd(a, L)
    recon = float(np.linalg.norm(res.reconstruct() - a) / np.linalg.norm(a))
    found = tubal_rank(res)
    _, err = truncated_l_svd(a, L, k)
    doc = {"schema": harness.REPORT_SCHEMA, "kind": "lsvd", "shape": [m, n, p], "rank": rank,
           "tubal_rank": found, "reconstruction_rel_error": recon, "k": k, "truncation_error": err,
           "tube_norms": res.tube_norms().tolist()}
    rows = [("tube", "norm")] + list(enumerate(res.tube_norms().tolist()))
    write_report(args.out, "lsvd", doc, rows)
    print(f"tubal rank {found} (constructed {rank}); reconstruction rel error {recon:.3e}; "
          f"rank-{k} truncation error {err:.3e}")
    return 0 if recon <= 1e-10 and found == rank else 1


COMMANDS = {"verify": cmd_verify, "train": cmd_train, "count-params": cmd_count_params,
            "flops": cmd_flops, "bench": cmd_bench, "lsvd-demo": cmd_lsvd_demo}


def build_parser():
    parser = argparse.ArgumentParser(prog="ltransformer", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--out", default="reports", help="report directory (default: reports)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](load_config(args.config), args)
    except UsageError as exc:
        print(f"ltransformer {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
