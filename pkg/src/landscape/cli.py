"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .evaluation import (
    ExperimentSpec,
    OracleModel,
    anlp,
    export_landscape,
    run_experiment,
    summary_table,
    write_metrics,
)
from .featurize import (
    DEFAULT_TRIM,
    DataError,
    FeatureVector,
    RawRecord,
    Vocabulary,
    as_batch,
    build_vocabulary,
    encode,
    encode_all,
    read_log,
    write_log,
)
from .models import ModelFormatError, NumericError, load_model, save_model
from .nonparametric import fit_gaussian_to_km, kl_to_gaussian, km_fit
from .sim import SimConfig, generate, oracle_anlp, read_truths, write_truths
from .training import TrainConfig, train

log = logging.getLogger("landscape")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}; {' '.join(self.format_usage().split())}")


def _dump_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def _parse_bins(spec: str | None) -> dict:
    """``"SlotWidth=0,300,600;SlotHeight=0,90,250"`` -> edge lists."""
    if not spec:
        return {}
    out = {}
    for part in spec.split(";"):
        name, sep, edges = part.partition("=")
        if not sep:
            raise UsageError(f"bad --bins entry {part!r}")
        out[name.strip()] = sorted(float(e) for e in edges.split(",") if e.strip())
    return out


def _parse_features(spec: str) -> tuple[tuple[str, str], ...]:
    pairs = []
    for item in spec.split(";") if spec else ():
        name, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"bad feature {item!r}; expected field=value")
        pairs.append((name, value))
    return tuple(pairs)


def _parse_range(spec: str) -> tuple[int, int]:
    lo, sep, hi = spec.partition(":")
    if not sep:
        raise UsageError("--range must look like LO:HI")
    lo_i, hi_i = int(lo), int(hi)
    if hi_i < lo_i:
        raise UsageError("empty --range")
    return lo_i, hi_i


def _train_values(args) -> dict[str, str]:
    values = cfgmod.read_kv(args.config) if args.config else {}
    flags = {
        "learning_rate": args.lr, "batch_size": args.batch, "l2": args.l2,
        "max_epochs": args.epochs, "early_stop_patience": args.patience,
        "early_stop_min_delta": args.min_delta, "seed": args.seed, "K": args.k,
        "H": args.hidden, "init_scale": args.init_scale, "price_scale": args.price_scale,
    }
    values.update({k: str(v) for k, v in flags.items() if v is not None})
    return values


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_vocab(args, out: Path) -> int:
    records = read_log(args.data)
    vocab = build_vocabulary(records, args.trim, _parse_bins(args.bins))
    vocab.save(out / "vocab.tsv")
    print(f"dimension {vocab.dimension}")
    return EXIT_OK


def cmd_train(args, out: Path) -> int:
    values = _train_values(args)
    config = cfgmod.build(TrainConfig, values, cfgmod.TRAIN_ALIASES)
    model = args.model or values.get("model")
    if model not in ("cr", "pcr", "mcnet"):
        raise UsageError("train needs --model cr|pcr|mcnet")
    records = read_log(args.data)
    if args.vocab:
        vocab = Vocabulary.load(args.vocab)
    else:
        vocab = build_vocabulary(records, args.trim, _parse_bins(args.bins))
    data = as_batch(encode_all(records, vocab), vocab.dimension)
    valid = None
    if args.valid:
        valid = as_batch(encode_all(read_log(args.valid), vocab), vocab.dimension)
    from .evaluation import anlp_value

    res = train(model, data, config, valid, anlp_value)
    vocab.save(out / "vocab.tsv")
    (out / "model.json").write_bytes(save_model(res.params, vocab.checksum()))
    write_metrics(out / "metrics.csv", res.epochs)
    print(f"{model}: {len(res.history)} epochs, final train loss {res.history[-1]:.6f}")
    return EXIT_OK


def _vocab_for_model(args) -> Vocabulary:
    path = args.vocab or os.path.join(os.path.dirname(os.path.abspath(args.model_file)), "vocab.tsv")
    return Vocabulary.load(path)


def cmd_eval(args, out: Path) -> int:
    vocab = _vocab_for_model(args)
    params, _ = load_model(Path(args.model_file).read_bytes(), vocab.checksum())
    records = read_log(args.data)
    data = as_batch(encode_all(records, vocab), vocab.dimension)
    doc = {"model": anlp(params, data).to_dict()}
    if args.truth:
        truths = read_truths(args.truth)
        if len(truths) != len(records):
            raise DataError("truth file does not align with the log")
        doc["oracle"] = anlp(OracleModel(truths), data).to_dict()
    _dump_json(out / "report.json", doc)
    print(f"ANLP {doc['model']['anlp']:.6f}")
    return EXIT_OK


def cmd_simulate(args, out: Path) -> int:
    values = cfgmod.read_kv(args.config) if args.config else {}
    if args.seed is not None:
        values["seed"] = str(args.seed)
    if args.n_records is not None:
        values["n_records"] = str(args.n_records)
    values = {k[4:] if k.startswith("sim.") else k: v for k, v in values.items()}
    config = cfgmod.build(SimConfig, values)
    res = generate(config)
    write_log(out / "log.tsv", res.records)
    write_truths(out / "truth.tsv", res.truths)
    res.vocab.save(out / "vocab.tsv")
    summary = {
        "n_records": config.n_records,
        "win_rate": float(np.mean([o.won for o in res.observations])),
        "oracle_anlp": oracle_anlp(res.observations, res.truths),
    }
    _dump_json(out / "sim.json", summary)
    print(f"{config.n_records} records, win rate {summary['win_rate']:.4f}")
    return EXIT_OK


def cmd_km(args, out: Path) -> int:
    records = read_log(args.data)
    est = km_fit(_price_only(records))
    (out / "km.csv").write_text(export_landscape(est, None, (0, est.max_bid)))
    _dump_json(out / "km.json", {
        "prices": est.prices.tolist(), "pmf": est.pmf.tolist(),
        "tail_mass": est.tail_mass, "max_bid": est.max_bid,
    })
    print(f"tail mass beyond max bid {est.max_bid}: {est.tail_mass:.6f}")
    return EXIT_OK


def _price_only(records: list[RawRecord]):
    """Feature-free observations; KM ignores features."""
    vocab = Vocabulary({}, 1, 0, {})
    return as_batch([encode(RawRecord((), r.bid_price, r.won, r.winning_price), vocab)
                     for r in records], 1)


def cmd_fitgauss(args, out: Path) -> int:
    est = km_fit(_price_only(read_log(args.data)))
    mu, sigma = fit_gaussian_to_km(est)
    doc = {"mu": mu, "sigma": sigma, "tail_mass": est.tail_mass,
           "kl": kl_to_gaussian(est, mu, sigma)}
    _dump_json(out / "fitgauss.json", doc)
    print(f"mu {mu:.4f} sigma {sigma:.4f}")
    return EXIT_OK


def cmd_export(args, out: Path) -> int:
    vocab = _vocab_for_model(args)
    params, _ = load_model(Path(args.model_file).read_bytes(), vocab.checksum())
    rec = RawRecord(_parse_features(args.features), 0, False)
    x: FeatureVector = encode(rec, vocab).x
    (out / "landscape.csv").write_text(export_landscape(params, x, _parse_range(args.range)))
    return EXIT_OK


def cmd_experiment(args, out: Path) -> int:
    values = cfgmod.read_kv(args.spec)
    spec = ExperimentSpec.from_kv(values, base_dir=os.path.dirname(os.path.abspath(args.spec)))
    reports = run_experiment(spec, out, threads=args.threads)
    print(summary_table(reports))
    return EXIT_OK


COMMANDS = {
    "vocab": cmd_vocab, "train": cmd_train, "eval": cmd_eval, "simulate": cmd_simulate,
    "km": cmd_km, "fitgauss": cmd_fitgauss, "export": cmd_export, "experiment": cmd_experiment,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="landscape", description="Bid landscape forecasting from censored logs.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, data_required=False):
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--threads", type=int, default=os.cpu_count() or 1)
        sp.add_argument("--seed", type=int)
        if data_required is not None:
            sp.add_argument("--data", required=data_required)

    sp = sub.add_parser("vocab", help="build a trimmed vocabulary from a log")
    common(sp, True)
    sp.add_argument("--trim", type=int, default=DEFAULT_TRIM)
    sp.add_argument("--bins", help="numeric-field bin edges, e.g. 'W=0,300,600;H=0,250'")

    sp = sub.add_parser("train", help="fit CR, P-CR or MCNet")
    common(sp, True)
    sp.add_argument("--model", choices=("cr", "pcr", "mcnet"))
    sp.add_argument("--config")
    sp.add_argument("--vocab")
    sp.add_argument("--valid", help="log scored for validation ANLP each epoch")
    sp.add_argument("--trim", type=int, default=DEFAULT_TRIM)
    sp.add_argument("--bins")
    sp.add_argument("--k", type=int)
    sp.add_argument("--hidden", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--batch", type=int)
    sp.add_argument("--l2", type=float)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--patience", type=int)
    sp.add_argument("--min-delta", type=float)
    sp.add_argument("--init-scale", type=float)
    sp.add_argument("--price-scale", type=float)

    sp = sub.add_parser("eval", help="ANLP of a saved model on a log")
    common(sp, True)
    sp.add_argument("--model-file", required=True)
    sp.add_argument("--vocab")
    sp.add_argument("--truth", help="sidecar truth file; adds the oracle ANLP")

    sp = sub.add_parser("simulate", help="generate a synthetic auction log")
    common(sp, None)
    sp.add_argument("--config")
    sp.add_argument("--n-records", type=int)

    sp = sub.add_parser("km", help="Kaplan-Meier landscape of a log")
    common(sp, True)

    sp = sub.add_parser("fitgauss", help="KL-closest Gaussian to the Kaplan-Meier landscape")
    common(sp, True)

    sp = sub.add_parser("export", help="landscape CSV for one feature profile")
    common(sp, None)
    sp.add_argument("--model-file", required=True)
    sp.add_argument("--vocab")
    sp.add_argument("--features", default="", help="'field=value;field=value'")
    sp.add_argument("--range", default="0:300")

    sp = sub.add_parser("experiment", help="multi-seed train/select/test run")
    common(sp, None)
    sp.add_argument("--spec", "--config", dest="spec", required=True)
    return p


def main(argv=None) -> int:
    level = os.environ.get("LANDSCAPE_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, FloatingPointError, OverflowError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ModelFormatError, cfgmod.ConfigError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
