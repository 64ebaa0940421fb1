"""Command-line entry point.

Subcommands: gen (dataset generation), train, eval, predict (single
sample, trajectory CSV plus equation in Polish and infix), ood
(coefficient-width sweep), ablate (input-length ablation), attn (fusion
attention export), selftest (fast end-to-end oracle run).  A JSON config
file with "dataset", "model", and "train" sections feeds every command;
its hash is stamped into all artifacts, and eval refuses mismatched
artifacts unless --force is given.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys

import numpy as np
import torch

from . import training
from .data import (DatasetConfig, generate_dataset, read_dataset,
                   write_dataset, write_jsonl)
from .net import (FusionTransformer, ModelConfig, export_attention,
                  load_checkpoint, save_checkpoint)
from .symbolic import (InvalidExpression, from_polish, system_to_infix,
                       words_to_string)
from .training import TrainConfig

log = logging.getLogger("odefusion")


class ConfigError(ValueError):
    pass


def load_config(path: str | None) -> dict:
    """Resolve the three config sections, defaulting missing ones."""
    raw = {}
    if path is not None:
        with open(path) as fh:
            raw = json.load(fh)
        unknown = set(raw) - {"dataset", "model", "train"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    try:
        dataset = DatasetConfig(**{k: tuple(v) if k == "families" else v
                                   for k, v in raw.get("dataset", {}).items()})
        train = TrainConfig(**raw.get("train", {}))
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return {"dataset": dataset, "train": train,
            "model": dict(raw.get("model", {}))}


def config_hash(cfg: dict) -> str:
    blob = json.dumps({"dataset": cfg["dataset"].to_dict(),
                       "train": cfg["train"].to_dict(),
                       "model": cfg["model"]}, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def build_model(cfg: dict, vocab_size: int) -> FusionTransformer:
    mc = ModelConfig.desk(vocab_size=vocab_size,
                          d_max=cfg["dataset"].d_max)
    if cfg["model"]:
        mc = dataclasses.replace(mc, **cfg["model"])
    return FusionTransformer(mc)


def _write_report(path: str, payload: dict, chash: str) -> None:
    payload = {"config_hash": chash, **payload}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    log.info("wrote %s", path)


# --- subcommands ------------------------------------------------------------

def cmd_gen(args) -> int:
    cfg = load_config(args.config)
    chash = config_hash(cfg)
    samples = generate_dataset(cfg["dataset"], master_seed=args.seed)
    write_dataset(args.out, samples, config_hash=chash)
    if args.jsonl:
        write_jsonl(args.jsonl, samples, config_hash=chash)
    log.info("wrote %d samples to %s (config %s)", len(samples), args.out,
             chash)
    return 0


def _load_checked(path: str, chash: str, force: bool):
    samples, file_hash = read_dataset(path)
    if file_hash != chash and not force:
        raise ConfigError(
            f"dataset {path} was generated under config {file_hash}, "
            f"current config is {chash}; pass --force to override")
    return samples


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    chash = config_hash(cfg)
    vocab = cfg["dataset"].vocabulary()
    train_samples = _load_checked(args.data, chash, args.force)
    val_samples = _load_checked(args.val, chash, args.force) \
        if args.val else []
    torch.manual_seed(cfg["train"].seed)
    model = build_model(cfg, len(vocab))
    log.info("training %d parameters on %d samples", model.param_count(),
             len(train_samples))
    result = training.train(model, train_samples, val_samples, vocab,
                            cfg["train"])
    save_checkpoint(args.ckpt, model, vocab_hash=vocab.hash(),
                    extra={"config_hash": chash,
                           "best_val": result.best_val})
    if args.curves:
        training.write_loss_curves(args.curves, result)
    log.info("final train loss %.4f, best val %.4f",
             result.train_curve[-1][2], result.best_val)
    return 0


def _load_model(args, cfg, chash):
    vocab = cfg["dataset"].vocabulary()
    model, header = load_checkpoint(args.ckpt,
                                    expected_vocab_hash=vocab.hash())
    ck_hash = header["extra"].get("config_hash", "")
    if ck_hash != chash and not args.force:
        raise ConfigError(
            f"checkpoint {args.ckpt} was trained under config {ck_hash}, "
            f"current config is {chash}; pass --force to override")
    return model, vocab


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    chash = config_hash(cfg)
    model, vocab = _load_model(args, cfg, chash)
    samples = _load_checked(args.data, chash, args.force)
    report = training.evaluate(model, samples, vocab, seed=args.seed)
    payload = {"metrics": report.to_dict()}
    if args.integrate:
        payload["decoder_comparison"] = training.compare_decoders(
            model, samples, vocab)
    _write_report(args.out, payload, chash)
    if args.csv:
        training.write_metrics_csv(args.csv, {"test": report})
    print(report.to_json())
    return 0


def cmd_predict(args) -> int:
    cfg = load_config(args.config)
    chash = config_hash(cfg)
    model, vocab = _load_model(args, cfg, chash)
    samples = _load_checked(args.data, chash, args.force)
    if not 0 <= args.sample < len(samples):
        raise ConfigError(f"sample index out of range 0..{len(samples) - 1}")
    s = samples[args.sample]
    batch = training.collate([s], vocab)
    with torch.no_grad():
        pred, _ = model(batch["t_input"], batch["u_input"],
                        batch["t_query"],
                        symbol_input=batch["symbol_input"],
                        symbol_mask=batch["symbol_mask"], per_query=True)
        feats = model.fused_features(batch["t_input"], batch["u_input"],
                                     batch["symbol_input"],
                                     batch["symbol_mask"])
        ids, truncated = model.decode_symbol_greedy(
            feats[1], batch["symbol_mask"], vocab.sos_id, vocab.eos_id)
    pred = pred[0].cpu().numpy()
    cols = ",".join(f"u{j + 1}" for j in range(s.dim))
    print(f"# sample {s.index} family {s.family} dim {s.dim}")
    print(f"t,{cols}")
    for t, row in zip(s.t_query, pred):
        vals = ",".join(f"{v:.6g}" for v in row[:s.dim])
        print(f"{t:.6g},{vals}")
    words = vocab.decode(ids[0])
    print(f"# generated (polish): {words_to_string(words)}")
    if truncated[0]:
        print("# generated (infix): <truncated>")
    else:
        try:
            lines = system_to_infix(from_polish(words))
            print(f"# generated (infix): {'; '.join(lines)}")
        except InvalidExpression as exc:
            print(f"# generated (infix): <unparseable: {exc}>")
    target_words = vocab.decode(s.symbol_target)
    print(f"# target (polish): {words_to_string(target_words)}")
    lines = system_to_infix(from_polish(target_words))
    print(f"# target (infix): {'; '.join(lines)}")
    return 0


def cmd_ood(args) -> int:
    cfg = load_config(args.config)
    chash = config_hash(cfg)
    model, vocab = _load_model(args, cfg, chash)
    lambdas = [float(x) for x in args.lambdas.split(",")]
    reports = training.ood_sweep(model, lambdas, cfg["dataset"], vocab,
                                 seed=args.seed)
    payload = {"ood": {str(lam): r.to_dict() for lam, r in reports.items()}}
    _write_report(args.out, payload, chash)
    if args.csv:
        training.write_metrics_csv(
            args.csv, {f"lambda={lam}": r for lam, r in reports.items()})
    for lam, r in reports.items():
        print(f"lambda={lam}: pred_err_full={100 * r.pred_err_full:.2f}% "
              f"valid={r.valid_pct:.1f}%")
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    chash = config_hash(cfg)
    sizes = [int(x) for x in args.sizes.split(",")]
    results = training.input_length_ablation(sizes, cfg["dataset"],
                                             cfg["train"], seed=args.seed)
    _write_report(args.out, {"ablation": results}, chash)
    for size, entry in results.items():
        print(f"n_input={size}: "
              f"multimodal={100 * entry['multimodal']['pred_err_full']:.2f}% "
              f"data_only={100 * entry['data_only']['pred_err_full']:.2f}%")
    return 0


def cmd_attn(args) -> int:
    cfg = load_config(args.config)
    chash = config_hash(cfg)
    model, vocab = _load_model(args, cfg, chash)
    samples = _load_checked(args.data, chash, args.force)
    s = samples[args.sample]
    batch = training.collate([s], vocab)
    maps = export_attention(model, batch["t_input"], batch["u_input"],
                            batch["symbol_input"], batch["symbol_mask"])
    arrays = {f"layer{li}_head{hi}": m for (li, hi), m in maps.items()}
    np.savez(args.out, **arrays)
    log.info("wrote %d attention maps to %s", len(arrays), args.out)
    return 0


def cmd_selftest(args) -> int:
    """Fast oracle run across the pipeline; exit 0 means healthy."""
    from .bdf import SolverConfig, rk4, solve
    from .odes import SamplingConfig, catalog, sample_instance
    from .symbolic import encode_float, to_polish

    rng = np.random.default_rng(0)
    assert encode_float(2.6) == ("+", "260", "E-2")
    fams = catalog()
    assert len(fams) == 15
    for fam in fams:
        expr, u0 = sample_instance(fam, SamplingConfig(), rng)
        words = to_polish(expr)
        back = from_polish(words)
        assert back.dim == expr.dim
    print("symbolic: ok")

    from .symbolic import neg, var
    from .symbolic.tree import SystemExpr
    decay = SystemExpr(dim=1, components=(neg(var(0)),))
    traj = solve(decay, np.array([1.0]), np.linspace(0, 1, 5), SolverConfig())
    assert abs(traj.values[-1, 0] - np.exp(-1)) < 1e-4
    lorenz = [f for f in fams if f.name == "lorenz3d"][0]
    expr = lorenz.build(dict(lorenz.params))
    grid = np.linspace(0, 2, 65)
    fine = np.linspace(0, 2, 64 * 250 + 1)  # h = 1.25e-4, grid is a subset
    bdf_t = solve(expr, np.array([1.0, 1.0, 1.0]), grid, SolverConfig())
    rk4_t = rk4(expr, np.array([1.0, 1.0, 1.0]), fine)
    rel = np.linalg.norm(bdf_t.values - rk4_t.values[::250]) \
        / np.linalg.norm(rk4_t.values[::250])
    assert rel < 1e-3, rel
    print(f"solver: ok (lorenz vs rk4 rel {rel:.2e})")

    cfg = DatasetConfig(families=("thomas",), n_instances=2,
                        ics_per_instance=2)
    samples = generate_dataset(cfg, master_seed=1)
    vocab = cfg.vocabulary()
    model = FusionTransformer(ModelConfig.desk(vocab_size=len(vocab)))
    tc = TrainConfig(batch_size=4, epochs=1, lr=1e-3)
    result = training.train(model, samples, [], vocab, tc)
    assert all(np.isfinite(row[2]) for row in result.train_curve)
    report = training.evaluate(model, samples, vocab)
    assert np.isfinite(report.pred_err_full)
    print("pipeline: ok")
    return 0


# --- dispatch ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="odefusion",
                                description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, ckpt=False, data=False):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--force", action="store_true",
                        help="ignore config-hash mismatches")
        if ckpt:
            sp.add_argument("--ckpt", required=True)
        if data:
            sp.add_argument("--data", required=True)

    sp = sub.add_parser("gen", help="generate a dataset file")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--jsonl", help="also write a JSONL export")
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("train", help="train a model")
    common(sp, data=True)
    sp.add_argument("--val", help="validation dataset file")
    sp.add_argument("--ckpt", required=True, help="checkpoint output path")
    sp.add_argument("--curves", help="loss-curve CSV output path")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    common(sp, ckpt=True, data=True)
    sp.add_argument("--out", required=True, help="JSON report path")
    sp.add_argument("--csv", help="metrics CSV path")
    sp.add_argument("--integrate", action="store_true",
                    help="also run the decode-then-integrate comparison")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("predict", help="predict one sample")
    common(sp, ckpt=True, data=True)
    sp.add_argument("--sample", type=int, default=0)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("ood", help="coefficient-width sweep")
    common(sp, ckpt=True)
    sp.add_argument("--lambdas", default="0.10,0.15,0.20")
    sp.add_argument("--out", required=True)
    sp.add_argument("--csv")
    sp.set_defaults(func=cmd_ood)

    sp = sub.add_parser("ablate", help="input-length ablation")
    common(sp)
    sp.add_argument("--sizes", default="16,32,64")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("attn", help="export fusion attention maps")
    common(sp, ckpt=True, data=True)
    sp.add_argument("--sample", type=int, default=0)
    sp.add_argument("--out", required=True, help=".npz output path")
    sp.set_defaults(func=cmd_attn)

    sp = sub.add_parser("selftest", help="fast end-to-end oracle run")
    common(sp)
    sp.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(1)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - boundary of the process
        log.error("%s: %s", type(exc).__name__, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
