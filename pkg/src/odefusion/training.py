"""Training loop, evaluation metrics, and the comparison harnesses.

The loss is alpha * (relative squared data error) + beta * (symbol cross
entropy).  Evaluation reports the three benchmark metrics: relative
trajectory prediction error (on the first half of the query window and
on the whole window), percentage of generated token sequences that parse
into valid expressions, and the Monte-Carlo expression error of the
valid ones.  Extra harnesses: re-integrating the generated equations and
comparing against the data decoder, an out-of-distribution sweep over
the coefficient sampling width, and the input-length ablation against a
data-only model.
"""

from __future__ import annotations

import copy
import csv
import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np
import torch

from .bdf import SolverConfig, SolverError, solve
from .data import DatasetConfig, Sample, generate_dataset
from .nn import ClippedAdamW, loss_cross_entropy, loss_relative_squared, lr_at_step
from .net import FusionTransformer, ModelConfig
from .symbolic import (InvalidExpression, PlaceholderPresent, Vocabulary,
                       expression_error, from_polish)


class NonFiniteLoss(RuntimeError):
    def __init__(self, step: int, checkpoint: dict):
        self.step = step
        self.checkpoint = checkpoint  # last good state_dict
        super().__init__(f"non-finite loss at step {step}")


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 6.0
    beta: float = 1.0
    lr: float = 1e-4
    weight_decay: float = 1e-4
    warmup_frac: float = 0.10
    clip_norm: float = 1.0
    batch_size: int = 16
    epochs: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.alpha <= 0 or self.beta < 0:
            raise ValueError("loss weights must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class MetricsReport:
    n: int
    pred_err_half: float      # relative L2 on the first half of the window
    pred_err_full: float      # relative L2 on the whole window
    valid_pct: float          # parseable generated expressions, in percent
    expr_err: float           # mean expression error over scoreable outputs
    counts: dict = field(default_factory=dict)
    integrate_err: float | None = None

    def __post_init__(self):
        assert 0.0 <= self.valid_pct <= 100.0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def collate(samples: list[Sample], vocab: Vocabulary,
            device="cpu") -> dict[str, torch.Tensor]:
    """Stack samples into padded batch tensors."""
    b = len(samples)
    pad = vocab.pad_id
    t_input = torch.tensor(np.stack([s.t_input for s in samples]),
                           dtype=torch.float32)
    u_input = torch.tensor(np.stack([s.u_input for s in samples]),
                           dtype=torch.float32)
    mask = torch.tensor(np.stack([s.mask for s in samples]),
                        dtype=torch.float32)
    t_query = torch.tensor(np.stack([s.t_query for s in samples]),
                           dtype=torch.float32)
    u_label = torch.tensor(np.stack([s.u_label for s in samples]),
                           dtype=torch.float32)
    s_in = max(len(s.symbol_input) for s in samples)
    s_tg = max(len(s.symbol_target) for s in samples)
    sym_input = torch.full((b, s_in), pad, dtype=torch.long)
    sym_mask = torch.zeros((b, s_in), dtype=torch.bool)
    target = torch.full((b, s_tg), pad, dtype=torch.long)
    for i, s in enumerate(samples):
        sym_input[i, :len(s.symbol_input)] = torch.tensor(
            s.symbol_input, dtype=torch.long)
        sym_mask[i, :len(s.symbol_input)] = True
        target[i, :len(s.symbol_target)] = torch.tensor(
            s.symbol_target, dtype=torch.long)
    batch = {"t_input": t_input, "u_input": u_input, "mask": mask,
             "t_query": t_query, "u_label": u_label,
             "symbol_input": sym_input, "symbol_mask": sym_mask,
             "target": target}
    return {k: v.to(device) for k, v in batch.items()}


def _batch_losses(model: FusionTransformer, batch, cfg: TrainConfig, pad_id):
    target = batch["target"]
    target_in, target_out = target[:, :-1], target[:, 1:]
    pred, logits = model(batch["t_input"], batch["u_input"], batch["t_query"],
                         symbol_input=batch["symbol_input"],
                         symbol_mask=batch["symbol_mask"],
                         target_in=target_in if model.cfg.multimodal else None)
    l_data = loss_relative_squared(pred, batch["u_label"], batch["mask"])
    if logits is not None and cfg.beta > 0:
        l_sym = loss_cross_entropy(logits, target_out, pad_id)
    else:
        l_sym = torch.zeros((), dtype=l_data.dtype)
    return l_data, l_sym


@dataclass
class TrainResult:
    model: FusionTransformer
    train_curve: list  # (step, lr, total, data, symbol)
    val_curve: list    # (epoch, step, total, data, symbol)
    best_state: dict
    best_val: float


def train(model: FusionTransformer, train_samples: list[Sample],
          val_samples: list[Sample], vocab: Vocabulary,
          cfg: TrainConfig) -> TrainResult:
    """Minimize alpha*L_data + beta*L_symbol with AdamW, inverse-sqrt
    schedule, and global-norm clipping.  Deterministic for a fixed seed."""
    if not train_samples:
        raise ValueError("empty training set")
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    opt = ClippedAdamW(model.parameters(), lr=cfg.lr,
                       weight_decay=cfg.weight_decay, clip_norm=cfg.clip_norm)
    steps_per_epoch = max(1, len(train_samples) // cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs
    warmup = max(1, int(round(cfg.warmup_frac * total_steps)))
    pad_id = vocab.pad_id

    train_curve, val_curve = [], []
    best_state = copy.deepcopy(model.state_dict())
    best_val = float("inf")
    step = 0
    order = np.arange(len(train_samples))
    for epoch in range(cfg.epochs):
        model.train()
        rng.shuffle(order)
        for bi in range(steps_per_epoch):
            idx = order[bi * cfg.batch_size:(bi + 1) * cfg.batch_size]
            batch = collate([train_samples[i] for i in idx], vocab)
            step += 1
            lr = lr_at_step(step, cfg.lr, warmup)
            opt.set_lr(lr)
            opt.zero_grad()
            l_data, l_sym = _batch_losses(model, batch, cfg, pad_id)
            loss = cfg.alpha * l_data + cfg.beta * l_sym
            if not torch.isfinite(loss):
                raise NonFiniteLoss(step, best_state)
            loss.backward()
            opt.step()
            train_curve.append((step, lr, loss.item(), l_data.item(),
                                l_sym.item()))
        if val_samples:
            vl = validation_loss(model, val_samples, vocab, cfg)
            val_curve.append((epoch, step, *vl))
            if vl[0] < best_val:
                best_val = vl[0]
                best_state = copy.deepcopy(model.state_dict())
        else:
            best_state = copy.deepcopy(model.state_dict())
    if val_samples:
        model.load_state_dict(best_state)
    return TrainResult(model=model, train_curve=train_curve,
                       val_curve=val_curve, best_state=best_state,
                       best_val=best_val)


@torch.no_grad()
def validation_loss(model, samples, vocab, cfg: TrainConfig,
                    batch_size: int = 64):
    model.eval()
    pad_id = vocab.pad_id
    totals = np.zeros(3)
    n = 0
    for i in range(0, len(samples), batch_size):
        chunk = samples[i:i + batch_size]
        batch = collate(chunk, vocab)
        l_data, l_sym = _batch_losses(model, batch, cfg, pad_id)
        loss = cfg.alpha * l_data + cfg.beta * l_sym
        totals += np.array([float(loss), float(l_data), float(l_sym)]) \
            * len(chunk)
        n += len(chunk)
    return tuple(totals / n)


def write_loss_curves(path, result: TrainResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "lr", "train_loss", "train_data_loss",
                    "train_symbol_loss"])
        w.writerows(result.train_curve)
        w.writerow([])
        w.writerow(["epoch", "step", "val_loss", "val_data_loss",
                    "val_symbol_loss"])
        w.writerows(result.val_curve)


# --- evaluation -------------------------------------------------------------

def _relative_errors(pred: np.ndarray, label: np.ndarray,
                     mask: np.ndarray) -> tuple[float, float]:
    """Per-sample relative L2 on (first half, full) of the query window."""
    d = int(mask.sum())
    p, l = pred[:, :d], label[:, :d]
    half = p.shape[0] // 2
    full = np.linalg.norm(p - l) / max(np.linalg.norm(l), 1e-12)
    first = np.linalg.norm(p[:half] - l[:half]) \
        / max(np.linalg.norm(l[:half]), 1e-12)
    return first, full


@torch.no_grad()
def evaluate(model: FusionTransformer, samples: list[Sample],
             vocab: Vocabulary, batch_size: int = 64,
             expr_points: int = 50, seed: int = 0) -> MetricsReport:
    model.eval()
    errs_half, errs_full = [], []
    counts = {"valid": 0, "invalid": 0, "truncated": 0, "unscoreable": 0}
    expr_errs = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        batch = collate(chunk, vocab)
        pred, _ = model(batch["t_input"], batch["u_input"], batch["t_query"],
                        symbol_input=batch["symbol_input"],
                        symbol_mask=batch["symbol_mask"])
        pred = pred.cpu().numpy()
        for i, s in enumerate(chunk):
            e_half, e_full = _relative_errors(pred[i], s.u_label, s.mask)
            errs_half.append(e_half)
            errs_full.append(e_full)
        if not model.cfg.multimodal:
            continue
        feats = model.fused_features(batch["t_input"], batch["u_input"],
                                     batch["symbol_input"],
                                     batch["symbol_mask"])
        ids_list, truncated = model.decode_symbol_greedy(
            feats[1], batch["symbol_mask"], vocab.sos_id, vocab.eos_id)
        for i, s in enumerate(chunk):
            if truncated[i]:
                counts["truncated"] += 1
                continue
            words = vocab.decode(ids_list[i])
            try:
                generated = from_polish(words)
            except InvalidExpression:
                counts["invalid"] += 1
                continue
            target = from_polish(vocab.decode(s.symbol_target))
            try:
                err = expression_error(
                    target, generated, n_points=expr_points,
                    rng=np.random.default_rng([seed, s.index]))
            except (PlaceholderPresent, ValueError):
                counts["unscoreable"] += 1
                continue
            if np.isnan(err):
                counts["unscoreable"] += 1
                continue
            counts["valid"] += 1
            expr_errs.append(err)
    n = len(samples)
    if model.cfg.multimodal:
        parseable = counts["valid"] + counts["unscoreable"]
        valid_pct = 100.0 * parseable / n if n else 0.0
    else:
        valid_pct = 0.0
    return MetricsReport(
        n=n,
        pred_err_half=float(np.mean(errs_half)) if errs_half else 0.0,
        pred_err_full=float(np.mean(errs_full)) if errs_full else 0.0,
        valid_pct=valid_pct,
        expr_err=float(np.mean(expr_errs)) if expr_errs else float("nan"),
        counts=counts)


# --- generated-equation re-integration (data vs symbol prediction) ----------

def decode_then_integrate(model: FusionTransformer, sample: Sample,
                          vocab: Vocabulary,
                          solver_cfg: SolverConfig = SolverConfig()) -> dict:
    """Parse the greedy output and integrate it over the query window.

    Starts from the observed (noisy) state at the last input time, which is
    all that is available at inference time, and reports the relative L2
    error against the labels.  Unparseable outputs and solver failures are
    reported in `status`, not raised.
    """
    batch = collate([sample], vocab)
    feats = model.fused_features(batch["t_input"], batch["u_input"],
                                 batch["symbol_input"], batch["symbol_mask"])
    ids_list, truncated = model.decode_symbol_greedy(
        feats[1], batch["symbol_mask"], vocab.sos_id, vocab.eos_id)
    if truncated[0]:
        return {"status": "truncated", "error": None}
    try:
        generated = from_polish(vocab.decode(ids_list[0]))
    except InvalidExpression:
        return {"status": "invalid", "error": None}
    if generated.has_placeholder() or generated.dim != sample.dim:
        return {"status": "invalid", "error": None}
    t0 = float(sample.t_input[-1])
    grid = np.concatenate([[t0], sample.t_query])
    u0 = sample.u_input[-1, :sample.dim]
    try:
        traj = solve(generated, u0, grid, solver_cfg)
    except SolverError:
        return {"status": "solver_error", "error": None}
    pred = traj.values[1:]
    label = sample.u_label[:, :sample.dim]
    err = float(np.linalg.norm(pred - label) / np.linalg.norm(label))
    return {"status": "ok", "error": err}


def compare_decoders(model: FusionTransformer, samples: list[Sample],
                     vocab: Vocabulary) -> dict:
    """Mean data-decoder error vs mean re-integration error (valid only)."""
    report = evaluate(model, samples, vocab)
    statuses = {"ok": 0, "invalid": 0, "truncated": 0, "solver_error": 0}
    errs = []
    for s in samples:
        out = decode_then_integrate(model, s, vocab)
        statuses[out["status"]] += 1
        if out["status"] == "ok":
            errs.append(out["error"])
    return {"data_decoder_err": report.pred_err_full,
            "integrate_err": float(np.mean(errs)) if errs else float("nan"),
            "statuses": statuses}


# --- out-of-distribution sweep ----------------------------------------------

def ood_sweep(model: FusionTransformer, lambdas, base_cfg: DatasetConfig,
              vocab: Vocabulary, seed: int = 0) -> dict[float, MetricsReport]:
    """Regenerate test sets at each coefficient width and evaluate."""
    out = {}
    for lam in lambdas:
        cfg = dataclasses.replace(base_cfg, lam=lam)
        samples = generate_dataset(cfg, master_seed=seed)
        out[lam] = evaluate(model, samples, vocab, seed=seed)
    return out


# --- input-length ablation --------------------------------------------------

def input_length_ablation(sizes, data_cfg: DatasetConfig,
                          train_cfg: TrainConfig, n_val: int = 40,
                          seed: int = 0, model_kwargs: dict | None = None
                          ) -> dict[int, dict]:
    """Train paired multimodal / data-only models per input grid size.

    Datasets are regenerated (no noise, per the comparison protocol) with
    the label grid held fixed, so errors are comparable across sizes.
    """
    model_kwargs = model_kwargs or {}
    results = {}
    for size in sizes:
        cfg = dataclasses.replace(data_cfg, n_input=size, snr=0.0)
        val_cfg = dataclasses.replace(
            cfg, n_instances=max(1, n_val // cfg.ics_per_instance
                                 // len(cfg.families)))
        train_samples = generate_dataset(cfg, master_seed=seed)
        val_samples = generate_dataset(val_cfg, master_seed=seed + 1)
        vocab = cfg.vocabulary()
        entry = {}
        for multimodal in (True, False):
            mc = ModelConfig.desk(vocab_size=len(vocab), d_max=cfg.d_max,
                                  multimodal=multimodal)
            mc = dataclasses.replace(mc, **model_kwargs)
            torch.manual_seed(train_cfg.seed)
            model = FusionTransformer(mc)
            result = train(model, train_samples, val_samples, vocab,
                           train_cfg)
            report = evaluate(result.model, val_samples, vocab, seed=seed)
            key = "multimodal" if multimodal else "data_only"
            entry[key] = {"pred_err_full": report.pred_err_full,
                          "params": model.param_count()}
        results[size] = entry
    return results


# --- tabular export ---------------------------------------------------------

def write_metrics_csv(path, rows: dict[str, MetricsReport]) -> None:
    """Rows keyed by setting name, columns matching the benchmark tables."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["Setting", "Relative Prediction Errors (%)",
                    "Relative Expression Error (%)",
                    "Percentage of Valid Expressions (%)"])
        for name, r in rows.items():
            w.writerow([name,
                        f"{100 * r.pred_err_half:.2f}, "
                        f"{100 * r.pred_err_full:.2f}",
                        f"{100 * r.expr_err:.2f}",
                        f"{r.valid_pct:.2f}"])
