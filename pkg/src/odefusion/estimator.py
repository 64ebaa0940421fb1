"""Estimator-style front end over the training and inference pipeline.

`OdeFusionRegressor` follows the fit/predict convention: constructor
takes hyperparameters, `fit` consumes sample lists, `predict` returns
trajectory values at query times, and `predict_symbols` returns decoded
equations.  It plugs into model-selection utilities that only need
`get_params`/`set_params`.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import torch
from sklearn.base import BaseEstimator

from .data import Sample
from .net import FusionTransformer, ModelConfig
from .symbolic import InvalidExpression, Vocabulary, from_polish
from .training import TrainConfig, TrainResult, collate, evaluate, train


class NotFittedError(RuntimeError):
    pass


def check_samples(samples, d_max: int | None = None) -> list[Sample]:
    samples = list(samples)
    if not samples:
        raise ValueError("empty sample list")
    for s in samples:
        if not isinstance(s, Sample):
            raise TypeError(f"expected Sample, got {type(s).__name__}")
        if d_max is not None and s.d_max != d_max:
            raise ValueError(
                f"sample padded to {s.d_max} dimensions, expected {d_max}")
    return samples


class OdeFusionRegressor(BaseEstimator):
    """Joint trajectory extrapolation and equation correction.

    Parameters mirror the model and training configs; anything not set
    here keeps the single-CPU preset defaults.
    """

    def __init__(self, d_max: int = 3, d_model: int = 64, n_heads: int = 8,
                 d_ffn: int = 256, multimodal: bool = True,
                 alpha: float = 6.0, beta: float = 1.0, lr: float = 1e-4,
                 weight_decay: float = 1e-4, batch_size: int = 16,
                 epochs: int = 10, seed: int = 0, mantissa_len: int = 3):
        self.d_max = d_max
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_ffn = d_ffn
        self.multimodal = multimodal
        self.alpha = alpha
        self.beta = beta
        self.lr = lr
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.mantissa_len = mantissa_len

    def _configs(self, vocab: Vocabulary):
        mc = ModelConfig.desk(vocab_size=len(vocab), d_max=self.d_max,
                              multimodal=self.multimodal)
        mc = dataclasses.replace(mc, d_model=self.d_model,
                                 n_heads=self.n_heads, d_ffn=self.d_ffn)
        tc = TrainConfig(alpha=self.alpha, beta=self.beta, lr=self.lr,
                         weight_decay=self.weight_decay,
                         batch_size=self.batch_size, epochs=self.epochs,
                         seed=self.seed)
        return mc, tc

    def fit(self, samples, val_samples=None) -> "OdeFusionRegressor":
        samples = check_samples(samples, self.d_max)
        val_samples = check_samples(val_samples, self.d_max) \
            if val_samples else []
        self.vocab_ = Vocabulary(d_max=self.d_max,
                                 mantissa_len=self.mantissa_len)
        mc, tc = self._configs(self.vocab_)
        torch.manual_seed(self.seed)
        self.model_ = FusionTransformer(mc)
        self.result_: TrainResult = train(self.model_, samples, val_samples,
                                          self.vocab_, tc)
        return self

    def _require_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit() first")

    @torch.no_grad()
    def predict(self, samples, per_query: bool = False) -> np.ndarray:
        """Trajectory values at each sample's query times, (N, Q, d_max)."""
        self._require_fitted()
        samples = check_samples(samples, self.d_max)
        self.model_.eval()
        out = []
        for i in range(0, len(samples), 64):
            batch = collate(samples[i:i + 64], self.vocab_)
            pred, _ = self.model_(
                batch["t_input"], batch["u_input"], batch["t_query"],
                symbol_input=batch["symbol_input"],
                symbol_mask=batch["symbol_mask"], per_query=per_query)
            out.append(pred.cpu().numpy())
        return np.concatenate(out)

    @torch.no_grad()
    def predict_symbols(self, samples) -> list[dict]:
        """Greedy-decoded equations; `expr` is None when unparseable."""
        self._require_fitted()
        if not self.multimodal:
            raise RuntimeError("data-only model has no symbol decoder")
        samples = check_samples(samples, self.d_max)
        self.model_.eval()
        results = []
        for i in range(0, len(samples), 64):
            batch = collate(samples[i:i + 64], self.vocab_)
            feats = self.model_.fused_features(
                batch["t_input"], batch["u_input"],
                batch["symbol_input"], batch["symbol_mask"])
            ids_list, truncated = self.model_.decode_symbol_greedy(
                feats[1], batch["symbol_mask"],
                self.vocab_.sos_id, self.vocab_.eos_id)
            for ids, trunc in zip(ids_list, truncated):
                words = self.vocab_.decode(ids)
                entry = {"words": words, "truncated": trunc, "expr": None}
                if not trunc:
                    try:
                        entry["expr"] = from_polish(words)
                    except InvalidExpression:
                        pass
                results.append(entry)
        return results

    def score(self, samples) -> float:
        """Negative full-window relative prediction error."""
        self._require_fitted()
        report = evaluate(self.model_, check_samples(samples, self.d_max),
                          self.vocab_)
        return -report.pred_err_full
