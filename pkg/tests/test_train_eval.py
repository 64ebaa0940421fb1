"""Training loop, metrics, decoder comparison, OOD sweep, ablation."""

import dataclasses
from types import SimpleNamespace

import numpy as np
import pytest
import torch

from odefusion.data import DatasetConfig, Sample, generate_dataset
from odefusion.net import FusionTransformer, ModelConfig
from odefusion.training import (MetricsReport, NonFiniteLoss, TrainConfig,
                                collate, compare_decoders,
                                decode_then_integrate, evaluate,
                                input_length_ablation, ood_sweep, train,
                                validation_loss, write_loss_curves,
                                write_metrics_csv)

torch.set_num_threads(1)

DATA_CFG = DatasetConfig(families=("thomas",), n_instances=4,
                         ics_per_instance=2, unknown_coefficients=True)
VOCAB = DATA_CFG.vocabulary()


def tiny_model(multimodal=True, seed=0):
    torch.manual_seed(seed)
    cfg = ModelConfig(vocab_size=len(VOCAB), d_model=16, n_heads=2,
                      d_ffn=32, data_enc_layers=1, sym_enc_layers=1,
                      fusion_layers=1, data_dec_layers=1, sym_dec_layers=1,
                      d_max=3, max_symbol_len=128, multimodal=multimodal)
    return FusionTransformer(cfg)


@pytest.fixture(scope="module")
def samples():
    return generate_dataset(DATA_CFG, master_seed=21)


class StubModel:
    """Fixed-output stand-in for hand-scored metric fixtures."""

    def __init__(self, pred_fill: float, rows_by_start: dict):
        self.cfg = SimpleNamespace(multimodal=True)
        self.pred_fill = pred_fill
        self.rows_by_start = rows_by_start  # batch start -> list of id rows
        self._cursor = 0

    def eval(self):
        return self

    def __call__(self, t_input, u_input, t_query, **kw):
        b, q = t_query.shape
        self._cursor = 0
        return torch.full((b, q, 3), self.pred_fill), None

    def fused_features(self, t_input, u_input, symbol_input, symbol_mask):
        self._batch_start = self._cursor
        self._cursor += t_input.shape[0]
        return torch.zeros(1), torch.zeros(1)

    def decode_symbol_greedy(self, memory, mask, sos, eos, max_len=None):
        rows = self.rows_by_start[self._batch_start]
        return rows, [False] * len(rows)


def hand_sample(index, label_fill=1.0, dim=3):
    n_in, n_q = 8, 6
    target = VOCAB.encode(["u_1", "|", "u_2", "|", "u_3"],
                          sos=True, eos=True)
    return Sample(family="stub", dim=dim, index=index,
                  t_input=np.linspace(0, 2, n_in),
                  u_input=np.ones((n_in, 3)),
                  mask=np.array([1.0] * dim + [0.0] * (3 - dim)),
                  t_query=np.linspace(2, 6, n_q),
                  u_label=np.full((n_q, 3), label_fill),
                  u_clean_end=np.ones(3),
                  symbol_input=VOCAB.encode(["u_1", "|", "u_2", "|", "u_3"]),
                  symbol_target=target)


class TestCollate:
    def test_shapes_and_padding(self, samples):
        batch = collate(samples[:3], VOCAB)
        assert batch["t_input"].shape == (3, 64)
        assert batch["u_input"].shape == (3, 64, 3)
        assert batch["t_query"].shape == (3, 128)
        assert batch["u_label"].shape == (3, 128, 3)
        s_in = batch["symbol_input"].shape[1]
        for i, s in enumerate(samples[:3]):
            n = len(s.symbol_input)
            assert torch.all(batch["symbol_mask"][i, :n])
            assert torch.all(~batch["symbol_mask"][i, n:])
            assert torch.all(batch["symbol_input"][i, n:] == VOCAB.pad_id)
        assert batch["target"].dtype == torch.long


class TestTrain:
    def test_loss_decreases_on_smoke_set(self, samples):
        model = tiny_model()
        cfg = TrainConfig(lr=1e-3, batch_size=4, epochs=8, seed=0)
        result = train(model, samples, [], VOCAB, cfg)
        first = np.mean([r[2] for r in result.train_curve[:4]])
        last = np.mean([r[2] for r in result.train_curve[-4:]])
        assert last < first

    def test_loss_additivity(self, samples):
        cfg = TrainConfig(alpha=6.0, beta=1.0, lr=1e-4, batch_size=4,
                          epochs=1, seed=0)
        result = train(tiny_model(), samples, [], VOCAB, cfg)
        for _, _, total, l_data, l_sym in result.train_curve:
            assert abs(total - (6.0 * l_data + 1.0 * l_sym)) \
                <= 1e-6 * max(1.0, abs(total))

    def test_seed_determinism(self, samples):
        cfg = TrainConfig(lr=1e-3, batch_size=4, epochs=2, seed=3)
        a = train(tiny_model(seed=1), samples, [], VOCAB, cfg)
        b = train(tiny_model(seed=1), samples, [], VOCAB, cfg)
        assert a.train_curve == b.train_curve

    def test_validation_and_best_checkpoint(self, samples):
        cfg = TrainConfig(lr=1e-3, batch_size=4, epochs=3, seed=0)
        result = train(tiny_model(), samples[:6], samples[6:], VOCAB, cfg)
        assert len(result.val_curve) == 3
        assert result.best_val == min(v[2] for v in result.val_curve)

    def test_non_finite_loss_carries_checkpoint(self, samples):
        bad = [dataclasses.replace(s, u_input=s.u_input * 1e30,
                                   u_label=s.u_label * 1e30)
               for s in samples[:4]]
        cfg = TrainConfig(lr=1e-3, batch_size=4, epochs=1, seed=0)
        with pytest.raises(NonFiniteLoss) as err:
            train(tiny_model(), bad, [], VOCAB, cfg)
        assert isinstance(err.value.checkpoint, dict)
        assert err.value.step >= 1

    def test_empty_training_set_rejected(self):
        with pytest.raises(ValueError):
            train(tiny_model(), [], [], VOCAB, TrainConfig())

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(alpha=0.0)

    def test_beta_zero_trains_data_path_only(self, samples):
        model = tiny_model()
        before = {n: p.detach().clone()
                  for n, p in model.named_parameters()
                  if n.startswith(("sym_decoder", "logits_head"))}
        cfg = TrainConfig(beta=0.0, lr=1e-3, batch_size=4, epochs=1,
                          weight_decay=0.0, seed=0)
        train(model, samples[:4], [], VOCAB, cfg)
        for n, p in model.named_parameters():
            if n in before:
                assert torch.equal(p.detach(), before[n]), n

    def test_loss_curve_export(self, samples, tmp_path):
        cfg = TrainConfig(lr=1e-3, batch_size=4, epochs=1, seed=0)
        result = train(tiny_model(), samples[:4], samples[4:], VOCAB, cfg)
        path = tmp_path / "curves.csv"
        write_loss_curves(path, result)
        text = path.read_text()
        assert "train_loss" in text and "val_loss" in text


class TestEvaluate:
    def test_exact_labels_zero_error(self):
        fixture = [hand_sample(i, label_fill=2.5) for i in range(3)]
        rows = [list(s.symbol_target[1:-1]) for s in fixture]
        stub = StubModel(pred_fill=2.5, rows_by_start={0: rows})
        report = evaluate(stub, fixture, VOCAB)
        assert report.pred_err_half == 0.0
        assert report.pred_err_full == 0.0
        assert report.valid_pct == 100.0
        assert report.expr_err == 0.0

    def test_hand_scored_validity(self):
        """20 samples: 12 echo a valid target, 5 emit garbage, 3 emit a
        placeholder expression (parseable but unscoreable)."""
        fixture = [hand_sample(i) for i in range(20)]
        valid_row = list(VOCAB.encode(["u_1", "|", "u_2", "|", "u_3"]))
        garbage_row = list(VOCAB.encode(["add", "add"]))
        skeleton_row = list(VOCAB.encode(
            ["mul", "<c>", "u_1", "|", "u_2", "|", "u_3"]))
        rows = [valid_row] * 12 + [garbage_row] * 5 + [skeleton_row] * 3
        stub = StubModel(pred_fill=1.0, rows_by_start={0: rows})
        report = evaluate(stub, fixture, VOCAB)
        assert report.counts == {"valid": 12, "invalid": 5, "truncated": 0,
                                 "unscoreable": 3}
        assert report.valid_pct == 100.0 * 15 / 20
        assert sum(report.counts.values()) == report.n == 20

    def test_counts_sum_to_n(self, samples):
        model = tiny_model()
        report = evaluate(model, samples, VOCAB)
        assert sum(report.counts.values()) == report.n == len(samples)

    def test_determinism(self, samples):
        model = tiny_model()
        a = evaluate(model, samples, VOCAB, seed=5)
        b = evaluate(model, samples, VOCAB, seed=5)
        assert a.to_dict() == b.to_dict() or (
            np.isnan(a.expr_err) and np.isnan(b.expr_err)
            and {k: v for k, v in a.to_dict().items() if k != "expr_err"}
            == {k: v for k, v in b.to_dict().items() if k != "expr_err"})

    def test_data_only_model(self, samples):
        model = tiny_model(multimodal=False)
        report = evaluate(model, samples, VOCAB)
        assert report.valid_pct == 0.0
        assert np.isfinite(report.pred_err_full)

    def test_report_validation(self):
        with pytest.raises(AssertionError):
            MetricsReport(n=1, pred_err_half=0, pred_err_full=0,
                          valid_pct=150.0, expr_err=0)

    def test_metrics_csv(self, tmp_path):
        r = MetricsReport(n=4, pred_err_half=0.05, pred_err_full=0.08,
                          valid_pct=95.0, expr_err=0.02)
        path = tmp_path / "m.csv"
        write_metrics_csv(path, {"test": r})
        text = path.read_text()
        assert "Relative Prediction Errors (%)" in text
        assert "5.00, 8.00" in text


class TestDecodeThenIntegrate:
    def test_exact_expression_near_noise_floor(self, samples):
        s = samples[0]
        rows = [list(s.symbol_target[1:-1])]
        stub = StubModel(pred_fill=0.0, rows_by_start={0: rows})
        out = decode_then_integrate(stub, s, VOCAB)
        assert out["status"] == "ok"
        # exact structure, 3-digit constants: error is solver tolerance
        # plus label noise plus quantization drift, far below O(1)
        assert out["error"] < 0.2

    def test_unparseable_counted(self, samples):
        stub = StubModel(pred_fill=0.0,
                         rows_by_start={0: [list(VOCAB.encode(["add"]))]})
        out = decode_then_integrate(stub, samples[0], VOCAB)
        assert out["status"] == "invalid" and out["error"] is None

    def test_placeholder_counted_invalid(self, samples):
        row = list(VOCAB.encode(["mul", "<c>", "u_1", "|", "u_2", "|", "u_3"]))
        stub = StubModel(pred_fill=0.0, rows_by_start={0: [row]})
        out = decode_then_integrate(stub, samples[0], VOCAB)
        assert out["status"] == "invalid"

    def test_blowup_counted_as_solver_error(self, samples):
        row = list(VOCAB.encode(
            ["mul", "+", "100", "E1", "mul", "u_1", "u_1",
             "|", "u_2", "|", "u_3"]))
        stub = StubModel(pred_fill=0.0, rows_by_start={0: [row]})
        out = decode_then_integrate(stub, samples[0], VOCAB)
        assert out["status"] == "solver_error"

    def test_compare_decoders_statuses(self, samples):
        model = tiny_model()
        out = compare_decoders(model, samples[:4], VOCAB)
        assert sum(out["statuses"].values()) == 4
        assert np.isfinite(out["data_decoder_err"])


class TestOodSweep:
    def test_single_lambda_matches_evaluate(self, samples):
        model = tiny_model()
        reports = ood_sweep(model, [DATA_CFG.lam], DATA_CFG, VOCAB, seed=21)
        assert list(reports) == [DATA_CFG.lam]
        direct = evaluate(model, generate_dataset(DATA_CFG, master_seed=21),
                          VOCAB, seed=21)
        got = reports[DATA_CFG.lam]
        assert got.pred_err_full == direct.pred_err_full
        assert got.valid_pct == direct.valid_pct

    def test_multiple_lambdas(self, samples):
        model = tiny_model()
        small = dataclasses.replace(DATA_CFG, n_instances=2)
        reports = ood_sweep(model, [0.10, 0.20], small, VOCAB, seed=0)
        assert set(reports) == {0.10, 0.20}
        for r in reports.values():
            assert np.isfinite(r.pred_err_full)


class TestAblation:
    def test_paired_variants(self):
        data_cfg = dataclasses.replace(DATA_CFG, n_instances=2)
        train_cfg = TrainConfig(lr=1e-3, batch_size=4, epochs=1, seed=0)
        results = input_length_ablation(
            [64], data_cfg, train_cfg, n_val=4,
            model_kwargs=dict(d_model=16, n_heads=2, d_ffn=32,
                              data_enc_layers=1, sym_enc_layers=1,
                              fusion_layers=1, data_dec_layers=1,
                              sym_dec_layers=1))
        entry = results[64]
        assert entry["multimodal"]["params"] > entry["data_only"]["params"]
        for v in entry.values():
            assert np.isfinite(v["pred_err_full"])
