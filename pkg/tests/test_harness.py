import json

import numpy as np
import pytest

from lsidn.data import events_to_sequences, parse_events, sess_div
from lsidn.harness import experiments
from lsidn.harness.cli import main
from lsidn.harness.config import (AUGMENTATIONS, ConfigError, ExperimentConfig, SyntheticSpec, dump_key_values,
                                  load_config, parse_key_values)
from lsidn.harness.dataset import build_dataset, dataset_from_events, encode, inject_noise
from lsidn.harness.storage import diagnostics, load_sequences, preprocess, resolve_omega
from lsidn.harness.synthetic import generate_events, generate_synthetic
from lsidn.harness.train import TrainingError, Evaluator, evaluate, save_result, train
from lsidn.model import VARIANTS, VariantFlags
from lsidn.numerics import load_checkpoint

SMALL_SPEC = SyntheticSpec(n_users=40, n_items=120, n_categories=6, sessions_per_user=4)
VARIANTS_FLAGS = {v: VariantFlags.of(v) for v in VARIANTS}
FAST = dict(d=8, batch_size=64, r=5, max_seq_len=20, lr=1e-2, beta=1e-4, init_scale=0.3, max_epochs=1)


@pytest.fixture(scope="module")
def small_events():
    return generate_events(SMALL_SPEC)


@pytest.fixture(scope="module")
def small_dataset(small_events):
    return dataset_from_events(small_events, ExperimentConfig(**FAST))


class TestConfig:
    def test_defaults(self):
        c = ExperimentConfig()
        assert (c.d, c.batch_size, c.max_seq_len, c.b, c.l, c.r) == (40, 500, 50, 5, 10, 30)
        assert (c.lam, c.beta, c.gamma, c.tau, c.omega_minutes) == (0.1, 0.1, 0.4, 0.2, 360.0)
        assert c.patience == 5 and c.init_scale == 0.01

    def test_parse(self):
        cfg, keys = parse_key_values("# desk run\nd = 8\nlambda = 0.3  # weight\nomega=120\nvariant = wo_si\n",
                                     ExperimentConfig)
        assert (cfg.d, cfg.lam, cfg.omega_minutes, cfg.variant) == (8, 0.3, 120.0, "w/o SI")
        assert keys == {"d", "lam", "omega_minutes", "variant"}

    def test_round_trip(self, tmp_path):
        cfg = ExperimentConfig(d=12, heads=3, positional=False, augmentation="crop")
        path = tmp_path / "c.conf"
        path.write_text(dump_key_values(cfg))
        assert load_config(path)[0] == cfg

    @pytest.mark.parametrize("text", ["colour = red", "d = 8.5", "d 8", "gamma = 1.5", "noise_rate = 0.6",
                                      "d = 7", "augmentation = shuffle", "variant = w/o XY", "positional = maybe",
                                      "lr = 0"])
    def test_rejects(self, text):
        with pytest.raises(ConfigError):
            parse_key_values(text, ExperimentConfig)

    def test_model_choice(self):
        assert ExperimentConfig(model="gru").label == "gru"
        assert ExperimentConfig(variant="w/o RI").label == "w/o RI"
        with pytest.raises(ConfigError):
            ExperimentConfig(model="transformer")

    def test_spec_validation(self):
        with pytest.raises(ConfigError):
            SyntheticSpec(n_categories=1)
        with pytest.raises(ConfigError):
            SyntheticSpec(inter_gap_min=300.0)


class TestSynthetic:
    def test_pure_long_preference(self):
        events = generate_events(SyntheticSpec(n_users=20, long_pref_strength=1.0))
        for seq in events_to_sequences(events):
            assert len({e.category_id for e in seq.events}) == 1

    def test_sessions_recovered(self, small_events):
        for seq in events_to_sequences(small_events):
            assert len(sess_div(seq, SMALL_SPEC.omega_minutes * 60)) == SMALL_SPEC.sessions_per_user

    def test_deterministic(self, tmp_path):
        generate_synthetic(SMALL_SPEC, tmp_path / "a.tsv")
        generate_synthetic(SMALL_SPEC, tmp_path / "b.tsv")
        assert (tmp_path / "a.tsv").read_bytes() == (tmp_path / "b.tsv").read_bytes()

    def test_noise_draws_off_category(self):
        noisy = generate_events(SyntheticSpec(n_users=30, long_pref_strength=1.0, noise_rate=0.5))
        off = sum(len({e.category_id for e in s.events}) > 1 for s in events_to_sequences(noisy))
        assert off > 20

    def test_session_structure_visible(self, small_events):
        diag = diagnostics(events_to_sequences(small_events), SMALL_SPEC.omega_minutes * 60)
        assert diag["session_entropy_mean"] < diag["sequence_entropy_mean"]
        assert diag["session_gini_mean"] > diag["sequence_gini_mean"]


class TestSplits:
    def test_time_order(self, small_dataset):
        t_val, t_test = small_dataset.cutoffs
        assert all(i.target.timestamp < t_val for i in small_dataset.train)
        assert all(t_val <= i.target.timestamp < t_test for i in small_dataset.val)
        assert all(i.target.timestamp >= t_test for i in small_dataset.test)

    def test_no_test_event_in_training(self, small_events):
        cfg = ExperimentConfig(**FAST, noise_rate=0.3)
        ds = dataset_from_events(small_events, cfg)
        test_events = {(i.user_id, i.target.item_id, i.target.timestamp) for i in ds.test}
        for inst in ds.train + ds.val:
            context = [e for s in inst.historical_sessions for e in s.events]
            context += list(inst.past_sub_session.events) + list(inst.recent_items) + [inst.target]
            if inst.future_sub_session is not None:
                context += list(inst.future_sub_session.events)
            assert all(e.timestamp < ds.cutoffs[1] for e in context)
            assert not {(e.user_id, e.item_id, e.timestamp) for e in context} & test_events

    def test_evaluation_has_no_future(self, small_dataset):
        assert all(i.future_sub_session is None for i in small_dataset.val + small_dataset.test)
        enc = encode(small_dataset.test, small_dataset.vocab, small_dataset.config, VARIANTS_FLAGS["full"])
        assert not enc.ssl_ok.any()

    def test_training_future_clipped(self, small_dataset):
        t_val = small_dataset.cutoffs[0]
        futures = [i.future_sub_session for i in small_dataset.train if i.future_sub_session is not None]
        assert futures and all(e.timestamp < t_val for f in futures for e in f.events)


class TestNoise:
    def test_identity_at_zero(self, small_dataset, rng):
        out = inject_noise(small_dataset.train, 0.0, rng, small_dataset.user_items, small_dataset.item_category)
        assert out == small_dataset.train

    def test_count(self, small_dataset, rng):
        base = (small_dataset.train * 10)[:1000]
        out = inject_noise(base, 0.1, rng, small_dataset.user_items, small_dataset.item_category)
        assert len(out) == 1100 and out[:1000] == base

    def test_targets_never_seen(self, small_dataset, rng):
        out = inject_noise(small_dataset.train, 0.3, rng, small_dataset.user_items, small_dataset.item_category)
        added = out[len(small_dataset.train):]
        assert added
        assert all(i.target.item_id not in small_dataset.user_items[i.user_id] for i in added)

    @pytest.mark.parametrize("rate", [-0.1, 0.6])
    def test_rate_range(self, small_dataset, rng, rate):
        with pytest.raises(ValueError):
            inject_noise(small_dataset.train, rate, rng, small_dataset.user_items, small_dataset.item_category)

    def test_test_split_unchanged(self, small_events):
        clean = dataset_from_events(small_events, ExperimentConfig(**FAST))
        noisy = dataset_from_events(small_events, ExperimentConfig(**FAST, noise_rate=0.2))
        assert clean.test == noisy.test
        assert len(noisy.train) == len(clean.train) + int(0.2 * len(clean.train))


class TestEvaluationPools:
    def test_negatives_untouched(self, small_dataset):
        ev = Evaluator(small_dataset, small_dataset.config)
        enc = encode(small_dataset.test, small_dataset.vocab, small_dataset.config, VARIANTS_FLAGS["full"])
        pools = ev.pools("test", enc)
        assert pools.shape == (len(enc), 50)
        for user, row in zip(enc.user_ids, pools):
            seen = small_dataset.user_items[user]
            # vocab rows start after padding and the mask token
            assert all(small_dataset.vocab.items[r - 2] not in seen for r in row[1:])

    def test_pools_fixed_per_seed(self, small_dataset):
        enc = encode(small_dataset.test, small_dataset.vocab, small_dataset.config, VARIANTS_FLAGS["full"])
        a = Evaluator(small_dataset, small_dataset.config).pools("test", enc)
        b = Evaluator(small_dataset, small_dataset.config).pools("test", enc)
        np.testing.assert_array_equal(a, b)


class TestTraining:
    def test_smoke(self, tmp_path):
        events = generate_events(SyntheticSpec(n_users=50))
        cfg = ExperimentConfig(**FAST)
        ds = dataset_from_events(events, cfg)
        result = train(cfg, ds)
        assert result.best_epoch == 1 and len(result.log_rows) == 1
        row = result.log_rows[0]
        assert np.isfinite(row["loss"]) and row["ssl_loss"] is not None and 0 <= row["val_auc"] <= 1
        save_result(tmp_path / "ck.json", result)
        arrays, meta = load_checkpoint(tmp_path / "ck.json")
        assert meta["config"]["d"] == 8 and set(arrays) == set(result.best_params)

    def test_lambda_zero_matches_without_ssl(self, small_dataset):
        cfg = small_dataset.config.replace(max_epochs=2)
        a = train(cfg.replace(lam=0.0), small_dataset)
        b = train(cfg.replace(variant="w/o SD"), small_dataset)
        for name, value in a.model.state_arrays().items():
            np.testing.assert_array_equal(value, b.model.state_arrays()[name], err_msg=name)
        assert [r["val_auc"] for r in a.log_rows] == [r["val_auc"] for r in b.log_rows]

    def test_loss_descends(self, small_events):
        deltas = []
        for seed in range(3):
            cfg = ExperimentConfig(**{**FAST, "lr": 1e-3, "max_epochs": 2, "seed": seed})
            rows = train(cfg, dataset_from_events(small_events, cfg)).log_rows
            deltas.append(rows[1]["loss"] - rows[0]["loss"])
        assert np.median(deltas) <= 0

    def test_seed_determinism(self, small_dataset):
        a = evaluate(train(small_dataset.config, small_dataset).model, small_dataset, small_dataset.config)
        b = evaluate(train(small_dataset.config, small_dataset).model, small_dataset, small_dataset.config)
        assert a == b

    def test_early_stopping(self, small_dataset):
        result = train(small_dataset.config.replace(max_epochs=30, patience=1, lr=0.5), small_dataset)
        assert len(result.log_rows) < 30
        assert result.best_val_auc == max(r["val_auc"] for r in result.log_rows)

    def test_empty_split(self, small_dataset):
        from dataclasses import replace
        with pytest.raises(TrainingError):
            train(small_dataset.config, replace(small_dataset, val=[]))


@pytest.fixture
def fake_training(monkeypatch):
    """Replace train/test with a deterministic stub so enumeration tests stay fast."""
    calls = []

    def stub(config, dataset, evaluator=None):
        calls.append(config)
        return {"AUC": 0.8 - config.noise_rate / 4, "MRR": 0.5}
    monkeypatch.setattr(experiments, "train_and_test", stub)
    return calls


class TestExperiments:
    def test_ablation_variants(self, small_dataset, fake_training):
        rows = experiments.run_ablation(small_dataset.config, small_dataset)
        assert [r["variant"] for r in rows if r["metric"] == "AUC"] == list(VARIANTS)

    def test_robustness_grid(self, small_events, fake_training):
        seqs = events_to_sequences(small_events)
        rows = experiments.run_robustness(ExperimentConfig(**FAST), seqs)
        aucs = [r for r in rows if r["metric"] == "AUC"]
        assert sorted({r["noise_rate"] for r in aucs}) == [0.0, 0.1, 0.2, 0.3]
        assert {r["augmentation"] for r in aucs} == set(AUGMENTATIONS)
        assert {r["variant"] for r in aucs} == {"full", "w/o SD", "w/o LD"}
        for r in rows:
            if r["metric"] == "drop_AUC":
                assert r["value"] == pytest.approx(r["noise_rate"] / 4 / 0.8)
                if r["noise_rate"] == 0:
                    assert r["value"] == 0.0

    def test_robustness_needs_clean(self, small_events, fake_training):
        with pytest.raises(ValueError):
            experiments.run_robustness(ExperimentConfig(**FAST), events_to_sequences(small_events), rates=[0.1])

    def test_sweep_order(self, small_events, fake_training):
        rows = experiments.run_sweep(ExperimentConfig(**FAST), events_to_sequences(small_events), "tau",
                                     [0.1, 0.2, 0.4])
        assert [r["param_value"] for r in rows if r["metric"] == "AUC"] == [0.1, 0.2, 0.4]
        assert [c.tau for c in fake_training] == [0.1, 0.2, 0.4]

    def test_sweep_omega_rebuilds(self, small_events, fake_training):
        experiments.run_sweep(ExperimentConfig(**FAST), events_to_sequences(small_events), "omega", [60, 720])
        assert [c.omega_minutes for c in fake_training] == [60.0, 720.0]

    def test_ablation_rejects_baseline(self, small_dataset):
        with pytest.raises(ValueError):
            experiments.run_ablation(small_dataset.config.replace(model="gru"), small_dataset)

    def test_sweep_unknown(self, small_events):
        with pytest.raises(ValueError):
            experiments.run_sweep(ExperimentConfig(**FAST), events_to_sequences(small_events), "gamma", [0.1])

    def test_single_value_sweep_is_plain_run(self, small_events):
        cfg = ExperimentConfig(**FAST)
        seqs = events_to_sequences(small_events)
        rows = experiments.run_sweep(cfg, seqs, "lambda", [0.1])
        ds = build_dataset(seqs, cfg)
        direct = evaluate(train(cfg, ds).model, ds, cfg)
        assert {r["metric"]: r["value"] for r in rows} == direct

    def test_summary(self, tmp_path):
        rows = [{"metric": "AUC", "value": v, "variant": "full", "seed": s, "split": "test"}
                for s, v in enumerate([0.7, 0.8, 0.9])]
        summary = experiments.write_csv_summary(rows, tmp_path / "s.csv")
        assert summary[0]["median"] == 0.8 and summary[0]["n_seeds"] == 3
        assert "median" in (tmp_path / "s.csv").read_text().splitlines()[0]
        experiments.write_jsonl(rows, tmp_path / "r.jsonl")
        assert experiments.read_jsonl(tmp_path / "r.jsonl") == rows
        assert experiments.median_value(rows, "AUC", variant="full") == 0.8
        with pytest.raises(KeyError):
            experiments.median_value(rows, "AUC", variant="w/o SI")


class TestStorage:
    def test_preprocess_round_trip(self, tmp_path, small_events):
        generate_synthetic(SMALL_SPEC, tmp_path / "ev.tsv")
        info = preprocess(tmp_path / "ev.tsv", 360, tmp_path / "data")
        assert info["meta"]["n_events"] == len(small_events)
        assert info["diagnostics"]["sessions_per_user"] == SMALL_SPEC.sessions_per_user
        seqs, meta = load_sequences(tmp_path / "data")
        assert meta["omega_minutes"] == 360.0
        assert seqs == parse_events(tmp_path / "ev.tsv")

    def test_missing_events(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_sequences(tmp_path)

    def test_resolve_omega(self):
        cfg = ExperimentConfig()
        assert resolve_omega(cfg, set(), {"omega_minutes": 60}).omega_minutes == 60
        assert resolve_omega(cfg, {"omega_minutes"}, {"omega_minutes": 60}).omega_minutes == 360
        assert resolve_omega(cfg, set(), {}) is cfg


def write_conf(path, **values):
    path.write_text("".join(f"{k} = {v}\n" for k, v in values.items()))
    return str(path)


class TestCLI:
    def test_pipeline(self, tmp_path, capsys):
        spec = write_conf(tmp_path / "spec.conf", n_users=40, n_items=120, n_categories=6, sessions_per_user=4)
        conf = write_conf(tmp_path / "run.conf", **FAST)
        assert main(["synth", "--spec", spec, "--out", str(tmp_path / "ev.tsv")]) == 0
        assert main(["preprocess", "--events", str(tmp_path / "ev.tsv"), "--omega", "360",
                     "--out", str(tmp_path / "data")]) == 0
        assert main(["train", "--config", conf, "--data", str(tmp_path / "data"), "--out", str(tmp_path / "run")]) == 0
        metrics = experiments.read_jsonl(tmp_path / "run" / "metrics.jsonl")
        assert {(r["split"], r["metric"]) for r in metrics} >= {("test", "AUC"), ("val", "NDCG@10")}
        assert all(r["variant"] == "full" and r["seed"] == 0 for r in metrics)
        assert len(experiments.read_jsonl(tmp_path / "run" / "train_log.jsonl")) == 1
        ck = str(tmp_path / "run" / "checkpoint.json")
        assert main(["eval", "--checkpoint", ck, "--data", str(tmp_path / "data"), "--out", str(tmp_path / "ev")]) == 0
        again = experiments.read_jsonl(tmp_path / "ev" / "metrics.jsonl")
        assert again == [r for r in metrics if r["split"] == "test"]
        capsys.readouterr()
        assert main(["analyze-alpha", "--checkpoint", ck, "--data", str(tmp_path / "data")]) == 0
        rows = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
        assert rows and all(0 < r["value"] < 1 and r["metric"] == "mean_alpha" for r in rows)

    def test_baseline_train(self, tmp_path, small_events):
        from lsidn.data import write_events
        write_events(tmp_path / "ev.tsv", small_events)
        conf = write_conf(tmp_path / "gru.conf", **FAST, model="gru")
        assert main(["train", "--config", conf, "--data", str(tmp_path / "ev.tsv"), "--out", str(tmp_path / "r")]) == 0
        rows = experiments.read_jsonl(tmp_path / "r" / "metrics.jsonl")
        assert {r["variant"] for r in rows} == {"gru"}
        ck = str(tmp_path / "r" / "checkpoint.json")
        assert main(["eval", "--checkpoint", ck, "--data", str(tmp_path / "ev.tsv"), "--out", str(tmp_path / "e")]) == 0
        assert experiments.read_jsonl(tmp_path / "e" / "metrics.jsonl") == [r for r in rows if r["split"] == "test"]

    def test_unknown_key_exit(self, tmp_path, capsys):
        conf = write_conf(tmp_path / "bad.conf", colour="red")
        assert main(["train", "--config", conf, "--data", str(tmp_path), "--out", str(tmp_path / "o")]) == 1
        err = capsys.readouterr().err.strip()
        assert len(err.splitlines()) == 1 and "unknown key" in err

    def test_missing_data_exit(self, tmp_path, capsys):
        assert main(["ablate", "--data", str(tmp_path / "nope.tsv")]) == 1
        assert capsys.readouterr().err.startswith("lsidn ablate: error:")

    def test_bad_rates(self):
        with pytest.raises(SystemExit):
            main(["robustness", "--data", "x", "--rates", "a,b"])

