"""End-to-end acceptance gate: one PASS/FAIL line per criterion."""
import math
import time
from collections import Counter
from pathlib import Path

import numpy as np
import pytest
from conftest import sequence, session, tiny_setup

from lsidn.augment import homogeneous_exchange
from lsidn.data import events_to_sequences, sess_div
from lsidn.encoders import InterestState
from lsidn.harness import experiments
from lsidn.harness.cli import main
from lsidn.harness.config import AUGMENTATIONS, SyntheticSpec, load_config
from lsidn.harness.dataset import build_dataset, dataset_from_events
from lsidn.harness.synthetic import generate_events
from lsidn.harness.train import Evaluator
from lsidn.metrics import RankedPool, auc, drop_rate, gauc, ndcg_at_k
from lsidn.model import VARIANTS, adaptive_fuse, main_loss, nt_xent_loss
from lsidn.numerics import Tensor, grad_check

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
DESK = CONFIGS / "desk.conf"
ROBUST = CONFIGS / "desk_robustness.conf"
SEEDS = 3


def scan_sessions(stamps, omega):
    out, cur = [], [0]
    for k in range(1, len(stamps)):
        if stamps[k] - stamps[k - 1] >= omega:
            out.append(cur)
            cur = []
        cur.append(k)
    return out + [cur]


def test_gradient_soundness(acceptance):
    start = time.perf_counter()
    model, batch, config = tiny_setup()
    assert (len(batch.candidates), config.d, config.b, config.l, config.r) == (4, 8, 2, 4, 4)
    assert batch.view_a is not None

    def f():
        return model.loss(batch, lam=0.1, beta=0.1).total
    report = grad_check(f, model.active_parameters(), max_entries=150, rng=0)
    elapsed = time.perf_counter() - start
    acceptance(1, "end-to-end finite-difference gradient check",
               report.passed and report.n_checked >= 100 and report.tol == 1e-4 and elapsed < 60,
               f"max rel err {report.max_rel_error:.2e} over {report.n_checked} entries, {elapsed:.1f}s")


def test_closed_form_losses(acceptance):
    same = np.full((2, 3), 1 / math.sqrt(3))
    ident = nt_xent_loss(same, same, 1.0).item()
    ortho = np.array([[1.0, 0, 0, 0], [0, 0, 1.0, 0]])
    orth = nt_xent_loss(ortho, ortho, 1.0).item()
    half = main_loss(np.full(10, 0.5), [1, 0, 0, 0, 0, 1, 0, 0, 0, 0]).item()
    errs = (abs(ident - math.log(3)), abs(orth + math.log(math.e / (math.e + 2))), abs(half - math.log(2)))
    acceptance(2, "closed-form loss values", errs[0] <= 1e-9 and errs[1] <= 1e-9 and errs[2] <= 1e-12,
               "errors " + ", ".join(f"{e:.1e}" for e in errs))


def test_oracle_equivalence(acceptance):
    rng = np.random.default_rng(3)
    omega = 3600
    sess_ok = True
    for k in range(1000):
        n = int(rng.integers(1, 40))
        stamps = np.cumsum(rng.choice([0, 60, 600, 3599, 3600, 3601, 86400], size=n))
        got = [[e.item_id for e in s.events] for s in sess_div(sequence(stamps), omega)]
        want = [[f"i{j}" for j in grp] for grp in scan_sessions(stamps, omega)]
        sess_ok &= got == want

    pools = [RankedPool("u", float(rng.integers(0, 5)), tuple(rng.integers(0, 5, size=9).astype(float)))
             for _ in range(200)]
    pos = [p.target_score for p in pools]
    neg = [s for p in pools for s in p.negative_scores]
    brute = sum((a > b) + 0.5 * (a == b) for a in pos for b in neg) / (len(pos) * len(neg))
    auc_err = abs(auc(pools) - brute)

    rank_two = [RankedPool("u", 0.5, (0.9,) + tuple(rng.uniform(0, 0.4, size=48))) for _ in range(20)]
    ndcg_err = abs(ndcg_at_k(rank_two, 10) - 1 / math.log2(3))

    two_users = [RankedPool("a", 1.0, (0.0,))] + [RankedPool("b", 1.0, (0.0,)), RankedPool("b", 0.0, (1.0,)),
                                                   RankedPool("b", 0.5, (0.5,))]
    g = gauc(two_users)
    acceptance(3, "oracle equivalence (sess_div, AUC, NDCG@10, GAUC)",
               sess_ok and auc_err <= 1e-12 and ndcg_err <= 1e-12 and g == 0.625,
               f"sess_div exact={sess_ok}, auc err {auc_err:.1e}, ndcg err {ndcg_err:.1e}, gauc {g}")


def test_augmentation_conservation(acceptance):
    rng = np.random.default_rng(4)
    ok = identity = True
    for _ in range(1000):
        n_p, n_f = int(rng.integers(1, 10)), int(rng.integers(1, 10))
        stamps = np.sort(rng.integers(0, 50, size=n_p + n_f))
        items = rng.integers(0, 6, size=n_p + n_f)
        past = session([(items[k], stamps[k]) for k in range(n_p)])
        future = session([(items[k], stamps[k]) for k in range(n_p, n_p + n_f)])
        a, b = homogeneous_exchange(past, future, float(rng.random()), rng)
        ok &= Counter(a.items + b.items) == Counter(past.items + future.items)
        ok &= a.timestamps == sorted(a.timestamps) and b.timestamps == sorted(b.timestamps)
        identity &= homogeneous_exchange(past, future, 0.0, rng) == (past, future)
    acceptance(4, "augmentation conserves items, keeps time order, gamma=0 is identity", ok and identity,
               f"conserved and sorted={ok}, identity={identity}")


def test_cross_session_isolation(acceptance):
    model, _, _ = tiny_setup(scale=0.5)
    rng = np.random.default_rng(5)
    d, b, l = 8, 3, 4  # noqa: E741
    hist = rng.normal(size=(1, b, l, d))
    mask = np.ones((1, b, l), bool)
    mask[0, 0, 3] = False
    target = rng.normal(size=(1, 1, d))

    def intra(x):
        state = InterestState()
        model.long(Tensor(x), mask, mask.any(-1), Tensor(target), state)
        return state.intra.data[0]
    step, worst, own = 1e-5, 0.0, 0.0
    for m in range(b):
        for j in range(l):
            for k in range(d):
                up, down = hist.copy(), hist.copy()
                up[0, m, j, k] += step
                down[0, m, j, k] -= step
                sens = (intra(up) - intra(down)) / (2 * step)
                others = [n for n in range(b) if n != m]
                worst = max(worst, np.abs(sens[others]).max())
                if mask[0, m, j]:
                    own = max(own, np.abs(sens[m]).max())
    acceptance(5, "cross-session isolation of session encodings", worst <= 1e-10 and own > 1e-3,
               f"max off-session sensitivity {worst:.1e}, own-session {own:.2e}")


def test_fusion_invariants(acceptance):
    rng = np.random.default_rng(6)
    d = 8
    inside, recompose = True, 0.0
    for _ in range(10):
        w, bias = rng.normal(scale=0.5, size=(5 * d, 1)), rng.normal(size=1)
        ul, us, v = rng.normal(size=(1000, 2 * d)), rng.normal(size=(1000, 2 * d)), rng.normal(size=(1000, d))
        alpha, fused = adaptive_fuse(ul, us, v, w, bias)
        a = alpha.data
        inside &= bool(np.all((a > 0) & (a < 1)))
        recompose = max(recompose, np.abs(fused.data - (a[:, None] * ul + (1 - a[:, None]) * us)).max())
    model, batch, _ = tiny_setup()
    out = model.forward(batch)
    st = out.state
    a = out.alpha[..., None]
    recompose = max(recompose, np.abs(out.fused.data - (a * st.long.data + (1 - a) * st.short.data)).max())
    inside &= bool(np.all((out.alpha > 0) & (out.alpha < 1)))
    acceptance(6, "fusion weight in (0,1) and convex recomposition", inside and recompose <= 1e-12,
               f"10^4 random passes, max recomposition error {recompose:.1e}")


@pytest.fixture(scope="module")
def desk():
    config, _ = load_config(DESK)
    events = generate_events(SyntheticSpec())
    return config, events


@pytest.fixture(scope="module")
def clean_runs(desk):
    config, events = desk
    dataset = dataset_from_events(events, config)
    start = time.perf_counter()
    rows = experiments.run_ablation(config, dataset, n_seeds=SEEDS, variants=["full", "w/o LI", "w/o SI"])
    return rows, time.perf_counter() - start


@pytest.mark.slow
def test_synthetic_effectiveness(acceptance, clean_runs):
    rows, elapsed = clean_runs
    med = {v: experiments.median_value(rows, "AUC", variant=v) for v in ("full", "w/o LI", "w/o SI")}
    ok = med["full"] - med["w/o LI"] >= 0.01 and med["full"] - med["w/o SI"] >= 0.01 and elapsed <= 900
    acceptance(7, "full model beats w/o LI and w/o SI on synthetic test AUC", ok,
               "median AUC " + ", ".join(f"{k} {v:.4f}" for k, v in med.items()) + f"; {elapsed:.0f}s")


@pytest.mark.slow
def test_synthetic_robustness(acceptance):
    config, _ = load_config(ROBUST)
    sequences = events_to_sequences(generate_events(SyntheticSpec()))
    drops, clean_auc = {"full": [], "w/o SD": []}, {"full": [], "w/o SD": []}
    for seed in experiments.seeds_for(config, SEEDS):
        base = config.replace(seed=seed)
        clean_ds = build_dataset(sequences, base)
        noisy_ds = build_dataset(sequences, base.replace(noise_rate=0.3))
        assert noisy_ds.test == clean_ds.test
        for variant in drops:
            cfg = base.replace(variant=variant)
            clean = experiments.train_and_test(cfg, clean_ds, Evaluator(clean_ds, cfg))["AUC"]
            noisy_cfg = cfg.replace(noise_rate=0.3)
            noisy = experiments.train_and_test(noisy_cfg, noisy_ds, Evaluator(noisy_ds, noisy_cfg))["AUC"]
            clean_auc[variant].append(clean)
            drops[variant].append(drop_rate(clean, noisy))
    med = {v: float(np.median(x)) for v, x in drops.items()}
    acceptance(8, "AUC drop at noise 0.3: full <= w/o SD", med["full"] <= med["w/o SD"],
               "median drop " + ", ".join(f"{k} {v:.4f}" for k, v in med.items())
               + "; per seed " + str({k: [round(x, 4) for x in v] for k, v in drops.items()})
               + "; clean AUC " + str({k: [round(x, 4) for x in v] for k, v in clean_auc.items()}))


TINY_SPEC = dict(n_users=40, n_items=120, n_categories=6, sessions_per_user=4)
TINY_RUN = dict(d=8, batch_size=64, r=5, max_seq_len=20, lr=0.01, beta=0.0001, init_scale=0.3, max_epochs=1)


def write_conf(path, values):
    path.write_text("".join(f"{k} = {v}\n" for k, v in values.items()))
    return str(path)


@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec = write_conf(root / "spec.conf", TINY_SPEC)
    assert main(["synth", "--spec", spec, "--out", str(root / "events.tsv")]) == 0
    assert main(["preprocess", "--events", str(root / "events.tsv"), "--omega", "360",
                 "--out", str(root / "data")]) == 0
    return root, write_conf(root / "run.conf", TINY_RUN)


def test_cli_determinism(acceptance, tiny_data):
    root, conf = tiny_data
    data = str(root / "data")
    commands = {
        "train": (["train", "--config", conf, "--data", data], "metrics.jsonl"),
        "ablate": (["ablate", "--config", conf, "--data", data, "--variants", "full,w/o LD"], "ablation.jsonl"),
        "robustness": (["robustness", "--config", conf, "--data", data, "--rates", "0,0.2",
                        "--variants", "full", "--augmentations", "exchange,crop"], "robustness.jsonl"),
        "sweep": (["sweep", "--config", conf, "--data", data, "--param", "omega", "--values", "120,720"],
                  "sweep_omega.jsonl"),
    }
    same = {}
    for name, (args, out_file) in commands.items():
        outputs = []
        for run in range(2):
            out = root / f"{name}{run}"
            assert main(args + ["--out", str(out)]) == 0
            outputs.append((out / out_file).read_bytes())
        same[name] = outputs[0] == outputs[1]
    ck = str(root / "train0" / "checkpoint.json")
    evals = []
    for run in range(2):
        assert main(["eval", "--checkpoint", ck, "--data", data, "--out", str(root / f"eval{run}")]) == 0
        evals.append((root / f"eval{run}" / "metrics.jsonl").read_bytes())
    same["eval"] = evals[0] == evals[1]
    acceptance(9, "CLI reruns reproduce metric outputs bit-identically", all(same.values()), str(same))


def test_protocol_completeness(acceptance, tiny_data):
    root, conf = tiny_data
    data = str(root / "data")
    assert main(["ablate", "--config", conf, "--data", data, "--out", str(root / "p_ablate")]) == 0
    assert main(["robustness", "--config", conf, "--data", data, "--out", str(root / "p_rob")]) == 0
    ablation = experiments.read_jsonl(root / "p_ablate" / "ablation.jsonl")
    robust = experiments.read_jsonl(root / "p_rob" / "robustness.jsonl")
    variants = [r["variant"] for r in ablation if r["metric"] == "AUC"]
    rates = sorted({r["noise_rate"] for r in robust})
    augs = sorted({r["augmentation"] for r in robust})
    swept = {}
    for param, values in (("tau", "0.1,0.2,0.4"), ("lambda", "0,0.1,0.5"), ("omega", "60,360,1440")):
        assert main(["sweep", "--config", conf, "--data", data, "--param", param, "--values", values,
                     "--out", str(root / "p_sweep")]) == 0
        rows = experiments.read_jsonl(root / "p_sweep" / f"sweep_{param}.jsonl")
        swept[param] = [r["param_value"] for r in rows if r["metric"] == "AUC"]
    ok = (variants == list(VARIANTS) and rates == [0.0, 0.1, 0.2, 0.3] and augs == sorted(AUGMENTATIONS)
          and swept == {"tau": [0.1, 0.2, 0.4], "lambda": [0.0, 0.1, 0.5], "omega": [60.0, 360.0, 1440.0]})
    acceptance(10, "ablate, robustness and sweep cover the full protocol", ok,
               f"{len(variants)} variants, rates {rates}, augmentations {augs}, sweeps {sorted(swept)}")
