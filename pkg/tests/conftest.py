import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lsidn.data import Behavior, Event, Sequence, Session

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def ev(item, t, user="u", cat=None, behavior=Behavior.CLICK):
    return Event(user, str(item), str(cat if cat is not None else item), behavior, int(t))


def session(spec, index=0, user="u"):
    """``[(item, t), ...]`` or ``[(item, t, cat), ...]`` -> Session."""
    return Session(tuple(ev(*row, user=user) if len(row) == 2 else ev(row[0], row[1], user=user, cat=row[2])
                         for row in spec), index)


def sequence(stamps, user="u", items=None, cats=None):
    items = items if items is not None else [f"i{k}" for k in range(len(stamps))]
    cats = cats if cats is not None else items
    return Sequence(user, tuple(ev(i, t, user=user, cat=c) for i, t, c in zip(items, stamps, cats)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_acceptance_lines = []


@pytest.fixture
def acceptance(capsys):
    """Record one PASS/FAIL line for an acceptance criterion; ``check(number, title, ok, detail)``."""
    def check(number, title, ok, detail=""):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
        _acceptance_lines.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return check


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_acceptance_lines):
            terminalreporter.write_line(line)


def tiny_setup(variant="full", seed=0, size=4, scale=0.3, model="lsidn"):
    """A randomly initialised model plus one training batch at the gradient-check scale."""
    from lsidn.harness.config import ExperimentConfig, SyntheticSpec
    from lsidn.harness.dataset import dataset_from_events, encode, training_batch
    from lsidn.harness.synthetic import generate_events
    from lsidn.harness.train import build_model

    spec = SyntheticSpec(n_users=30, n_items=60, n_categories=4, sessions_per_user=4, seed=seed)
    config = ExperimentConfig(d=8, b=2, l=4, r=4, batch_size=size, max_seq_len=8, lam=0.1, beta=0.1,
                              init_scale=scale, variant=variant, seed=seed, model=model)
    dataset = dataset_from_events(generate_events(spec), config)
    model = build_model(config, len(dataset.vocab))
    enc = encode(dataset.train, dataset.vocab, config, model.flags)
    # instances with a future sub-session and distinct targets, so both losses are live
    idx, seen = [], set()
    for k in np.flatnonzero(enc.ssl_ok):
        if enc.target[k] not in seen and enc.hist_mask[k].any():
            idx.append(k)
            seen.add(enc.target[k])
        if len(idx) == size:
            break
    rng = np.random.default_rng(seed)
    batch = training_batch(enc, np.array(idx), config, model.flags, rng, rng, dataset.vocab)
    return model, batch, config
