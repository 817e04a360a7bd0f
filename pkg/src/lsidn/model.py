"""LSIDN assembly: adaptive fusion, prediction head and the training losses."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .encoders import GRU, INIT_SCALE, InterestState, LongTermEncoder, Module, ShortTermEncoder, init_scale, uniform_init
from .numerics import Parameter, Tensor

PROB_CLAMP = 1e-12

VARIANTS = ("full", "w/o LD", "w/o SD", "w/o RI", "w/o CI", "w/o LI", "w/o SI")

_VARIANT_ALIASES = {v.replace("w/o ", "wo_").lower(): v for v in VARIANTS}


def canonical_variant(name: str) -> str:
    if name in VARIANTS:
        return name
    key = name.strip().lower().replace("w/o ", "wo_").replace("-", "_").replace(" ", "_")
    if key in _VARIANT_ALIASES:
        return _VARIANT_ALIASES[key]
    raise ValueError(f"unknown variant {name!r}; expected one of {', '.join(VARIANTS)}")


@dataclass(frozen=True)
class VariantFlags:
    session_division: bool = True
    ssl: bool = True
    recent: bool = True
    current: bool = True
    long: bool = True
    short: bool = True

    @classmethod
    def of(cls, variant: str) -> "VariantFlags":
        v = canonical_variant(variant)
        short = v != "w/o SI"
        current = short and v != "w/o CI"
        return cls(
            session_division=v != "w/o LD",
            ssl=current and v != "w/o SD",
            recent=short and v != "w/o RI",
            current=current,
            long=v != "w/o LI",
            short=short,
        )


# ---------------------------------------------------------------------------
# functional pieces
# ---------------------------------------------------------------------------

def adaptive_fuse(u_long, u_short, v_target, w, b) -> tuple:
    """alpha = sigmoid(w . [u_long, u_short, v_target] + b); fused = alpha*u_long + (1-alpha)*u_short.

    Works on any matching leading dims; ``w`` is (5d, 1) and ``b`` is (1,).
    """
    u_long, u_short, v_target = (x if isinstance(x, Tensor) else Tensor(x) for x in (u_long, u_short, v_target))
    d = v_target.shape[-1]
    if u_long.shape[-1] != 2 * d or u_short.shape[-1] != 2 * d:
        raise nx.ShapeError(f"fusion expects 2d-wide interests for d={d}, got {u_long.shape} and {u_short.shape}")
    if np.shape(w) != (5 * d, 1):
        raise nx.ShapeError(f"fusion weight must be ({5 * d}, 1), got {np.shape(w)}")
    alpha = nx.sigmoid(nx.concat([u_long, u_short, v_target], axis=-1) @ w + b)
    fused = alpha * u_long + (1.0 - alpha) * u_short
    return alpha[..., 0], fused


class PredictionMLP(Module):
    """[u^LS, v_T] (3d) -> ReLU hidden (2d) -> logit.  ``user_width`` overrides the 2d user side."""

    def __init__(self, d: int, rng, user_width: int | None = None):
        self.w1 = Parameter(uniform_init(rng, ((user_width or 2 * d) + d, 2 * d)))
        self.b1 = Parameter(np.zeros(2 * d))
        self.w2 = Parameter(uniform_init(rng, (2 * d, 1)))
        self.b2 = Parameter(np.zeros(1))

    def logit(self, fused: Tensor, target: Tensor) -> Tensor:
        hidden = nx.relu(nx.concat([fused, target], axis=-1) @ self.w1 + self.b1)
        return (hidden @ self.w2 + self.b2)[..., 0]

    def __call__(self, fused, target) -> Tensor:
        return nx.sigmoid(self.logit(fused, target))


def predict(fused, target, mlp: PredictionMLP) -> Tensor:
    fused = fused if isinstance(fused, Tensor) else Tensor(fused)
    target = target if isinstance(target, Tensor) else Tensor(target)
    return mlp(fused, target)


def main_loss(scores, labels) -> Tensor:
    """Mean binary negative log-likelihood over every scored item."""
    scores = scores if isinstance(scores, Tensor) else Tensor(scores)
    y = np.asarray(labels, dtype=np.float64)
    if scores.data.size == 0:
        raise ValueError("main loss over an empty prediction list")
    if y.shape != scores.shape:
        raise nx.ShapeError(f"labels {y.shape} vs scores {scores.shape}")
    p = nx.clip(scores, PROB_CLAMP, 1.0 - PROB_CLAMP)
    ll = y * nx.log(p) + (1.0 - y) * nx.log(1.0 - p)
    return -ll.mean()


def nt_xent_loss(past_reps, future_reps, tau: float, valid=None, denominator: str = "standard",
                 similarity: str = "dot"):
    """Symmetrized in-batch contrastive loss; ``None`` when fewer than two pairs are valid.

    With ``denominator="standard"`` each anchor's softmax runs over every other
    representation (its positive included).  ``"literal"`` drops the positive
    from the denominator, leaving only the 2(n-1) negatives.
    """
    if tau <= 0:
        raise ValueError("temperature must be positive")
    if denominator not in ("standard", "literal"):
        raise ValueError(f"unknown denominator {denominator!r}")
    past_reps = past_reps if isinstance(past_reps, Tensor) else Tensor(past_reps)
    future_reps = future_reps if isinstance(future_reps, Tensor) else Tensor(future_reps)
    if past_reps.shape != future_reps.shape:
        raise nx.ShapeError(f"view shapes differ: {past_reps.shape} vs {future_reps.shape}")
    if valid is not None:
        keep = np.flatnonzero(np.asarray(valid, dtype=bool))
        if len(keep) < past_reps.shape[0]:
            past_reps, future_reps = past_reps[keep], future_reps[keep]
    n = past_reps.shape[0]
    if n < 2:
        return None
    z = nx.concat([past_reps, future_reps], axis=0)
    if similarity == "cosine":
        z = z / nx.l2_norm(z, axis=1, keepdims=True)
    elif similarity != "dot":
        raise ValueError(f"unknown similarity {similarity!r}")
    sim = (z @ nx.swapaxes(z, 0, 1)) * (1.0 / tau)
    idx = np.arange(2 * n)
    partner = np.concatenate([idx[n:], idx[:n]])
    allowed = ~np.eye(2 * n, dtype=bool)
    if denominator == "literal":
        allowed[idx, partner] = False
    positive = sim[idx, partner]
    return (nx.logsumexp(sim, axis=1, mask=allowed) - positive).mean()


def l2_penalty(params) -> Tensor:
    total = Tensor(0.0)
    for p in params:
        total = total + nx.squared_norm(p)
    return total


@dataclass
class LossBundle:
    main: Tensor
    ssl: Tensor | None
    reg: Tensor
    total: Tensor
    lam: float
    beta: float

    def values(self) -> dict:
        return {
            "main": self.main.item(),
            "ssl": None if self.ssl is None else self.ssl.item(),
            "reg": self.reg.item(),
            "total": self.total.item(),
        }


def total_loss(main, ssl, params, lam: float, beta: float) -> LossBundle:
    """main + lam*ssl + beta*sum ||p||^2; the ssl term is dropped when absent."""
    if lam < 0 or beta < 0:
        raise ValueError("loss weights must be non-negative")
    main = main if isinstance(main, Tensor) else Tensor(main)
    reg = l2_penalty(params) if not isinstance(params, (int, float, Tensor)) else (
        params if isinstance(params, Tensor) else Tensor(float(params)))
    if ssl is None:
        total = main + beta * reg
    else:
        ssl = ssl if isinstance(ssl, Tensor) else Tensor(ssl)
        total = main + lam * ssl + beta * reg
    return LossBundle(main, ssl, reg, total, lam, beta)


# ---------------------------------------------------------------------------
# the network
# ---------------------------------------------------------------------------

@dataclass
class Forward:
    scores: Tensor       # (B, N) predicted probabilities
    alpha: np.ndarray    # (B, N)
    fused: Tensor        # (B, N, 2d)
    state: InterestState


class LSIDN(Module):
    """Long- and short-term interest network over an integer item vocabulary.

    Row 0 of the item table is padding, row 1 the augmentation mask token.
    """

    def __init__(self, n_rows: int, rng, d: int = 40, heads: int = 2, session_len: int = 10,
                 long_len: int | None = None, positional: bool = True, variant: str = "full",
                 init: float = INIT_SCALE):
        self.d = d
        self.variant = canonical_variant(variant)
        self.flags = VariantFlags.of(self.variant)
        with init_scale(init):
            self.item_emb = Parameter(uniform_init(rng, (n_rows, d)))
            self.long = LongTermEncoder(d, rng, heads=heads, max_len=long_len or session_len,
                                        positional=positional)
            self.short = ShortTermEncoder(d, rng, heads=heads, max_len=session_len, positional=positional)
            self.fuse_w = Parameter(uniform_init(rng, (5 * d, 1)))
            self.fuse_b = Parameter(np.zeros(1))
            self.mlp = PredictionMLP(d, rng)
        self.name_parameters()

    def active_parameters(self) -> list:
        """Parameters the current variant can reach; the rest are never trained."""
        f = self.flags
        out = []
        for name, p in self.named_parameters():
            if name.startswith("long.") and not f.long:
                continue
            if name.startswith("short.") and not f.short:
                continue
            if name.startswith("short.enc.") and not f.current:
                continue
            if name.startswith(("short.lstm.", "short.attn_recent.")) and not f.recent:
                continue
            if name.startswith("fuse_") and not (f.long and f.short):
                continue
            out.append(p)
        return out

    def state_arrays(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_arrays(self, arrays: dict):
        params = dict(self.named_parameters())
        missing = set(params) - set(arrays)
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {sorted(missing)}")
        for name, p in params.items():
            if arrays[name].shape != p.shape:
                raise nx.ShapeError(f"{name}: checkpoint shape {arrays[name].shape} vs model {p.shape}")
            p.data = np.array(arrays[name], dtype=np.float64)

    def embed(self, ids) -> Tensor:
        return nx.embedding_lookup(self.item_emb, ids)

    def forward(self, batch) -> Forward:
        f, d = self.flags, self.d
        target = self.embed(batch.candidates)                       # (B, N, d)
        bsz, n = batch.candidates.shape
        state = InterestState()
        zeros = Tensor(np.zeros((bsz, n, 2 * d)))
        u_long = self.long(self.embed(batch.hist), batch.hist_mask, batch.sess_mask, target, state) if f.long else zeros
        if f.short:
            u_short = self.short(self.embed(batch.cur), batch.cur_mask, self.embed(batch.recent), batch.recent_mask,
                                 batch.gap_prev, batch.gap_target, target,
                                 use_current=f.current, use_recent=f.recent, state=state)
        else:
            u_short = zeros
        if f.long and f.short:
            alpha, fused = adaptive_fuse(u_long, u_short, target, self.fuse_w, self.fuse_b)
            alpha = alpha.data
        elif f.long:
            alpha, fused = np.ones((bsz, n)), u_long
        else:
            alpha, fused = np.zeros((bsz, n)), u_short
        return Forward(self.mlp(fused, target), alpha, fused, state)

    def ssl_loss(self, batch, tau: float, denominator: str = "standard", similarity: str = "dot"):
        if batch.view_a is None or len(batch.view_a) < 2:
            return None
        a = self.short.current(self.embed(batch.view_a), batch.view_a_mask)
        b = self.short.current(self.embed(batch.view_b), batch.view_b_mask)
        return nt_xent_loss(a, b, tau, denominator=denominator, similarity=similarity)

    def loss(self, batch, lam: float = 0.1, beta: float = 0.1, tau: float = 0.2,
             denominator: str = "standard", similarity: str = "dot") -> LossBundle:
        out = self.forward(batch)
        main = main_loss(out.scores, batch.labels)
        ssl = self.ssl_loss(batch, tau, denominator, similarity) if self.flags.ssl else None
        return total_loss(main, ssl, self.active_parameters(), lam, beta)


class GRUBaseline(Module):
    """Plain sequence baseline: one GRU over the recent history, scored by the same MLP head.

    Consumes the undivided history (the ``w/o LD`` encoding) and has no
    short-term path, fusion or contrastive task.
    """

    variant = "gru"
    flags = VariantFlags(session_division=False, ssl=False, recent=False, current=False, short=False)

    def __init__(self, n_rows: int, rng, d: int = 40, init: float = INIT_SCALE):
        self.d = d
        with init_scale(init):
            self.item_emb = Parameter(uniform_init(rng, (n_rows, d)))
            self.gru = GRU(d, rng)
            self.mlp = PredictionMLP(d, rng, user_width=d)
        self.name_parameters()

    active_parameters = LSIDN.active_parameters
    state_arrays = LSIDN.state_arrays
    load_arrays = LSIDN.load_arrays
    embed = LSIDN.embed

    def forward(self, batch) -> Forward:
        target = self.embed(batch.candidates)
        bsz, n = batch.candidates.shape
        # masked steps carry the state, so the last column is the final real hidden state
        hidden = self.gru(self.embed(batch.hist[:, 0]), batch.hist_mask[:, 0])[:, -1]
        user = hidden.reshape((bsz, 1, self.d)) * Tensor(np.ones((1, n, 1)))
        return Forward(self.mlp(user, target), np.ones((bsz, n)), user, InterestState())

    def loss(self, batch, lam: float = 0.1, beta: float = 0.1, **_) -> LossBundle:
        main = main_loss(self.forward(batch).scores, batch.labels)
        return total_loss(main, None, self.active_parameters(), lam, beta)
