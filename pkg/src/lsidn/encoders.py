"""Interest encoders: session transformer, GRU evolution, attention pooling,
time-aware LSTM, and the composed long-term / short-term encoders.

Batched layout conventions: ``B`` instances, ``N`` scored candidates per
instance, ``S`` history sessions, ``L`` positions per session, ``R`` recent
events, ``d`` embedding width.  Masks are boolean numpy arrays.
"""
from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import Parameter, Tensor

INIT_SCALE = 0.01
_init_scale = [INIT_SCALE]


def uniform_init(rng, shape, scale: float | None = None) -> np.ndarray:
    """Weights drawn from U(-scale, scale); biases and norm gains are set elsewhere."""
    scale = _init_scale[-1] if scale is None else scale
    return rng.uniform(-scale, scale, size=shape)


@contextmanager
def init_scale(scale: float):
    """Temporarily change the default bound used by ``uniform_init``."""
    if not scale > 0:
        raise ValueError("init scale must be positive")
    _init_scale.append(float(scale))
    try:
        yield
    finally:
        _init_scale.pop()


class Module:
    """Attribute-registered parameters and child modules."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix + name + ".")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def name_parameters(self, prefix: str = ""):
        for name, p in self.named_parameters(prefix):
            p.name = name


def _broadcast_to(x: Tensor, shape: tuple) -> Tensor:
    # multiply by ones so the backward pass sums over the broadcast axes
    return x * np.ones(shape)


# ---------------------------------------------------------------------------
# intra-session extractor
# ---------------------------------------------------------------------------

class SessionEncoder(Module):
    """One post-norm transformer block over a session, then a masked mean."""

    def __init__(self, d: int, rng, heads: int = 2, ff_mult: int = 4, max_len: int = 10,
                 positional: bool = True):
        if d % heads:
            raise ValueError(f"embedding size {d} not divisible by {heads} heads")
        self.d, self.heads, self.max_len, self.positional = d, heads, max_len, positional
        self.pos = Parameter(uniform_init(rng, (max_len, d)))
        self.wq = Parameter(uniform_init(rng, (d, d)))
        self.wk = Parameter(uniform_init(rng, (d, d)))
        self.wv = Parameter(uniform_init(rng, (d, d)))
        self.wo = Parameter(uniform_init(rng, (d, d)))
        self.ln1_g = Parameter(np.ones(d))
        self.ln1_b = Parameter(np.zeros(d))
        self.ff_w1 = Parameter(uniform_init(rng, (d, ff_mult * d)))
        self.ff_b1 = Parameter(np.zeros(ff_mult * d))
        self.ff_w2 = Parameter(uniform_init(rng, (ff_mult * d, d)))
        self.ff_b2 = Parameter(np.zeros(d))
        self.ln2_g = Parameter(np.ones(d))
        self.ln2_b = Parameter(np.zeros(d))

    def encode(self, x: Tensor, mask: np.ndarray) -> Tensor:
        """Per-position outputs for ``x`` of shape (M, L, d)."""
        m, length, d = x.shape
        if length > self.max_len and self.positional:
            raise nx.ShapeError(f"session length {length} exceeds positional table {self.max_len}")
        h, dh = self.heads, d // self.heads
        if self.positional:
            x = x + self.pos[:length]

        def split(t):
            return nx.transpose(t.reshape(m, length, h, dh), (0, 2, 1, 3))

        q, k, v = split(x @ self.wq), split(x @ self.wk), split(x @ self.wv)
        scores = (q @ nx.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(dh))
        attn = nx.softmax(scores, axis=-1, mask=mask[:, None, None, :])
        ctx = nx.transpose(attn @ v, (0, 2, 1, 3)).reshape(m, length, d)
        h1 = nx.layer_norm(x + ctx @ self.wo, self.ln1_g, self.ln1_b)
        ff = nx.relu(h1 @ self.ff_w1 + self.ff_b1) @ self.ff_w2 + self.ff_b2
        return nx.layer_norm(h1 + ff, self.ln2_g, self.ln2_b)

    def __call__(self, x: Tensor, mask) -> Tensor:
        """Pool sessions of shape (..., L, d) to (..., d), ignoring masked positions."""
        mask = np.asarray(mask, dtype=bool)
        lead, (length, d) = x.shape[:-2], x.shape[-2:]
        flat = x.reshape(-1, length, d)
        fmask = mask.reshape(-1, length)
        out = nx.mean_pool(self.encode(flat, fmask), fmask, axis=-2)
        return out.reshape(lead + (d,))


def sess_enc_forward(session_embeddings, pad_mask, encoder: SessionEncoder) -> Tensor:
    """Encode a single (L, d) session to its d-vector interest."""
    pad_mask = np.asarray(pad_mask, dtype=bool)
    if not pad_mask.any():
        raise ValueError("session encoder needs at least one unmasked position")
    x = session_embeddings if isinstance(session_embeddings, Tensor) else Tensor(session_embeddings)
    return encoder(x.reshape((1,) + x.shape), pad_mask[None])[0]


# ---------------------------------------------------------------------------
# inter-session evolution
# ---------------------------------------------------------------------------

class GRU(Module):
    def __init__(self, d: int, rng):
        self.d = d
        self.w = Parameter(uniform_init(rng, (d, 3 * d)))   # input -> [z | r | n]
        self.u_zr = Parameter(uniform_init(rng, (d, 2 * d)))
        self.u_n = Parameter(uniform_init(rng, (d, d)))
        self.b = Parameter(np.zeros(3 * d))

    def __call__(self, x: Tensor, mask=None) -> Tensor:
        """Run over (B, T, d) from a zero state; masked steps carry the state."""
        bsz, steps, d = x.shape
        xw = x @ self.w + self.b
        h = Tensor(np.zeros((bsz, d)))
        outs = []
        for t in range(steps):
            xt = xw[:, t]
            zr = nx.sigmoid(xt[:, :2 * d] + h @ self.u_zr)
            z, r = zr[:, :d], zr[:, d:]
            n = nx.tanh(xt[:, 2 * d:] + (r * h) @ self.u_n)
            h_new = (1.0 - z) * n + z * h
            if mask is not None:
                m = np.asarray(mask, dtype=np.float64)[:, t:t + 1]
                h_new = h_new * m + h * (1.0 - m)
            h = h_new
            outs.append(h)
        return nx.stack(outs, axis=1)


def gru_forward(inputs, gru: GRU) -> list:
    if not len(inputs):
        raise ValueError("GRU needs at least one input")
    x = nx.stack([v if isinstance(v, Tensor) else Tensor(v) for v in inputs], axis=0)
    out = gru(x.reshape((1,) + x.shape))
    return [out[0, t] for t in range(len(inputs))]


# ---------------------------------------------------------------------------
# attention pooling
# ---------------------------------------------------------------------------

class AttnPool(Module):
    def __init__(self, d: int, rng):
        self.w = Parameter(uniform_init(rng, (d, d)))

    def __call__(self, target: Tensor, items: Tensor, mask=None, return_weights: bool = False):
        """target (B, N, d), items (B, T, d) -> pooled (B, N, d)."""
        logits = target @ nx.swapaxes(items @ self.w, -1, -2)
        weights = nx.softmax(logits, axis=-1, mask=None if mask is None else np.asarray(mask, bool)[:, None, :])
        pooled = weights @ items
        return (pooled, weights) if return_weights else pooled


def attn_pool(target, items, W, return_weights: bool = False):
    """Target-conditioned softmax pooling of a list of d-vectors."""
    if not len(items):
        raise ValueError("attention pooling needs at least one item")
    t = target if isinstance(target, Tensor) else Tensor(target)
    stacked = nx.stack([v if isinstance(v, Tensor) else Tensor(v) for v in items], axis=0)
    w = W if isinstance(W, Tensor) else Tensor(W)
    logits = (stacked @ w) @ t
    weights = nx.softmax(logits, axis=-1)
    pooled = weights @ stacked
    return (pooled, weights) if return_weights else pooled


# ---------------------------------------------------------------------------
# time-aware LSTM
# ---------------------------------------------------------------------------

class Time4LSTM(Module):
    """LSTM whose cell update is gated by two time gates.

    For step j with input x_j and log-scaled gaps p_j = log(1 + gap to the
    previous event) and q_j = log(1 + gap to the prediction time), in minutes::

        i, f, o = sigmoid(x W_i + h U_i + b_i), ...    (standard LSTM gates)
        g       = tanh(x W_g + h U_g + b_g)
        T1      = sigmoid(x V_1 + p_j * w_1 + c_1)
        T2      = sigmoid(x V_2 + q_j * w_2 + c_2)
        c_j     = f * c_{j-1} + i * T1 * T2 * g
        h_j     = o * tanh(c_j)

    With T1 = T2 = 1 this is the plain LSTM recurrence.
    """

    def __init__(self, d: int, rng):
        self.d = d
        self.w = Parameter(uniform_init(rng, (d, 4 * d)))   # [i | f | o | g]
        self.u = Parameter(uniform_init(rng, (d, 4 * d)))
        self.b = Parameter(np.zeros(4 * d))
        self.tw = Parameter(uniform_init(rng, (d, 2 * d)))  # [T1 | T2]
        self.tv = Parameter(uniform_init(rng, (2 * d,)))
        self.tb = Parameter(np.zeros(2 * d))

    def time_features(self, p: np.ndarray, q: np.ndarray) -> np.ndarray:
        d = self.d
        return np.concatenate([np.repeat(p[..., None], d, -1), np.repeat(q[..., None], d, -1)], -1)

    def __call__(self, x: Tensor, p, q, mask=None) -> Tensor:
        """x (B, R, d); p, q (B, R) log-gap features -> hidden states (B, R, d)."""
        bsz, steps, d = x.shape
        xw = x @ self.w + self.b
        gates_t = nx.sigmoid(x @ self.tw + self.time_features(np.asarray(p, float), np.asarray(q, float)) * self.tv + self.tb)
        time_gate = gates_t[..., :d] * gates_t[..., d:]
        h = Tensor(np.zeros((bsz, d)))
        c = Tensor(np.zeros((bsz, d)))
        outs = []
        for t in range(steps):
            z = xw[:, t] + h @ self.u
            ifo = nx.sigmoid(z[:, :3 * d])
            g = nx.tanh(z[:, 3 * d:])
            c_new = ifo[:, d:2 * d] * c + ifo[:, :d] * time_gate[:, t] * g
            h_new = ifo[:, 2 * d:] * nx.tanh(c_new)
            if mask is not None:
                m = np.asarray(mask, dtype=np.float64)[:, t:t + 1]
                c_new = c_new * m + c * (1.0 - m)
                h_new = h_new * m + h * (1.0 - m)
            h, c = h_new, c_new
            outs.append(h)
        return nx.stack(outs, axis=1)


def log_gaps(timestamps, target_time: float, prev_time: float | None = None) -> tuple:
    """Log-scaled gap features (minutes) for a run of event timestamps."""
    ts = np.asarray(timestamps, dtype=np.float64)
    if ts.size and np.any(np.diff(ts) < 0):
        raise ValueError("recent events must have non-decreasing timestamps")
    if ts.size and target_time < ts[-1]:
        raise ValueError("prediction time precedes the last recent event")
    prev = np.empty_like(ts)
    if ts.size:
        prev[0] = 0.0 if prev_time is None else ts[0] - prev_time
        prev[1:] = np.diff(ts)
    return np.log1p(prev / 60.0), np.log1p((target_time - ts) / 60.0)


def time4lstm_forward(embeddings, timestamps, target_time: float, lstm: Time4LSTM) -> list:
    if not len(timestamps):
        raise ValueError("Time4LSTM needs at least one recent event")
    p, q = log_gaps(timestamps, target_time)
    x = embeddings if isinstance(embeddings, Tensor) else Tensor(embeddings)
    out = lstm(x.reshape((1,) + x.shape), p[None], q[None])
    return [out[0, t] for t in range(len(timestamps))]


# ---------------------------------------------------------------------------
# composed encoders
# ---------------------------------------------------------------------------

@dataclass
class InterestState:
    intra: Tensor | None = None         # (B, S, d)
    inter: Tensor | None = None         # (B, S, d)
    pooled_intra: Tensor | None = None  # (B, N, d)
    pooled_inter: Tensor | None = None  # (B, N, d)
    long: Tensor | None = None          # (B, N, 2d)
    current: Tensor | None = None       # (B, d)
    recent: Tensor | None = None        # (B, N, d)
    short: Tensor | None = None         # (B, N, 2d)


class LongTermEncoder(Module):
    def __init__(self, d: int, rng, heads: int = 2, max_len: int = 10, positional: bool = True):
        self.enc = SessionEncoder(d, rng, heads=heads, max_len=max_len, positional=positional)
        self.gru = GRU(d, rng)
        self.attn_intra = AttnPool(d, rng)
        self.attn_inter = AttnPool(d, rng)
        self.empty = Parameter(uniform_init(rng, (2 * d,)))

    def __call__(self, hist: Tensor, pos_mask, sess_mask, target: Tensor, state: InterestState | None = None) -> Tensor:
        """hist (B, S, L, d) embedded sessions, oldest first -> u^L (B, N, 2d).

        Rows with no history at all use the learned ``empty`` vector.
        """
        sess_mask = np.asarray(sess_mask, dtype=bool)
        intra = self.enc(hist, pos_mask)
        inter = self.gru(intra, sess_mask)
        u_h = self.attn_intra(target, intra, sess_mask)
        u_hp = self.attn_inter(target, inter, sess_mask)
        long = nx.concat([u_h, u_hp], axis=-1)
        has = sess_mask.any(axis=1).astype(np.float64)[:, None, None]
        if not has.all():
            long = long * has + self.empty * (1.0 - has)
        if state is not None:
            state.intra, state.inter, state.pooled_intra, state.pooled_inter, state.long = intra, inter, u_h, u_hp, long
        return long


class ShortTermEncoder(Module):
    def __init__(self, d: int, rng, heads: int = 2, max_len: int = 10, positional: bool = True):
        self.enc = SessionEncoder(d, rng, heads=heads, max_len=max_len, positional=positional)
        self.lstm = Time4LSTM(d, rng)
        self.attn_recent = AttnPool(d, rng)

    def current(self, cur: Tensor, cur_mask) -> Tensor:
        return self.enc(cur, cur_mask)

    def __call__(self, cur: Tensor, cur_mask, recent: Tensor, recent_mask, p, q, target: Tensor,
                 use_current: bool = True, use_recent: bool = True,
                 state: InterestState | None = None) -> Tensor:
        """-> u^S = [u^r, u^c] of shape (B, N, 2d); a disabled path contributes zeros."""
        bsz, n, d = target.shape
        if use_current:
            u_c = self.current(cur, cur_mask)
            u_c_b = _broadcast_to(u_c.reshape(bsz, 1, d), (bsz, n, d))
        else:
            u_c = Tensor(np.zeros((bsz, d)))
            u_c_b = Tensor(np.zeros((bsz, n, d)))
        if use_recent:
            states = self.lstm(recent, p, q, recent_mask)
            u_r = self.attn_recent(target, states, recent_mask)
        else:
            u_r = Tensor(np.zeros((bsz, n, d)))
        short = nx.concat([u_r, u_c_b], axis=-1)
        if state is not None:
            state.current, state.recent, state.short = u_c, u_r, short
        return short


def long_term_forward(sessions, target, encoder: LongTermEncoder, state: InterestState | None = None) -> Tensor:
    """Single-instance form: ``sessions`` is a list of (len_n, d) embedding arrays."""
    sessions = [s if isinstance(s, Tensor) else Tensor(s) for s in sessions if len(s)]
    if not sessions:
        raise ValueError("long-term encoder needs at least one non-empty session")
    d = sessions[0].shape[-1]
    width = max(s.shape[0] for s in sessions)
    rows, masks = [], []
    for s in sessions:
        pad = width - s.shape[0]
        rows.append(nx.concat([s, Tensor(np.zeros((pad, d)))], axis=0) if pad else s)
        masks.append([True] * s.shape[0] + [False] * pad)
    hist = nx.stack(rows, axis=0).reshape(1, len(sessions), width, d)
    t = target if isinstance(target, Tensor) else Tensor(target)
    out = encoder(hist, np.array(masks)[None], np.ones((1, len(sessions)), bool), t.reshape(1, 1, d), state)
    return out[0, 0]


def short_term_forward(past, recent, recent_times, target_time: float, target, encoder: ShortTermEncoder,
                       use_current: bool = True, use_recent: bool = True,
                       state: InterestState | None = None) -> Tensor:
    """Single-instance form: ``past`` (len_p, d) and ``recent`` (len_r, d) embeddings -> u^S (2d)."""
    if not len(past) and not len(recent):
        raise ValueError("short-term encoder needs a past sub-session or recent events")
    t = target if isinstance(target, Tensor) else Tensor(target)
    d = t.shape[-1]

    def rows(x):
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64).reshape(-1, d))
        return (x, np.ones((1, x.shape[0]), bool)) if x.shape[0] else (Tensor(np.zeros((1, d))), np.zeros((1, 1), bool))

    cur, cur_mask = rows(past)
    rec, rec_mask = rows(recent)
    if len(recent_times):
        p, q = log_gaps(recent_times, target_time)
    else:
        p = q = np.zeros(1)
    out = encoder(cur.reshape(1, *cur.shape), cur_mask, rec.reshape(1, *rec.shape), rec_mask, p[None], q[None],
                  t.reshape(1, 1, d), use_current=use_current, use_recent=use_recent, state=state)
    return out[0, 0]
