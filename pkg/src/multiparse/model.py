"""GRU encoder, additive attention, and the attentional decoder step.

State vectors are kept as (1, hidden) row matrices so everything composes
with the 2-D matmul in the numeric core; the encoder states for one source
sequence are stacked into an (m, hidden) matrix. The attention query for
producing step j's context is the previous decoder state, which breaks the
circularity between computing the new state and the context it consumes.

The GRU cell is a single fused tape op with a hand-derived backward pass;
the update gate scales the candidate state, so a saturated gate replaces
the old state entirely:

    z = sigmoid(x W_z + h U_z + b_z)
    r = sigmoid(x W_r + h U_r + b_r)
    hcand = tanh(x W_h + (r * h) U_h + b_h)
    h' = (1 - z) * h + z * hcand
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as nc
from .tensor import Parameter, Tensor

INIT_SCALE = 0.08  # weights start uniform in [-INIT_SCALE, INIT_SCALE], biases at zero


@dataclass
class Dims:
    """Model widths. Defaults are desk scale; production scale is reached by config."""
    embed: int = 64
    hidden: int = 64
    attn: int = 64
    layers: int = 1

    def __post_init__(self):
        for name in ("embed", "hidden", "attn", "layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"Dims.{name} must be >= 1")

    def to_dict(self) -> dict:
        return {"embed": self.embed, "hidden": self.hidden,
                "attn": self.attn, "layers": self.layers}


def _uniform(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)


@dataclass
class GruLayerParams:
    """One recurrent layer: three gates, each with input, recurrent and bias terms."""
    w_z: Parameter
    u_z: Parameter
    b_z: Parameter
    w_r: Parameter
    u_r: Parameter
    b_r: Parameter
    w_h: Parameter
    u_h: Parameter
    b_h: Parameter

    @classmethod
    def create(cls, prefix: str, in_dim: int, hidden: int, rng: np.random.Generator):
        def w(name, shape, zero=False):
            return Parameter(f"{prefix}/{name}",
                             np.zeros(shape) if zero else _uniform(rng, shape))
        return cls(
            w_z=w("w_z", (in_dim, hidden)), u_z=w("u_z", (hidden, hidden)),
            b_z=w("b_z", (1, hidden), zero=True),
            w_r=w("w_r", (in_dim, hidden)), u_r=w("u_r", (hidden, hidden)),
            b_r=w("b_r", (1, hidden), zero=True),
            w_h=w("w_h", (in_dim, hidden)), u_h=w("u_h", (hidden, hidden)),
            b_h=w("b_h", (1, hidden), zero=True),
        )

    @property
    def in_dim(self) -> int:
        return self.w_z.shape[0]

    @property
    def hidden(self) -> int:
        return self.w_z.shape[1]

    def params(self) -> list[Parameter]:
        return [self.w_z, self.u_z, self.b_z, self.w_r, self.u_r, self.b_r,
                self.w_h, self.u_h, self.b_h]


def gru_cell(x: Tensor, h_prev: Tensor, p: GruLayerParams) -> Tensor:
    """One recurrent update. x (B, in_dim), h_prev (B, hidden) -> (B, hidden).

    Fused into a single tape record; the backward closure replays the chain
    rule for all three gates at once.
    """
    if x.data.ndim != 2 or h_prev.data.ndim != 2:
        raise ValueError(f"gru_cell: expected 2-D inputs, got {x.shape} and {h_prev.shape}")
    if x.shape[0] != h_prev.shape[0]:
        raise ValueError(f"gru_cell: batch mismatch {x.shape} vs {h_prev.shape}")
    if x.shape[1] != p.in_dim or h_prev.shape[1] != p.hidden:
        raise ValueError(f"gru_cell: got x {x.shape}, h {h_prev.shape}, "
                         f"layer expects in_dim={p.in_dim}, hidden={p.hidden}")

    xd, hd = x.data, h_prev.data
    z = nc._sigmoid(xd @ p.w_z.data + hd @ p.u_z.data + p.b_z.data)
    r = nc._sigmoid(xd @ p.w_r.data + hd @ p.u_r.data + p.b_r.data)
    rh = r * hd
    t = np.tanh(xd @ p.w_h.data + rh @ p.u_h.data + p.b_h.data)
    out = Tensor((1.0 - z) * hd + z * t)

    u_z, u_r, u_h = p.u_z.data, p.u_r.data, p.u_h.data
    w_z, w_r, w_h = p.w_z.data, p.w_r.data, p.w_h.data

    def backward(g):
        dz = g * (t - hd)
        dah = (g * z) * (1.0 - t * t)
        daz = dz * z * (1.0 - z)
        drh = dah @ u_h.T
        dar = (drh * hd) * r * (1.0 - r)
        dx = daz @ w_z.T + dar @ w_r.T + dah @ w_h.T
        dh = g * (1.0 - z) + drh * r + daz @ u_z.T + dar @ u_r.T
        return (
            dx, dh,
            xd.T @ daz, hd.T @ daz, daz.sum(axis=0, keepdims=True),
            xd.T @ dar, hd.T @ dar, dar.sum(axis=0, keepdims=True),
            xd.T @ dah, rh.T @ dah, dah.sum(axis=0, keepdims=True),
        )

    nc.record(out, (x, h_prev, p.w_z, p.u_z, p.b_z,
                    p.w_r, p.u_r, p.b_r, p.w_h, p.u_h, p.b_h), backward)
    return out


def gru_stack(prefix: str, in_dim: int, hidden: int, layers: int,
              rng: np.random.Generator) -> list[GruLayerParams]:
    """Stacked layers; layer 0 consumes in_dim, the rest consume hidden."""
    return [GruLayerParams.create(f"{prefix}/l{i}", in_dim if i == 0 else hidden,
                                  hidden, rng)
            for i in range(layers)]


def stack_params(layers: list[GruLayerParams]) -> list[Parameter]:
    return [p for layer in layers for p in layer.params()]


def initial_state(layers: list[GruLayerParams]) -> list[Tensor]:
    """Zero state per layer; also the decoder's start state."""
    return [nc.zeros((1, layer.hidden)) for layer in layers]


@dataclass
class Embedding:
    """Token id -> dense row lookup over a (V, dim) table."""
    table: Parameter

    @classmethod
    def create(cls, name: str, vocab_size: int, dim: int, rng: np.random.Generator):
        return cls(Parameter(name, _uniform(rng, (vocab_size, dim))))

    def __call__(self, ids) -> Tensor:
        return nc.rows(self.table, ids)

    @property
    def vocab_size(self) -> int:
        return self.table.shape[0]


@dataclass
class AttentionParams:
    """Additive scoring: score(h, s) = tanh(h W1 + s W2) @ v."""
    w1: Parameter  # (hidden, attn)
    w2: Parameter  # (hidden, attn)
    v: Parameter   # (attn, 1)

    @classmethod
    def create(cls, prefix: str, hidden: int, attn: int, rng: np.random.Generator):
        return cls(w1=Parameter(f"{prefix}/w1", _uniform(rng, (hidden, attn))),
                   w2=Parameter(f"{prefix}/w2", _uniform(rng, (hidden, attn))),
                   v=Parameter(f"{prefix}/v", _uniform(rng, (attn, 1))))

    def params(self) -> list[Parameter]:
        return [self.w1, self.w2, self.v]


@dataclass
class Seq2SeqParams:
    """The parameters one forward pass sees, after any cross-task routing."""
    input_embedding: Embedding
    encoder: list[GruLayerParams]
    attention: AttentionParams
    output_embedding: Embedding
    decoder: list[GruLayerParams]
    output: Parameter  # (2 * hidden, V_out), maps [state; context] to write scores

    def params(self) -> list[Parameter]:
        return ([self.input_embedding.table]
                + stack_params(self.encoder)
                + self.attention.params()
                + [self.output_embedding.table]
                + stack_params(self.decoder)
                + [self.output])


@dataclass
class EncoderOutput:
    """Encoder states plus the per-position bookkeeping the copy mechanism needs.

    Positions are in fed order (the source is reversed before encoding);
    surface[i] and origin[i] give the original token and its index in the
    unreversed utterance, with origin -1 for padding and marker tokens.
    """
    states: Tensor               # (m, hidden), top layer
    surface: tuple[str, ...]
    origin: tuple[int, ...]
    attn_mask: np.ndarray        # (m,) bool, True where attention may look
    copy_mask: np.ndarray        # (m,) bool, True where a copy may point

    def __post_init__(self):
        m = self.states.shape[0]
        if not (len(self.surface) == len(self.origin) == self.attn_mask.size
                == self.copy_mask.size == m):
            raise ValueError("EncoderOutput: field lengths disagree")


def encode(src, net: Seq2SeqParams, *, dropout: float = 0.0,
           rng: np.random.Generator | None = None) -> EncoderOutput:
    """Run the stacked encoder over an already reversed source sequence.

    `src` carries ids/surface/origin/attn_mask/copy_mask (see data.SourceSeq).
    Dropout, when nonzero, is applied to each layer's input, never to the
    recurrent path.
    """
    ids = np.asarray(src.ids)
    if ids.size == 0:
        raise ValueError("encode: empty source")
    x_seq = net.input_embedding(ids)  # (m, embed)
    for layer in net.encoder:
        if dropout:
            x_seq = nc.dropout(x_seq, dropout, rng)
        h = nc.zeros((1, layer.hidden))
        hs = []
        for i in range(ids.size):
            h = gru_cell(nc.rows(x_seq, [i]), h, layer)
            hs.append(h)
        x_seq = nc.stack_rows(hs)
    return EncoderOutput(states=x_seq, surface=tuple(src.surface),
                         origin=tuple(src.origin),
                         attn_mask=np.asarray(src.attn_mask, dtype=bool),
                         copy_mask=np.asarray(src.copy_mask, dtype=bool))


def attention_scores(s_query: Tensor, states: Tensor, ap: AttentionParams,
                     states_proj: Tensor | None = None) -> Tensor:
    """Raw additive scores of each encoder state against one query, shape (m,).

    states_proj caches states @ w1, which is constant across decoder steps.
    Fused into one tape record per call (two when the projection is not
    supplied); called once per decoded token.
    """
    if states_proj is None:
        states_proj = nc.matmul(states, ap.w1)
    sd, pd = s_query.data, states_proj.data
    w2d, vd = ap.w2.data, ap.v.data
    if sd.shape != (1, w2d.shape[0]):
        raise ValueError(f"attention_scores: query shape {sd.shape} does not "
                         f"match (1, {w2d.shape[0]})")
    t = np.tanh(pd + sd @ w2d)             # (m, attn)
    out = Tensor((t @ vd)[:, 0])           # (m,)

    def backward(g):
        dt = g[:, None] * vd.T * (1.0 - t * t)     # (m, attn)
        dq = dt.sum(axis=0, keepdims=True)         # (1, attn)
        return (dq @ w2d.T, dt, sd.T @ dq, t.T @ g[:, None])

    nc.record(out, (s_query, states_proj, ap.w2, ap.v), backward)
    return out


def attention_context(e: Tensor, states: Tensor, attn_mask) -> Tensor:
    """Masked-softmax mix of encoder states, shape (1, hidden), one record.

    Equivalent to softmax(e, mask) @ states; masked positions contribute
    nothing and receive zero gradient.
    """
    alphas = nc.softmax_values(e.data, attn_mask)
    sd = states.data
    out = Tensor(alphas[None, :] @ sd)

    def backward(g):
        dalpha = (g @ sd.T)[0]                            # (m,)
        de = alphas * (dalpha - float(dalpha @ alphas))   # softmax chain
        return (de, alphas[:, None] @ g)

    nc.record(out, (e, states), backward)
    return out


def attend(s_query: Tensor, enc: EncoderOutput, ap: AttentionParams, *,
           states_proj: Tensor | None = None) -> tuple[Tensor, Tensor]:
    """Attention weights over unmasked positions and the mixed context.

    Returns (alphas (m,), context (1, hidden)); masked positions get weight
    exactly 0 and contribute nothing to the context.
    """
    e = attention_scores(s_query, enc.states, ap, states_proj)
    alphas = nc.softmax(e, mask=enc.attn_mask)
    context = nc.matmul(nc.reshape(alphas, (1, alphas.shape[0])), enc.states)
    return alphas, context


def decoder_step(y_prev: int, s_prev: list[Tensor], enc: EncoderOutput,
                 net: Seq2SeqParams, *, dropout: float = 0.0,
                 rng: np.random.Generator | None = None,
                 states_proj: Tensor | None = None
                 ) -> tuple[list[Tensor], Tensor, Tensor]:
    """Advance the decoder by one token.

    Attention is queried with the top layer of the previous state; the
    resulting context is concatenated to the embedded previous token and fed
    to layer 0. Returns (new state per layer, context (1, hidden), raw
    attention scores (m,)); the raw scores double as copy scores downstream.
    """
    if len(s_prev) != len(net.decoder):
        raise ValueError(f"decoder_step: state has {len(s_prev)} layers, "
                         f"decoder has {len(net.decoder)}")
    e = attention_scores(s_prev[-1], enc.states, net.attention, states_proj)
    context = attention_context(e, enc.states, enc.attn_mask)

    inp = nc.concat(net.output_embedding([y_prev]), context, axis=1)
    s_new = []
    for layer, h in zip(net.decoder, s_prev):
        if dropout:
            inp = nc.dropout(inp, dropout, rng)
        h2 = gru_cell(inp, h, layer)
        s_new.append(h2)
        inp = h2
    return s_new, context, e


def write_logits(s: Tensor, c: Tensor, output: Parameter, *,
                 dropout: float = 0.0,
                 rng: np.random.Generator | None = None) -> Tensor:
    """Unnormalized vocabulary scores from [state; context], shape (V,).

    One fused record: concatenation, the (inverted) dropout on the joined
    vector, and the output projection. Dropout never touches s or c
    themselves, only this feed-forward connection.
    """
    sd, cd = s.data, c.data
    od = output.data
    if sd.ndim != 2 or cd.ndim != 2 or sd.shape[0] != 1 or cd.shape[0] != 1:
        raise ValueError(f"write_logits: expected (1, d) inputs, "
                         f"got {sd.shape} and {cd.shape}")
    if sd.shape[1] + cd.shape[1] != od.shape[0]:
        raise ValueError(f"write_logits: [state; context] width "
                         f"{sd.shape[1] + cd.shape[1]} does not match "
                         f"output rows {od.shape[0]}")
    sc = np.concatenate([sd, cd], axis=1)
    if dropout:
        keep = (rng.random(sc.shape) >= dropout) / (1.0 - dropout)
        sc = sc * keep
    else:
        keep = None
    out = Tensor((sc @ od)[0])
    k = sd.shape[1]

    def backward(g):
        row = g[None, :]
        dsc = row @ od.T
        if keep is not None:
            dsc = dsc * keep
        return (dsc[:, :k], dsc[:, k:], sc.T @ row)

    nc.record(out, (s, c, output), backward)
    return out
