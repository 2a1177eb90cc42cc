"""The full fusion pipeline, its training step and binary checkpoints.

Per modality m: a Gaussian encoder turns the (temporally averaged,
standardised) features into a code ``h_m``; an affine decoder predicts the
label from ``h_m`` alone.  The three codes are concatenated, squashed with
``tanh`` into the spline grid range and fed to a KAN head that produces the
multimodal prediction.
"""

import json
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import MODALITIES, minibatches
from .errors import CorruptCheckpoint, EmptyDataset, IoError, MissingModality, ShapeMismatch
from .kan import GridSpec, init_kan
from .metrics import mae, report
from .mib import GaussianEncoder, Linear, encode, nll_mae, unimodal_loss
from .optim import Adam
from .pareto import mcpareto_apply


@dataclass(frozen=True)
class HyperParams:
    d_t: int
    d_a: int
    d_v: int
    d_h: int = 3
    mid_dim: int = 64
    head_hidden: tuple = (4,)
    grid_size: int = 5
    spline_degree: int = 3
    beta: float = 1e-3
    lr_text: float = 1e-3
    lr_other: float = 1e-3
    seed: int = 0

    @property
    def dims(self):
        return {"t": self.d_t, "a": self.d_a, "v": self.d_v}

    @property
    def head_widths(self):
        return [len(MODALITIES) * self.d_h, *self.head_hidden, 1]

    @property
    def grid_spec(self):
        return GridSpec(self.grid_size, self.spline_degree, -1.0, 1.0)


class KanMcpModel:
    def __init__(self, hyper):
        self.hyper = hyper
        rng = np.random.default_rng(hyper.seed)
        self.encoders = {
            m: GaussianEncoder(f"enc.{m}", hyper.dims[m], hyper.d_h, hyper.mid_dim, rng) for m in MODALITIES
        }
        self.decoders = {m: Linear(f"dec.{m}", hyper.d_h, 1, rng) for m in MODALITIES}
        head_seed = int(rng.integers(2**31))
        self.head = init_kan(hyper.head_widths, hyper.grid_spec, seed=head_seed, name="head")
        if self.head.widths[0] != sum(e.d_code for e in self.encoders.values()):
            raise ShapeMismatch("head input width must equal the fused code width")
        names = [p.name for p in self.params()]
        if len(names) != len(set(names)):
            raise ValueError("parameter names are not unique")

    def params(self):
        out = []
        for m in MODALITIES:
            out += self.encoders[m].params()
        for m in MODALITIES:
            out += self.decoders[m].params()
        return out + self.head.params()

    def param_dict(self):
        return {p.name: p for p in self.params()}

    def encoder_groups(self):
        return {m: self.encoders[m].groups() for m in MODALITIES}

    def zero_(self):
        for p in self.params():
            p.data = np.zeros_like(p.data)


@dataclass
class Outputs:
    multi: ad.Node
    uni: dict
    codes: dict
    fused: ad.Node


def _features(model, batch):
    feats = getattr(batch, "features", batch)
    for m in MODALITIES:
        if m not in feats:
            raise MissingModality(f"batch lacks modality {m!r}")
        f = np.asarray(feats[m])
        if f.ndim != 2 or f.shape[1] != model.hyper.dims[m]:
            raise ShapeMismatch(f"modality {m!r}: expected batch x {model.hyper.dims[m]}, got {f.shape}")
    return feats


def forward(model, batch, eps=None):
    """Graph forward.  ``eps`` maps modality -> ``batch x d_h`` noise; ``None`` means zeros."""
    feats = _features(model, batch)
    b = np.asarray(feats["t"]).shape[0]
    codes, uni = {}, {}
    for m in MODALITIES:
        e = np.zeros((b, model.hyper.d_h)) if eps is None else eps[m]
        codes[m] = encode(model.encoders[m], feats[m], e)
        uni[m] = model.decoders[m](codes[m].h)
    fused = ad.tanh(ad.concat([codes[m].h for m in MODALITIES], axis=1))
    return Outputs(model.head(fused), uni, codes, fused)


def predict(model, batch):
    """Posterior-mean predictions as numpy arrays: ``(multi, {m: unimodal})``."""
    out = forward(model, batch)
    return out.multi.data[:, 0].copy(), {m: out.uni[m].data[:, 0].copy() for m in MODALITIES}


def fused_codes(model, batch):
    """The tanh-squashed fused code at eps=0 (the head's input)."""
    return forward(model, batch).fused.data.copy()


# ---------------------------------------------------------------- training


@dataclass
class TrainState:
    model: KanMcpModel
    optimizer: Adam
    rng: np.random.Generator
    epoch: int = 0
    step: int = 0
    history: dict = field(default_factory=lambda: {k: [] for k in ("multi", *MODALITIES)})
    stats: dict = field(default_factory=dict)


def learning_rates(hyper):
    def rate(name):
        return hyper.lr_text if name.startswith("enc.t.") or name.startswith("dec.t.") else hyper.lr_other

    return rate


def new_state(hyper, stats=None):
    model = KanMcpModel(hyper)
    opt = Adam(model.params(), lr=learning_rates(hyper))
    rng = np.random.default_rng([hyper.seed, 1])
    return TrainState(model, opt, rng, stats=stats or {})


def step_losses(model, batch, eps, beta):
    out = forward(model, batch, eps)
    y = batch.y.reshape(-1, 1)
    multi = nll_mae(out.multi, y)
    uni = {m: unimodal_loss(out.uni[m], out.codes[m], y, beta) for m in MODALITIES}
    return multi, uni


def compute_gradients(model, batch, eps, beta, mcpareto=True):
    """One snapshot, four backward passes, merged gradients.

    Returns ``(merged, losses, decisions)``.
    """
    multi, uni = step_losses(model, batch, eps, beta)
    g_multi = ad.backward(multi)
    g_uni = {m: ad.backward(uni[m]) for m in MODALITIES}
    merged, decisions = mcpareto_apply(g_multi, g_uni, model.encoder_groups(), enabled=mcpareto)
    losses = {"multi": float(multi.data), **{m: float(uni[m].data) for m in MODALITIES}}
    return merged, losses, decisions


def train_step(state, batch, mcpareto=True):
    if len(batch) == 0:
        raise EmptyDataset("empty minibatch")
    hyper = state.model.hyper
    eps = {m: state.rng.standard_normal((len(batch), hyper.d_h)) for m in MODALITIES}
    merged, losses, decisions = compute_gradients(state.model, batch, eps, hyper.beta, mcpareto)
    state.optimizer.step(merged)
    state.step += 1
    return state, losses, decisions


def train_epoch(state, batch, batch_size, seed, mcpareto=True, on_step=None):
    """One shuffled pass; appends the epoch-mean losses to ``state.history``.

    ``on_step(step, decisions)`` is called after every optimizer step.
    """
    totals = {k: 0.0 for k in state.history}
    n = 0
    for mb in minibatches(batch, batch_size, seed, state.epoch):
        state, losses, decisions = train_step(state, mb, mcpareto)
        for k in totals:
            totals[k] += losses[k] * len(mb)
        n += len(mb)
        if on_step is not None:
            on_step(state.step, decisions)
    for k in totals:
        state.history[k].append(totals[k] / n)
    state.epoch += 1
    return state


def evaluate(model, batch, workers=1):
    """Metrics at eps=0 plus per-modality unimodal MAE."""
    if len(batch) == 0:
        raise EmptyDataset("empty dataset")
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        chunks = np.array_split(np.arange(len(batch)), min(workers, len(batch)))
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda idx: predict(model, batch.subset(idx)), chunks))
        multi = np.concatenate([p[0] for p in parts])
        uni = {m: np.concatenate([p[1][m] for p in parts]) for m in MODALITIES}
    else:
        multi, uni = predict(model, batch)
    rep = report(multi, batch.y)
    unimodal = {m: mae(uni[m], batch.y) for m in MODALITIES}
    return rep, unimodal


# ---------------------------------------------------------------- checkpoints

MAGIC = b"KMCP"
VERSION = 1


def _array_payload(arr):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    head = struct.pack("<B", arr.ndim) + b"".join(struct.pack("<I", d) for d in arr.shape)
    return head + arr.tobytes()


def _array_from_payload(payload):
    ndim = payload[0]
    shape = struct.unpack_from(f"<{ndim}I", payload, 1)
    start = 1 + 4 * ndim
    count = int(np.prod(shape)) if ndim else 1
    if len(payload) - start != 8 * count:
        raise CorruptCheckpoint("array payload has the wrong length")
    return np.frombuffer(payload, dtype="<f8", offset=start).astype(np.float64).reshape(shape)


def _section(tag, payload):
    t = tag.encode("utf-8")
    return struct.pack("<H", len(t)) + t + struct.pack("<Q", len(payload)) + payload


def _json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def checkpoint_bytes(state):
    hyper = asdict(state.model.hyper)
    hyper["head_hidden"] = list(hyper["head_hidden"])
    meta = {
        "epoch": state.epoch,
        "step": state.step,
        "adam_t": state.optimizer.t,
        "rng": state.rng.bit_generator.state,
        "history": state.history,
    }
    parts = [MAGIC, struct.pack("<H", VERSION)]
    parts.append(_section("hyper", _json(hyper)))
    parts.append(_section("state", _json(meta)))
    for m in sorted(state.stats):
        mean, sd = state.stats[m]
        parts.append(_section(f"norm/{m}.mean", _array_payload(mean)))
        parts.append(_section(f"norm/{m}.std", _array_payload(sd)))
    for p in state.model.params():
        parts.append(_section(f"param/{p.name}", _array_payload(p.data)))
        parts.append(_section(f"adam.m/{p.name}", _array_payload(state.optimizer.m[p.name])))
        parts.append(_section(f"adam.v/{p.name}", _array_payload(state.optimizer.v[p.name])))
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def save_checkpoint(state, path):
    try:
        Path(path).write_bytes(checkpoint_bytes(state))
    except OSError as exc:
        raise IoError(f"cannot write checkpoint {path}: {exc.strerror}") from None


def _parse_sections(blob):
    if len(blob) < 10 or blob[:4] != MAGIC:
        raise CorruptCheckpoint("bad magic: not a KMCP checkpoint")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != VERSION:
        raise CorruptCheckpoint(f"unsupported checkpoint version {version} (expected {VERSION})")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CorruptCheckpoint("CRC mismatch: file is truncated or modified")
    sections, pos = {}, 6
    try:
        while pos < len(body):
            (tlen,) = struct.unpack_from("<H", body, pos)
            tag = body[pos + 2 : pos + 2 + tlen].decode("utf-8")
            pos += 2 + tlen
            (plen,) = struct.unpack_from("<Q", body, pos)
            pos += 8
            if pos + plen > len(body):
                raise CorruptCheckpoint(f"section {tag!r} overruns the file")
            sections[tag] = body[pos : pos + plen]
            pos += plen
    except (struct.error, UnicodeDecodeError):
        raise CorruptCheckpoint("malformed section table") from None
    return sections


def state_from_bytes(blob):
    sections = _parse_sections(blob)
    try:
        hyper = json.loads(sections["hyper"])
        meta = json.loads(sections["state"])
    except (KeyError, ValueError):
        raise CorruptCheckpoint("missing or unreadable hyper/state section") from None
    hyper["head_hidden"] = tuple(hyper["head_hidden"])
    state = new_state(HyperParams(**hyper))
    try:
        for p in state.model.params():
            p.data = _array_from_payload(sections[f"param/{p.name}"]).reshape(p.data.shape)
            state.optimizer.m[p.name] = _array_from_payload(sections[f"adam.m/{p.name}"])
            state.optimizer.v[p.name] = _array_from_payload(sections[f"adam.v/{p.name}"])
        stats = {}
        for m in MODALITIES:
            if f"norm/{m}.mean" in sections:
                stats[m] = (
                    _array_from_payload(sections[f"norm/{m}.mean"]),
                    _array_from_payload(sections[f"norm/{m}.std"]),
                )
    except (KeyError, ValueError) as exc:
        raise CorruptCheckpoint(f"missing or malformed parameter section: {exc}") from None
    state.stats = stats
    state.epoch = meta["epoch"]
    state.step = meta["step"]
    state.optimizer.t = meta["adam_t"]
    state.rng.bit_generator.state = meta["rng"]
    state.history = meta["history"]
    return state


def load_checkpoint(path):
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    return state_from_bytes(blob)

