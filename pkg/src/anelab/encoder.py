"""Elman recurrent sequence encoders with hand-written backpropagation.

Both the audio encoder ``f`` (frames -> vector) and the text encoders
``g`` (symbol ids -> vector) share one cell::

    h_t = tanh(x_t @ w_in + h_{t-1} @ w_rec + b_rec)
    out = h_T @ w_out + b_out

An optional second cell reads the sequence backwards; its final state
gets its own projection ``w_out_r`` added to the output.

For text, ``x_t`` is the one-hot of the symbol, so ``w_in`` acts as the
V x h symbol-embedding table.  Batches of unequal length are padded; a
padded step leaves the hidden state untouched, so ``h_T`` is each
sequence's own final state.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import GraphemeSeq, PhoneSeq, Utterance

MAGIC = b"ANE1"
FORMAT_VERSION = 1
PARAM_NAMES = ("w_in", "w_rec", "b_rec", "w_out", "b_out")
REVERSE_NAMES = ("w_in_r", "w_rec_r", "b_rec_r", "w_out_r")


class StaleTapeError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderParams:
    """Weights of a unidirectional encoder, or a bidirectional one when the
    ``*_r`` tensors (a second cell run over the reversed sequence, with its
    own output projection) are present."""

    w_in: np.ndarray
    w_rec: np.ndarray
    b_rec: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray
    w_in_r: np.ndarray | None = None
    w_rec_r: np.ndarray | None = None
    b_rec_r: np.ndarray | None = None
    w_out_r: np.ndarray | None = None

    def __post_init__(self):
        reverse = [getattr(self, n) for n in REVERSE_NAMES]
        if any(r is None for r in reverse) and not all(r is None for r in reverse):
            raise ValueError("reverse-direction tensors must be given together")
        h = self.w_in.shape[1]
        if self.w_rec.shape != (h, h) or self.b_rec.shape != (h,):
            raise ValueError("recurrent shapes inconsistent with hidden width")
        if self.w_out.shape[0] != h or self.b_out.shape != (self.w_out.shape[1],):
            raise ValueError("output shapes inconsistent")
        if self.bidirectional:
            if (self.w_in_r.shape != self.w_in.shape or self.w_rec_r.shape != (h, h)
                    or self.b_rec_r.shape != (h,) or self.w_out_r.shape != self.w_out.shape):
                raise ValueError("reverse-direction shapes must match the forward direction")
        for name in self.names():
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"parameter {name} is not finite")

    @property
    def bidirectional(self) -> bool:
        return self.w_in_r is not None

    @property
    def input_dim(self) -> int:
        return self.w_in.shape[0]

    @property
    def hidden(self) -> int:
        return self.w_in.shape[1]

    @property
    def dim(self) -> int:
        return self.w_out.shape[1]

    def names(self) -> tuple[str, ...]:
        return PARAM_NAMES + REVERSE_NAMES if self.bidirectional else PARAM_NAMES

    def as_tuple(self) -> tuple[np.ndarray, ...]:
        return tuple(getattr(self, n) for n in self.names())

    def replace(self, arrays: Sequence[np.ndarray]) -> "EncoderParams":
        return EncoderParams(**dict(zip(self.names(), arrays, strict=True)))

    def zeros_like(self) -> "EncoderParams":
        return self.replace([np.zeros_like(a) for a in self.as_tuple()])

    def __add__(self, other: "EncoderParams") -> "EncoderParams":
        return self.replace([a + b for a, b in zip(self.as_tuple(), other.as_tuple(), strict=True)])

    def scale(self, c: float) -> "EncoderParams":
        return self.replace([c * a for a in self.as_tuple()])


def init_params(input_dim: int, hidden: int, dim: int, rng: np.random.Generator,
                bidirectional: bool = False) -> EncoderParams:
    """Uniform(-1/sqrt(h), 1/sqrt(h)) weights, zero biases."""
    bound = 1.0 / np.sqrt(hidden)
    u = lambda *shape: rng.uniform(-bound, bound, size=shape)  # noqa: E731
    arrays = dict(
        w_in=u(input_dim, hidden),
        w_rec=u(hidden, hidden),
        b_rec=np.zeros(hidden),
        w_out=u(hidden, dim),
        b_out=np.zeros(dim),
    )
    if bidirectional:
        arrays.update(
            w_in_r=u(input_dim, hidden),
            w_rec_r=u(hidden, hidden),
            b_rec_r=np.zeros(hidden),
            w_out_r=u(hidden, dim),
        )
    return EncoderParams(**arrays)


@dataclass
class ForwardTape:
    """Activations kept by a forward pass for the matching backward call."""

    params: EncoderParams
    inputs: np.ndarray  # (T_max, B, D_in), zero-padded
    mask: np.ndarray  # (T_max, B) bool
    hidden: np.ndarray  # (T_max + 1, B, h); hidden[0] is the zero state
    lengths: np.ndarray
    inputs_r: np.ndarray | None = None  # each sequence reversed, then padded
    hidden_r: np.ndarray | None = None

    def __len__(self) -> int:
        return self.inputs.shape[0]


def _pad(seqs: Sequence[np.ndarray], input_dim: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    lengths = np.array([s.shape[0] for s in seqs])
    if lengths.min() < 1:
        raise ValueError("empty sequence")
    t_max = int(lengths.max())
    x = np.zeros((t_max, len(seqs), input_dim))
    for b, s in enumerate(seqs):
        if s.ndim != 2 or s.shape[1] != input_dim:
            raise ValueError(f"input dimension {s.shape[-1]} != encoder input {input_dim}")
        x[: s.shape[0], b] = s
    mask = np.arange(t_max)[:, None] < lengths[None, :]
    return x, mask, lengths


def _reverse_padded(x: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Reverse every sequence within its own length, keeping the padding at the end."""
    t_max = x.shape[0]
    src = lengths[None, :] - 1 - np.arange(t_max)[:, None]
    valid = src >= 0
    out = x[np.where(valid, src, 0), np.arange(x.shape[1])[None, :]]
    return np.where(valid[:, :, None], out, 0.0)


def _run(x, mask, w_in, w_rec, b_rec) -> np.ndarray:
    t_max, batch, _ = x.shape
    hs = np.zeros((t_max + 1, batch, w_rec.shape[0]))
    pre_in = x @ w_in + b_rec
    for t in range(t_max):
        h_new = np.tanh(pre_in[t] + hs[t] @ w_rec)
        # padded steps carry the state through, so hs[-1] is each sequence's final state
        hs[t + 1] = np.where(mask[t][:, None], h_new, hs[t])
    return hs


def _run_backward(x, mask, hs, w_rec, dh) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    d_w_in = np.zeros((x.shape[2], w_rec.shape[0]))
    d_w_rec = np.zeros_like(w_rec)
    d_b = np.zeros(w_rec.shape[0])
    for t in reversed(range(x.shape[0])):
        m = mask[t][:, None]
        h_t = hs[t + 1]
        da = np.where(m, dh * (1.0 - h_t * h_t), 0.0)
        d_w_in += x[t].T @ da
        d_w_rec += hs[t].T @ da
        d_b += da.sum(axis=0)
        dh = np.where(m, da @ w_rec.T, dh)
    return d_w_in, d_w_rec, d_b


def encode_batch(params: EncoderParams, seqs: Sequence[np.ndarray]) -> tuple[np.ndarray, ForwardTape]:
    """Encode a batch of (T_b, D_in) arrays into an (B, d) matrix."""
    x, mask, lengths = _pad(seqs, params.input_dim)
    hs = _run(x, mask, params.w_in, params.w_rec, params.b_rec)
    out = hs[-1] @ params.w_out + params.b_out
    tape = ForwardTape(params, x, mask, hs, lengths)
    if params.bidirectional:
        tape.inputs_r = _reverse_padded(x, lengths)
        tape.hidden_r = _run(tape.inputs_r, mask, params.w_in_r, params.w_rec_r, params.b_rec_r)
        out = out + tape.hidden_r[-1] @ params.w_out_r
    return out, tape


def backward(params: EncoderParams, tape: ForwardTape, grad_out) -> EncoderParams:
    """Parameter gradient of a scalar loss given dLoss/d(output).

    ``grad_out`` has the shape of the forward output: (d,) for a single
    sequence or (B, d) for a batch.
    """
    if tape.params is not params:
        raise StaleTapeError("tape was recorded with different parameters")
    g = np.asarray(grad_out, dtype=np.float64)
    batch = tape.inputs.shape[1]
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != (batch, params.dim):
        raise StaleTapeError(f"upstream gradient shape {g.shape} does not match tape batch")

    grads = dict(w_out=tape.hidden[-1].T @ g, b_out=g.sum(axis=0))
    grads["w_in"], grads["w_rec"], grads["b_rec"] = _run_backward(
        tape.inputs, tape.mask, tape.hidden, params.w_rec, g @ params.w_out.T)
    if params.bidirectional:
        grads["w_out_r"] = tape.hidden_r[-1].T @ g
        grads["w_in_r"], grads["w_rec_r"], grads["b_rec_r"] = _run_backward(
            tape.inputs_r, tape.mask, tape.hidden_r, params.w_rec_r, g @ params.w_out_r.T)
    return EncoderParams(**grads)


def one_hot(seq: PhoneSeq | GraphemeSeq | Sequence[int], vocab: int) -> np.ndarray:
    ids = np.asarray(tuple(seq), dtype=np.int64)
    if ids.size == 0:
        raise ValueError("empty symbol sequence")
    if ids.min() < 0 or ids.max() >= vocab:
        raise ValueError(f"symbol id outside encoder vocabulary of size {vocab}")
    x = np.zeros((ids.size, vocab))
    x[np.arange(ids.size), ids] = 1.0
    return x


def encode_audio(params: EncoderParams, utt: Utterance) -> tuple[np.ndarray, ForwardTape]:
    out, tape = encode_batch(params, [utt.frames])
    return out[0], tape


def encode_text(params: EncoderParams, seq: PhoneSeq | GraphemeSeq) -> tuple[np.ndarray, ForwardTape]:
    out, tape = encode_batch(params, [one_hot(seq, params.input_dim)])
    return out[0], tape


def embed_utterances(params: EncoderParams, utts: Sequence[Utterance], chunk: int = 512) -> np.ndarray:
    if not utts:
        return np.zeros((0, params.dim))
    parts = []
    for i in range(0, len(utts), chunk):
        out, _ = encode_batch(params, [u.frames for u in utts[i : i + chunk]])
        parts.append(out)
    return np.concatenate(parts)


def embed_sequences(params: EncoderParams, seqs: Sequence, chunk: int = 512) -> np.ndarray:
    if not seqs:
        return np.zeros((0, params.dim))
    parts = []
    for i in range(0, len(seqs), chunk):
        batch = [one_hot(s, params.input_dim) for s in seqs[i : i + chunk]]
        out, _ = encode_batch(params, batch)
        parts.append(out)
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# model file: magic, u32 version, u32 D_in, u32 h, u32 d, u32 directions,
# then f64 tensors in declared order


def save_params(path, params: EncoderParams):
    with open(path, "wb") as fh:
        fh.write(dump_params(params))


def dump_params(params: EncoderParams) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<5I", FORMAT_VERSION, params.input_dim, params.hidden, params.dim,
                          2 if params.bidirectional else 1))
    for arr in params.as_tuple():
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def load_params(path) -> EncoderParams:
    with open(path, "rb") as fh:
        return parse_params(fh.read())


def parse_params(data: bytes) -> EncoderParams:
    if data[:4] != MAGIC:
        raise ValueError("not an encoder model file (bad magic)")
    if len(data) < 24:
        raise ValueError("truncated model file header")
    version, d_in, h, d, directions = struct.unpack_from("<5I", data, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported model file version {version}")
    if directions not in (1, 2):
        raise ValueError(f"bad direction count {directions}")
    shapes = [(d_in, h), (h, h), (h,), (h, d), (d,)]
    if directions == 2:
        shapes += [(d_in, h), (h, h), (h,), (h, d)]
    offset = 24
    arrays = []
    for shape in shapes:
        end = offset + 8 * int(np.prod(shape))
        if end > len(data):
            raise ValueError("truncated model file")
        arrays.append(np.frombuffer(data[offset:end], dtype="<f8").reshape(shape).astype(np.float64))
        offset = end
    if offset != len(data):
        raise ValueError("trailing bytes in model file")
    return EncoderParams(*arrays)
