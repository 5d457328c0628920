"""The conditional denoising network.

Maps a (possibly corrupted) behavior row to predicted interaction scores,
guided by frozen collaborative and modality-preference signals. Stack:

    fc_in -> CG1 -> tanh -> PG(first) -> LeakyReLU -> PG(second) -> tanh -> CG2 -> fc_out

A CG block gates between the individual hidden state and the projected
collaborative signal, with the gate driven by the step embedding. A PG
block applies channel-wise scale-and-shift predicted from a modality
preference vector. Ablation flags drop either block pair; with both
dropped the network degenerates to fc_in -> fc_out.

The step embedding is sinusoid(t) + z_in[user] during training and
z_in[user] alone at inference, where z_in is a learnable per-user row
encoding that user's inherent noise level.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as tt
from .conditioning import ConditionSignals
from .diffusion import step_embedding_batch
from .errors import ConfigError, DataError
from .fmx import read_block, write_block
from .tensor import Tensor


@dataclass(frozen=True)
class CNetConfig:
    d: int = 1000
    d_forward: int = 10
    d_svd: int = 100
    d_pg_hidden: int = 64
    leaky_slope: float = 0.01
    disable_cg: bool = False
    disable_pg: bool = False
    text_first: bool = True  # which PG block runs first; order is a free choice

    def __post_init__(self):
        if self.d < 1 or self.d_svd < 1 or self.d_pg_hidden < 1:
            raise ConfigError("hidden dimensions must be positive")
        if self.d_forward < 2 or self.d_forward % 2:
            raise ConfigError("d_forward must be a positive even number")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ConfigError("leaky_slope must be in (0, 1)")


def _uniform_init(rng: np.random.Generator, out_dim: int, in_dim: int, name: str) -> Tensor:
    bound = 1.0 / np.sqrt(in_dim)
    return Tensor(rng.uniform(-bound, bound, size=(out_dim, in_dim)), requires_grad=True, name=name)


def _zeros(rows: int, cols: int, name: str) -> Tensor:
    return Tensor(np.zeros((rows, cols)), requires_grad=True, name=name)


@dataclass
class CGBlockParams:
    """Gated fusion of hidden state and collaborative signal."""

    w1: Tensor  # d x (d + d_forward)
    b1: Tensor
    w2: Tensor  # d x (2 * d_svd)
    b2: Tensor
    w3: Tensor  # d x d_forward, drives the gate
    b3: Tensor

    @classmethod
    def init(cls, cfg: CNetConfig, rng: np.random.Generator, tag: str) -> "CGBlockParams":
        d, df, ds = cfg.d, cfg.d_forward, cfg.d_svd
        return cls(
            w1=_uniform_init(rng, d, d + df, f"{tag}.w1"),
            b1=_zeros(1, d, f"{tag}.b1"),
            w2=_uniform_init(rng, d, 2 * ds, f"{tag}.w2"),
            b2=_zeros(1, d, f"{tag}.b2"),
            w3=_uniform_init(rng, d, df, f"{tag}.w3"),
            b3=_zeros(1, d, f"{tag}.b3"),
        )

    def tensors(self):
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]


@dataclass
class PGBlockParams:
    """Two small MLPs predicting channel-wise scale and shift from a modality vector."""

    scale_w1: Tensor  # d_pg_hidden x d_modality
    scale_b1: Tensor
    scale_w2: Tensor  # d x d_pg_hidden
    scale_b2: Tensor
    shift_w1: Tensor
    shift_b1: Tensor
    shift_w2: Tensor
    shift_b2: Tensor

    @classmethod
    def init(cls, cfg: CNetConfig, modality_dim: int, rng: np.random.Generator, tag: str):
        h, d = cfg.d_pg_hidden, cfg.d
        return cls(
            scale_w1=_uniform_init(rng, h, modality_dim, f"{tag}.scale_w1"),
            scale_b1=_zeros(1, h, f"{tag}.scale_b1"),
            scale_w2=_uniform_init(rng, d, h, f"{tag}.scale_w2"),
            scale_b2=_zeros(1, d, f"{tag}.scale_b2"),
            shift_w1=_uniform_init(rng, h, modality_dim, f"{tag}.shift_w1"),
            shift_b1=_zeros(1, h, f"{tag}.shift_b1"),
            shift_w2=_uniform_init(rng, d, h, f"{tag}.shift_w2"),
            shift_b2=_zeros(1, d, f"{tag}.shift_b2"),
        )

    def tensors(self):
        return [
            self.scale_w1, self.scale_b1, self.scale_w2, self.scale_b2,
            self.shift_w1, self.shift_b1, self.shift_w2, self.shift_b2,
        ]


@dataclass
class CNetParams:
    """All learnable state plus the instrumentation counter.

    ``eval_count`` tracks how many (user, forward-pass) evaluations have run;
    the efficiency experiment keys on it.
    """

    config: CNetConfig
    num_users: int
    num_items: int
    visual_dim: int
    textual_dim: int
    fc_in_w: Tensor
    fc_in_b: Tensor
    fc_out_w: Tensor
    fc_out_b: Tensor
    cg1: CGBlockParams
    cg2: CGBlockParams
    pg_text: PGBlockParams
    pg_visual: PGBlockParams
    z_in: Tensor
    eval_count: int = field(default=0, compare=False)

    def tensors(self) -> list[tuple[str, Tensor]]:
        named = [
            ("fc_in_w", self.fc_in_w),
            ("fc_in_b", self.fc_in_b),
            ("fc_out_w", self.fc_out_w),
            ("fc_out_b", self.fc_out_b),
        ]
        for tag, blk in (("cg1", self.cg1), ("cg2", self.cg2)):
            for t, label in zip(blk.tensors(), ("w1", "b1", "w2", "b2", "w3", "b3")):
                named.append((f"{tag}.{label}", t))
        for tag, blk in (("pg_text", self.pg_text), ("pg_visual", self.pg_visual)):
            labels = (
                "scale_w1", "scale_b1", "scale_w2", "scale_b2",
                "shift_w1", "shift_b1", "shift_w2", "shift_b2",
            )
            for t, label in zip(blk.tensors(), labels):
                named.append((f"{tag}.{label}", t))
        named.append(("z_in", self.z_in))
        return named

    def parameter_list(self) -> list[Tensor]:
        return [t for _, t in self.tensors()]

    def groups(self) -> dict[str, list[tuple[str, Tensor]]]:
        out: dict[str, list[tuple[str, Tensor]]] = {
            "fc_in": [], "fc_out": [], "cg": [], "pg": [], "z_in": [],
        }
        for name, t in self.tensors():
            if name.startswith("fc_in"):
                out["fc_in"].append((name, t))
            elif name.startswith("fc_out"):
                out["fc_out"].append((name, t))
            elif name.startswith("cg"):
                out["cg"].append((name, t))
            elif name.startswith("pg"):
                out["pg"].append((name, t))
            else:
                out["z_in"].append((name, t))
        return out

    def validate_shapes(self) -> None:
        cfg = self.config
        expected = {
            "fc_in_w": (cfg.d, self.num_items),
            "fc_in_b": (1, cfg.d),
            "fc_out_w": (self.num_items, cfg.d),
            "fc_out_b": (1, self.num_items),
            "z_in": (self.num_users, cfg.d_forward),
        }
        for tag in ("cg1", "cg2"):
            expected[f"{tag}.w1"] = (cfg.d, cfg.d + cfg.d_forward)
            expected[f"{tag}.w2"] = (cfg.d, 2 * cfg.d_svd)
            expected[f"{tag}.w3"] = (cfg.d, cfg.d_forward)
            for b in ("b1", "b2", "b3"):
                expected[f"{tag}.{b}"] = (1, cfg.d)
        for tag, mdim in (("pg_text", self.textual_dim), ("pg_visual", self.visual_dim)):
            expected[f"{tag}.scale_w1"] = (cfg.d_pg_hidden, mdim)
            expected[f"{tag}.scale_b1"] = (1, cfg.d_pg_hidden)
            expected[f"{tag}.scale_w2"] = (cfg.d, cfg.d_pg_hidden)
            expected[f"{tag}.scale_b2"] = (1, cfg.d)
            expected[f"{tag}.shift_w1"] = (cfg.d_pg_hidden, mdim)
            expected[f"{tag}.shift_b1"] = (1, cfg.d_pg_hidden)
            expected[f"{tag}.shift_w2"] = (cfg.d, cfg.d_pg_hidden)
            expected[f"{tag}.shift_b2"] = (1, cfg.d)
        for name, t in self.tensors():
            if t.shape != expected[name]:
                raise ConfigError(f"{name}: shape {t.shape}, expected {expected[name]}")


def init_params(
    config: CNetConfig,
    num_users: int,
    num_items: int,
    visual_dim: int,
    textual_dim: int,
    seed: int,
) -> CNetParams:
    """Fresh parameters: uniform(+-1/sqrt(fan_in)) weights, zero biases and z_in."""
    rng = np.random.default_rng(seed)
    params = CNetParams(
        config=config,
        num_users=num_users,
        num_items=num_items,
        visual_dim=visual_dim,
        textual_dim=textual_dim,
        fc_in_w=_uniform_init(rng, config.d, num_items, "fc_in_w"),
        fc_in_b=_zeros(1, config.d, "fc_in_b"),
        fc_out_w=_uniform_init(rng, num_items, config.d, "fc_out_w"),
        fc_out_b=_zeros(1, num_items, "fc_out_b"),
        cg1=CGBlockParams.init(config, rng, "cg1"),
        cg2=CGBlockParams.init(config, rng, "cg2"),
        pg_text=PGBlockParams.init(config, textual_dim, rng, "pg_text"),
        pg_visual=PGBlockParams.init(config, visual_dim, rng, "pg_visual"),
        z_in=_zeros(num_users, config.d_forward, "z_in"),
    )
    params.validate_shapes()
    return params


def fc_in(x: Tensor, params: CNetParams) -> Tensor:
    return tt.tanh(tt.linear(x, params.fc_in_w, params.fc_in_b))


def cg_block(h: Tensor, z: Tensor, c: Tensor, blk: CGBlockParams) -> Tensor:
    """Convex gate between the hidden state and the collaborative signal."""
    h_ind = tt.tanh(tt.linear(tt.hstack(h, z), blk.w1, blk.b1))
    c_proj = tt.tanh(tt.linear(c, blk.w2, blk.b2))
    gate = tt.sigmoid(tt.linear(z, blk.w3, blk.b3))
    return tt.add(tt.mul(h_ind, tt.affine(gate, -1.0, 1.0)), tt.mul(c_proj, gate))


def pg_block(h: Tensor, m: Tensor, blk: PGBlockParams) -> Tensor:
    """Channel-wise modulation: scale (.) h + shift, both predicted from m."""
    scale = tt.linear(tt.tanh(tt.linear(m, blk.scale_w1, blk.scale_b1)), blk.scale_w2, blk.scale_b2)
    shift = tt.linear(tt.tanh(tt.linear(m, blk.shift_w1, blk.shift_b1)), blk.shift_w2, blk.shift_b2)
    return tt.add(tt.mul(scale, h), shift)


def forward(
    x,
    t,
    users,
    cond: ConditionSignals,
    params: CNetParams,
) -> Tensor:
    """Predicted interaction scores (raw, no final squashing) for a batch.

    ``t`` is an int array of per-row forward steps during training, or None
    for single-pass inference where only the learned z_in embedding speaks.
    """
    users = np.atleast_1d(np.asarray(users, dtype=np.intp))
    if users.size and (users.min() < 0 or users.max() >= params.num_users):
        raise IndexError(f"user index outside 0..{params.num_users - 1}")
    cfg = params.config
    x = x if isinstance(x, Tensor) else Tensor(np.atleast_2d(x))
    if x.cols != params.num_items or x.rows != users.size:
        raise ConfigError(f"behavior batch {x.shape} inconsistent with {users.size} users")
    params.eval_count += users.size

    z = tt.gather_rows(params.z_in, users)
    if t is not None:
        t_arr = np.atleast_1d(np.asarray(t))
        z = tt.add(Tensor(step_embedding_batch(t_arr, cfg.d_forward)), z)

    h = fc_in(x, params)
    c = Tensor(cond.collaborative[users])
    m_text = Tensor(cond.textual[users])
    m_visual = Tensor(cond.visual[users])
    first, second = (
        (m_text, params.pg_text), (m_visual, params.pg_visual)
    ) if cfg.text_first else (
        (m_visual, params.pg_visual), (m_text, params.pg_text)
    )

    if not cfg.disable_cg and not cfg.disable_pg:
        h = cg_block(h, z, c, params.cg1)
        h = tt.tanh(h)
        h = pg_block(h, first[0], first[1])
        h = tt.leaky_relu(h, cfg.leaky_slope)
        h = pg_block(h, second[0], second[1])
        h = tt.tanh(h)
        h = cg_block(h, z, c, params.cg2)
    elif not cfg.disable_cg:
        # PG-free variant: the two CG blocks run back to back
        h = cg_block(h, z, c, params.cg1)
        h = tt.tanh(h)
        h = cg_block(h, z, c, params.cg2)
    elif not cfg.disable_pg:
        h = pg_block(h, first[0], first[1])
        h = tt.leaky_relu(h, cfg.leaky_slope)
        h = pg_block(h, second[0], second[1])
    # both disabled: plain fc_in -> fc_out autoencoder

    return tt.linear(h, params.fc_out_w, params.fc_out_b)


def predict(x, users, cond: ConditionSignals, params: CNetParams) -> np.ndarray:
    """Inference scores: one forward pass, uncorrupted input, z_in only."""
    return forward(x, None, users, cond, params).data


_MAGIC = b"LDMR"


def save_checkpoint(path, params: CNetParams) -> None:
    """LDMR container: magic, JSON config block, FMX8 tensor blocks, checksum."""
    meta = {
        "config": asdict(params.config),
        "num_users": params.num_users,
        "num_items": params.num_items,
        "visual_dim": params.visual_dim,
        "textual_dim": params.textual_dim,
        "tensors": [name for name, _ in params.tensors()],
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    digest = hashlib.blake2b(digest_size=8)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, tensor in params.tensors():
            digest.update(write_block(fh, tensor.data, dtype="f8"))
        fh.write(digest.digest())


def load_checkpoint(path) -> CNetParams:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise DataError(f"{path}: not a checkpoint file")
        (blob_len,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(blob_len).decode("utf-8"))
        config = CNetConfig(**meta["config"])
        arrays = {}
        digest = hashlib.blake2b(digest_size=8)
        for name in meta["tensors"]:
            matrix, payload = read_block(fh)
            digest.update(payload)
            arrays[name] = matrix
        stored = fh.read(8)
    if stored != digest.digest():
        raise DataError(f"{path}: checksum mismatch, file corrupt")

    def ten(name: str) -> Tensor:
        return Tensor(arrays[name], requires_grad=True, name=name)

    def cg(tag: str) -> CGBlockParams:
        return CGBlockParams(*[ten(f"{tag}.{x}") for x in ("w1", "b1", "w2", "b2", "w3", "b3")])

    def pg(tag: str) -> PGBlockParams:
        labels = (
            "scale_w1", "scale_b1", "scale_w2", "scale_b2",
            "shift_w1", "shift_b1", "shift_w2", "shift_b2",
        )
        return PGBlockParams(*[ten(f"{tag}.{x}") for x in labels])

    params = CNetParams(
        config=config,
        num_users=meta["num_users"],
        num_items=meta["num_items"],
        visual_dim=meta["visual_dim"],
        textual_dim=meta["textual_dim"],
        fc_in_w=ten("fc_in_w"),
        fc_in_b=ten("fc_in_b"),
        fc_out_w=ten("fc_out_w"),
        fc_out_b=ten("fc_out_b"),
        cg1=cg("cg1"),
        cg2=cg("cg2"),
        pg_text=pg("pg_text"),
        pg_visual=pg("pg_visual"),
        z_in=ten("z_in"),
    )
    params.validate_shapes()
    return params
