"""Graph policy/value network over the macro graph.

Tensors are float64 torch tensors; torch supplies reverse-mode
differentiation.  The backbone is a stack of GAT (or GCN) layers over the
macro adjacency; the embedding of the macro being placed, the mean-pooled
graph embedding and an encoded metadata vector feed a linear policy head
with ``W * W`` logits and a small value head.
"""

from __future__ import annotations

import io
import json
import math
import os
import struct
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .graph import MacroGraph

DTYPE = torch.float64
MASK_FILL = -1e30
CHECKPOINT_MAGIC = b"MPLCKPT\x00"
CHECKPOINT_VERSION = 1


class AllMaskedError(RuntimeError):
    pass


class NoGraphRecordedError(RuntimeError):
    pass


class ShapeMismatchError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class PolicyConfig:
    grid: int = 32
    backbone: str = "gat"
    layers: int = 3
    heads: int = 4
    hidden: int = 64
    meta_hidden: int = 32
    value_hidden: int = 64
    seed: int = 0

    @property
    def embed_dim(self) -> int:
        return self.heads * self.hidden


@dataclass
class PolicyOutput:
    probs: torch.Tensor  # (W, W)
    log_probs: torch.Tensor  # (W, W); masked cells are -inf-like
    value: torch.Tensor  # scalar


def _uniform_(t: torch.Tensor, fan_in: int, gen: torch.Generator) -> None:
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    with torch.no_grad():
        t.copy_(torch.rand(t.shape, generator=gen, dtype=DTYPE) * 2 * bound - bound)


# --------------------------------------------------------------------------- layers


class GATLayer(nn.Module):
    """Multi-head graph attention; heads are concatenated."""

    def __init__(self, in_dim: int, out_dim: int, heads: int = 1, activation: bool = True, negative_slope: float = 0.2):
        super().__init__()
        self.in_dim, self.out_dim, self.heads = in_dim, out_dim, heads
        self.weight = nn.Parameter(torch.empty(heads, in_dim, out_dim, dtype=DTYPE))
        self.att_src = nn.Parameter(torch.empty(heads, out_dim, dtype=DTYPE))
        self.att_dst = nn.Parameter(torch.empty(heads, out_dim, dtype=DTYPE))
        self.bias = nn.Parameter(torch.empty(heads * out_dim, dtype=DTYPE))
        self.activation = activation
        self.negative_slope = negative_slope

    def reset_parameters(self, gen: torch.Generator) -> None:
        _uniform_(self.weight, self.in_dim, gen)
        _uniform_(self.att_src, 2 * self.out_dim, gen)
        _uniform_(self.att_dst, 2 * self.out_dim, gen)
        _uniform_(self.bias, self.in_dim, gen)

    def forward(self, x: torch.Tensor, adjacency: torch.Tensor) -> torch.Tensor:
        n = x.shape[0]
        if x.shape[1] != self.in_dim or adjacency.shape != (n, n):
            raise ShapeMismatchError(f"GAT layer got x {tuple(x.shape)}, adjacency {tuple(adjacency.shape)}")
        h = torch.einsum("ni,hio->hno", x, self.weight)
        src = (h * self.att_src[:, None, :]).sum(-1)  # (heads, n)
        dst = (h * self.att_dst[:, None, :]).sum(-1)
        # e[h, i, j]: attention of node i to neighbour j
        e = F.leaky_relu(src[:, :, None] + dst[:, None, :], self.negative_slope)
        edges = (adjacency > 0) | torch.eye(n, dtype=torch.bool)
        e = e.masked_fill(~edges, float("-inf"))
        alpha = torch.softmax(e, dim=-1)
        out = torch.einsum("hij,hjo->iho", alpha, h).reshape(n, self.heads * self.out_dim) + self.bias
        return F.elu(out) if self.activation else out


def normalized_adjacency(adjacency: torch.Tensor) -> torch.Tensor:
    a = adjacency + torch.eye(adjacency.shape[0], dtype=adjacency.dtype)
    d = a.sum(dim=1).rsqrt()
    return d[:, None] * a * d[None, :]


class GCNLayer(nn.Module):
    """Symmetric-normalised graph convolution."""

    def __init__(self, in_dim: int, out_dim: int, activation: bool = True):
        super().__init__()
        self.in_dim, self.out_dim = in_dim, out_dim
        self.weight = nn.Parameter(torch.empty(in_dim, out_dim, dtype=DTYPE))
        self.bias = nn.Parameter(torch.empty(out_dim, dtype=DTYPE))
        self.activation = activation

    def reset_parameters(self, gen: torch.Generator) -> None:
        _uniform_(self.weight, self.in_dim, gen)
        _uniform_(self.bias, self.in_dim, gen)

    def forward(self, x: torch.Tensor, adjacency: torch.Tensor) -> torch.Tensor:
        n = x.shape[0]
        if x.shape[1] != self.in_dim or adjacency.shape != (n, n):
            raise ShapeMismatchError(f"GCN layer got x {tuple(x.shape)}, adjacency {tuple(adjacency.shape)}")
        out = normalized_adjacency(adjacency) @ (x @ self.weight) + self.bias
        return F.elu(out) if self.activation else out


class Linear(nn.Module):
    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.in_dim = in_dim
        self.weight = nn.Parameter(torch.empty(in_dim, out_dim, dtype=DTYPE))
        self.bias = nn.Parameter(torch.empty(out_dim, dtype=DTYPE))

    def reset_parameters(self, gen: torch.Generator) -> None:
        _uniform_(self.weight, self.in_dim, gen)
        _uniform_(self.bias, self.in_dim, gen)

    def forward(self, x):
        return x @ self.weight + self.bias


# --------------------------------------------------------------------------- network


class PolicyNet(nn.Module):
    def __init__(self, config: PolicyConfig, graph: MacroGraph, metadata):
        super().__init__()
        self.config = config
        self.set_graph(graph, metadata)
        dims = [4] + [config.embed_dim] * config.layers
        if config.backbone == "gat":
            self.backbone = nn.ModuleList(
                GATLayer(dims[i], config.hidden, config.heads) for i in range(config.layers)
            )
        elif config.backbone == "gcn":
            self.backbone = nn.ModuleList(GCNLayer(dims[i], dims[i + 1]) for i in range(config.layers))
        else:
            raise ValueError(f"unknown backbone {config.backbone!r}")
        E = config.embed_dim
        self.meta1 = Linear(self.metadata.shape[0], config.meta_hidden)
        self.meta2 = Linear(config.meta_hidden, config.meta_hidden)
        joint = 2 * E + config.meta_hidden
        self.policy_head = Linear(joint, config.grid * config.grid)
        self.value1 = Linear(joint, config.value_hidden)
        self.value2 = Linear(config.value_hidden, 1)
        self.reset_parameters(config.seed)

    def set_graph(self, graph: MacroGraph, metadata) -> None:
        self.adjacency = torch.as_tensor(np.asarray(graph.adjacency), dtype=DTYPE)
        self.features = torch.as_tensor(np.asarray(graph.features), dtype=DTYPE)
        self.metadata = torch.as_tensor(np.asarray(metadata), dtype=DTYPE)

    def reset_parameters(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(int(seed))
        for m in self.modules():
            if m is not self and hasattr(m, "reset_parameters"):
                m.reset_parameters(gen)

    @property
    def grid(self) -> int:
        return self.config.grid

    def embed(self) -> torch.Tensor:
        x = self.features
        for layer in self.backbone:
            x = layer(x, self.adjacency)
        return x

    def joint(self, ids: torch.Tensor) -> torch.Tensor:
        emb = self.embed()
        pooled = emb.mean(dim=0)
        meta = F.elu(self.meta2(F.elu(self.meta1(self.metadata))))
        b = ids.shape[0]
        return torch.cat([emb[ids], pooled.expand(b, -1), meta.expand(b, -1)], dim=1)

    def forward(self, ids, masks):
        """Batched evaluation.

        ``ids``: (B,) macro indices; ``masks``: (B, W*W) bool, True = legal.
        Returns (log_probs (B, W*W), values (B,)).
        """
        ids = torch.as_tensor(ids, dtype=torch.long).reshape(-1)
        masks = torch.as_tensor(masks, dtype=torch.bool).reshape(ids.shape[0], -1)
        if not bool(masks.any(dim=1).all()):
            raise AllMaskedError("no legal action for some macro")
        z = self.joint(ids)
        logits = self.policy_head(z).masked_fill(~masks, MASK_FILL)
        logp = torch.log_softmax(logits, dim=1)
        values = self.value2(F.elu(self.value1(z))).squeeze(1)
        return logp, values


def forward(net: PolicyNet, macro_id: int, mask) -> PolicyOutput:
    """Action distribution and value for placing macro ``macro_id`` under ``mask``."""
    W = net.grid
    m = torch.as_tensor(np.asarray(mask), dtype=torch.bool).reshape(1, W * W)
    logp, value = net(torch.tensor([macro_id]), m)
    probs = torch.where(m, logp.exp(), torch.zeros_like(logp))
    return PolicyOutput(probs.reshape(W, W), logp.reshape(W, W), value[0])


def masked_entropy(logp: torch.Tensor, masks: torch.Tensor) -> torch.Tensor:
    p = logp.exp()
    return -torch.where(masks, p * logp, torch.zeros_like(logp)).sum(dim=1)


def backward(loss: torch.Tensor) -> None:
    """Accumulate d(loss)/d(params) into ``.grad`` of every parameter."""
    if not isinstance(loss, torch.Tensor) or loss.grad_fn is None:
        raise NoGraphRecordedError("loss was not produced by a recorded computation")
    loss.backward()


# --------------------------------------------------------------------------- checkpoints


def save_checkpoint(net: PolicyNet, path, extra: dict | None = None) -> None:
    """Binary container: magic, version, JSON header, shape table, little-endian float64 data."""
    header = json.dumps({"policy": asdict(net.config), "extra": extra or {}}).encode()
    params = list(net.state_dict().items())
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
    buf.write(header)
    buf.write(struct.pack("<I", len(params)))
    for name, t in params:
        nb = name.encode()
        buf.write(struct.pack("<HB", len(nb), t.dim()))
        buf.write(nb)
        buf.write(struct.pack(f"<{t.dim()}I", *t.shape))
    for _, t in params:
        buf.write(t.detach().cpu().numpy().astype("<f8").tobytes())
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a policy checkpoint")
    off = len(CHECKPOINT_MAGIC)
    try:
        version, hlen = struct.unpack_from("<II", data, off)
        off += 8
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(data[off:off + hlen])
        off += hlen
        (count,) = struct.unpack_from("<I", data, off)
        off += 4
        table = []
        for _ in range(count):
            nlen, ndim = struct.unpack_from("<HB", data, off)
            off += 3
            name = data[off:off + nlen].decode()
            off += nlen
            shape = struct.unpack_from(f"<{ndim}I", data, off)
            off += 4 * ndim
            table.append((name, shape))
        tensors = {}
        for name, shape in table:
            size = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(shape)
            off += 8 * size
            tensors[name] = arr.astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint ({exc})") from exc
    if off != len(data):
        raise CheckpointError(f"{path}: {len(data) - off} trailing bytes")
    return header, tensors


def load_checkpoint(net: PolicyNet, path) -> dict:
    """Load weights into ``net``; shapes must match exactly.  Returns the header."""
    header, tensors = read_checkpoint(path)
    state = net.state_dict()
    if set(state) != set(tensors):
        raise CheckpointError(f"{path}: parameter names differ from the network")
    for name, t in state.items():
        if tuple(t.shape) != tensors[name].shape:
            raise CheckpointError(f"{path}: {name} has shape {tensors[name].shape}, network expects {tuple(t.shape)}")
    net.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in tensors.items()})
    return header


def policy_config_from_header(header: dict) -> PolicyConfig:
    return PolicyConfig(**header["policy"])
