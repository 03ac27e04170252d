"""Residual ground-metric adapter ``g(z) = z + f(z)``.

``f`` is a bottleneck MLP ``d -> h -> d`` with ``h = d // 4``:

    a = z w1 + b1
    y = LayerNorm(a) * norm_gain + norm_bias
    out = z + GELU(y) w2 + b2

Forward and backward passes are written out by hand on float64 tensors; no autograd
graph is ever built. The output layer starts at zero so ``g`` is the identity at
initialisation.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass
import hashlib
import logging
import math
from pathlib import Path
import struct

import numpy as np
import numpy.typing as npt
import torch
from torch import nn

from otward import config
from otward.errors import BadMagic
from otward.errors import ChecksumMismatch
from otward.errors import DimensionMismatch
from otward.errors import InconsistentHeader
from otward.errors import NotConverged
from otward.errors import TruncatedPayload
from otward.linalg import Matrix
from otward.linalg import Rng
from otward.linalg import Vector
from otward.metrics import as_embedding_set
from otward.metrics import EmbeddingLike
from otward.metrics import EmbeddingSet


logger = logging.getLogger(__name__)

LAYER_NORM_EPS = 1e-5
GELU_COEF = 0.044715
GELU_SCALE = math.sqrt(2.0 / math.pi)

ADAPTER_MAGIC = b"OTAD"
ADAPTER_FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHI")
_CHECKSUM_BYTES = 8

PARAMETER_ORDER = ("w1", "b1", "norm_gain", "norm_bias", "w2", "b2")

DTYPE = torch.float64


def gelu(y: torch.Tensor) -> torch.Tensor:
    """GELU, tanh approximation: ``0.5 y (1 + tanh(sqrt(2/pi) (y + 0.044715 y^3)))``."""
    return 0.5 * y * (1.0 + torch.tanh(GELU_SCALE * (y + GELU_COEF * y**3)))


def gelu_grad(y: torch.Tensor) -> torch.Tensor:
    t = torch.tanh(GELU_SCALE * (y + GELU_COEF * y**3))
    return 0.5 * (1.0 + t) + 0.5 * y * (1.0 - t * t) * GELU_SCALE * (1.0 + 3.0 * GELU_COEF * y * y)


@dataclass
class ForwardCache:
    """Activations kept by a forward pass for the matching backward pass."""

    z: torch.Tensor
    x_hat: torch.Tensor
    inv_std: torch.Tensor
    y: torch.Tensor
    hidden: torch.Tensor
    mask: torch.Tensor | None


class ResidualAdapter(nn.Module):
    """Parameters and passes of the residual bottleneck adapter.

    Args:
        d: embedding dimension.
        hidden: bottleneck width, ``d // 4`` unless overridden.
        dropout_rate: inverted-dropout rate on the hidden activation, training only.
    """

    def __init__(self, d: int, hidden: int | None = None, dropout_rate: float = 0.0) -> None:
        super().__init__()
        hidden = d // 4 if hidden is None else hidden
        if d < 1 or hidden < 1:
            raise DimensionMismatch(f"adapter needs d >= 1 and a hidden width >= 1 (d={d})")
        if not 0.0 <= dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {dropout_rate}")
        self.d = d
        self.hidden = hidden
        self.dropout_rate = float(dropout_rate)
        self.w1 = nn.Parameter(torch.zeros(d, hidden, dtype=DTYPE))
        self.b1 = nn.Parameter(torch.zeros(hidden, dtype=DTYPE))
        self.norm_gain = nn.Parameter(torch.ones(hidden, dtype=DTYPE))
        self.norm_bias = nn.Parameter(torch.zeros(hidden, dtype=DTYPE))
        self.w2 = nn.Parameter(torch.zeros(hidden, d, dtype=DTYPE))
        self.b2 = nn.Parameter(torch.zeros(d, dtype=DTYPE))

    @classmethod
    def initialise(
        cls,
        d: int,
        rng: Rng,
        hidden: int | None = None,
        dropout_rate: float = 0.0,
    ) -> ResidualAdapter:
        """Identity-initialised adapter: ``w1 ~ N(0, 1/d)``, everything after LN at rest."""
        adapter = cls(d, hidden=hidden, dropout_rate=dropout_rate)
        w1 = rng.normal((d, adapter.hidden)) / math.sqrt(d)
        adapter.w1.data.copy_(torch.from_numpy(w1))
        return adapter

    def extra_repr(self) -> str:
        return f"d={self.d}, hidden={self.hidden}, dropout_rate={self.dropout_rate}"

    def named_arrays(self) -> dict[str, npt.NDArray[np.float64]]:
        return {name: getattr(self, name).detach().numpy().copy() for name in PARAMETER_ORDER}

    def load_arrays(self, arrays: dict[str, npt.ArrayLike]) -> ResidualAdapter:
        for name in PARAMETER_ORDER:
            if name not in arrays:
                continue
            target = getattr(self, name)
            value = torch.as_tensor(np.asarray(arrays[name], dtype=np.float64))
            if value.shape != target.shape:
                raise DimensionMismatch(
                    f"{name}: expected {tuple(target.shape)}, got {tuple(value.shape)}"
                )
            target.data.copy_(value)
        return self

    def clone(self) -> ResidualAdapter:
        twin = ResidualAdapter(self.d, hidden=self.hidden, dropout_rate=self.dropout_rate)
        return twin.load_arrays(self.named_arrays())

    def is_identity(self) -> bool:
        return bool(torch.all(self.w2 == 0) and torch.all(self.b2 == 0))

    def _check(self, z: torch.Tensor) -> None:
        if z.shape[-1] != self.d:
            raise DimensionMismatch(
                f"adapter of dimension {self.d} applied to width {z.shape[-1]}"
            )

    @torch.no_grad()
    def forward_cached(
        self, z: torch.Tensor, training: bool = False, rng: Rng | None = None
    ) -> tuple[torch.Tensor, ForwardCache]:
        """Batched forward pass over rows of ``z`` returning the cache for ``backward``."""
        self._check(z)
        a = z @ self.w1 + self.b1
        centred = a - a.mean(dim=-1, keepdim=True)
        inv_std = 1.0 / torch.sqrt((centred * centred).mean(dim=-1, keepdim=True) + LAYER_NORM_EPS)
        x_hat = centred * inv_std
        y = x_hat * self.norm_gain + self.norm_bias
        hidden = gelu(y)
        mask = None
        if training and self.dropout_rate > 0.0:
            if rng is None:
                raise ValueError("training with dropout needs an Rng")
            keep = rng.uniform(tuple(hidden.shape)) >= self.dropout_rate
            mask = torch.from_numpy(keep.astype(np.float64) / (1.0 - self.dropout_rate))
            hidden = hidden * mask
        out = z + hidden @ self.w2 + self.b2
        return out, ForwardCache(z=z, x_hat=x_hat, inv_std=inv_std, y=y, hidden=hidden, mask=mask)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        out, _ = self.forward_cached(z)
        return out

    @torch.no_grad()
    def backward(
        self, cache: ForwardCache, d_out: torch.Tensor
    ) -> tuple[dict[str, torch.Tensor], torch.Tensor]:
        """Gradients of a loss w.r.t. every parameter and the input, given ``dL/d out``."""
        grads: dict[str, torch.Tensor] = {}
        grads["w2"] = cache.hidden.transpose(-1, -2) @ d_out
        grads["b2"] = d_out.sum(dim=0)
        d_hidden = d_out @ self.w2.T
        if cache.mask is not None:
            d_hidden = d_hidden * cache.mask
        d_y = d_hidden * gelu_grad(cache.y)
        grads["norm_gain"] = (d_y * cache.x_hat).sum(dim=0)
        grads["norm_bias"] = d_y.sum(dim=0)
        d_xhat = d_y * self.norm_gain
        d_a = cache.inv_std * (
            d_xhat
            - d_xhat.mean(dim=-1, keepdim=True)
            - cache.x_hat * (d_xhat * cache.x_hat).mean(dim=-1, keepdim=True)
        )
        grads["w1"] = cache.z.transpose(-1, -2) @ d_a
        grads["b1"] = d_a.sum(dim=0)
        d_z = d_out + d_a @ self.w1.T
        return grads, d_z

    @torch.no_grad()
    def residual_jacobian(self, z: torch.Tensor) -> torch.Tensor:
        """``J_f(z)`` for a single point, dropout disabled."""
        self._check(z)
        a = z @ self.w1 + self.b1
        h = self.hidden
        centred = a - a.mean()
        inv_std = 1.0 / torch.sqrt((centred * centred).mean() + LAYER_NORM_EPS)
        x_hat = centred * inv_std
        y = x_hat * self.norm_gain + self.norm_bias
        eye = torch.eye(h, dtype=DTYPE)
        centring = torch.full((h, h), 1.0 / h, dtype=DTYPE)
        d_norm = inv_std * (eye - centring - torch.outer(x_hat, x_hat) / h)
        d_y = (gelu_grad(y) * self.norm_gain)[:, None] * d_norm
        return self.w2.T @ d_y @ self.w1.T


AdapterParams = ResidualAdapter


def _as_tensor(z: npt.ArrayLike) -> torch.Tensor:
    return torch.from_numpy(np.array(z, dtype=np.float64))


def adapter_forward(
    p: ResidualAdapter, z: npt.ArrayLike, training: bool = False, rng: Rng | None = None
) -> npt.NDArray[np.float64]:
    """``g(z)`` for a vector or for every row of a matrix."""
    out, _ = p.forward_cached(_as_tensor(z), training=training, rng=rng)
    return out.numpy()


def adapter_backward(
    p: ResidualAdapter, cache: ForwardCache, d_out: npt.ArrayLike | torch.Tensor
) -> dict[str, torch.Tensor]:
    grad = d_out if isinstance(d_out, torch.Tensor) else _as_tensor(d_out)
    if grad.shape != cache.z.shape:
        raise DimensionMismatch(
            f"upstream gradient {tuple(grad.shape)} vs input {tuple(cache.z.shape)}"
        )
    grads, _ = p.backward(cache, grad)
    return grads


def adapt(p: ResidualAdapter, e: EmbeddingLike) -> EmbeddingSet:
    """Push every row of an embedding set through ``g`` (inference mode)."""
    es = as_embedding_set(e)
    return EmbeddingSet(
        points=adapter_forward(p, es.points), labels=es.labels, source_id=es.source_id
    )


@dataclass(frozen=True)
class JacobianProbe:
    point: Vector
    jacobian: Matrix
    pullback: Matrix
    residual_jacobian: Matrix
    trace_jf: float
    det_estimate: float
    residual_op_norm: float


def jacobian_probe(p: ResidualAdapter, z: npt.ArrayLike) -> JacobianProbe:
    point = _as_tensor(z).reshape(-1)
    j_f = p.residual_jacobian(point)
    j = torch.eye(p.d, dtype=DTYPE) + j_f
    return JacobianProbe(
        point=point.numpy(),
        jacobian=j.numpy(),
        pullback=(j.T @ j).numpy(),
        residual_jacobian=j_f.numpy(),
        trace_jf=float(torch.trace(j_f)),
        det_estimate=float(torch.linalg.det(j)),
        residual_op_norm=float(torch.linalg.matrix_norm(j_f, ord=2)),
    )


def invert_adapter(
    p: ResidualAdapter, y: npt.ArrayLike, max_iter: int = 500, tol: float = 1e-12
) -> npt.NDArray[np.float64]:
    """Solve ``z + f(z) = y`` by the fixed point ``z <- y - f(z)``.

    Converges when ``f`` is a contraction on the region visited; raises NotConverged
    otherwise.
    """
    target = _as_tensor(y)
    z = target.clone()
    for _ in range(max_iter):
        residual = p(z) - z
        z_next = target - residual
        step = float(torch.max(torch.abs(z_next - z)))
        z = z_next
        if step < tol:
            return z.numpy()
    raise NotConverged(f"adapter inverse did not converge in {max_iter} iterations")


def pushforward_density(
    p: ResidualAdapter,
    y: npt.ArrayLike,
    base_density: Callable[[npt.NDArray[np.float64]], npt.NDArray[np.float64]],
) -> npt.NDArray[np.float64]:
    """Density of ``g_# mu`` at rows of ``y``: ``p_mu(z) / |det J(z)|`` with ``z = g^-1(y)``."""
    points = np.atleast_2d(np.asarray(y, dtype=np.float64))
    z = invert_adapter(p, points)
    dets = np.array([abs(jacobian_probe(p, row).det_estimate) for row in z])
    return base_density(z) / dets


def _checksum(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size=_CHECKSUM_BYTES).digest()


def encode_adapter(p: ResidualAdapter) -> bytes:
    if p.hidden != p.d // 4:
        raise ValueError(
            f"the adapter file format stores hidden width d // 4; got hidden={p.hidden}, d={p.d}"
        )
    arrays = p.named_arrays()
    blocks = [
        np.ascontiguousarray(arrays[name], dtype="<f4").tobytes() for name in PARAMETER_ORDER
    ]
    blocks.append(np.asarray([p.dropout_rate], dtype="<f4").tobytes())
    payload = _HEADER.pack(ADAPTER_MAGIC, ADAPTER_FORMAT_VERSION, p.d) + b"".join(blocks)
    return payload + _checksum(payload)


def decode_adapter(raw: bytes) -> ResidualAdapter:
    if len(raw) < len(ADAPTER_MAGIC) or raw[: len(ADAPTER_MAGIC)] != ADAPTER_MAGIC:
        raise BadMagic("not an adapter file (expected magic 'OTAD')")
    if len(raw) < _HEADER.size:
        raise TruncatedPayload("adapter header is truncated")
    _, version, d = _HEADER.unpack_from(raw)
    if version != ADAPTER_FORMAT_VERSION:
        raise InconsistentHeader(f"unsupported adapter format version {version}")
    h = d // 4
    if h < 1:
        raise InconsistentHeader(f"dimension {d} gives an empty hidden layer")
    sizes = {"w1": d * h, "b1": h, "norm_gain": h, "norm_bias": h, "w2": h * d, "b2": d}
    expected = _HEADER.size + 4 * (sum(sizes.values()) + 1) + _CHECKSUM_BYTES
    if len(raw) < expected:
        raise TruncatedPayload(f"adapter file has {len(raw)} bytes, expected {expected}")
    if len(raw) > expected:
        raise InconsistentHeader(f"adapter file has {len(raw)} bytes, header implies {expected}")
    body, checksum = raw[:-_CHECKSUM_BYTES], raw[-_CHECKSUM_BYTES:]
    if _checksum(body) != checksum:
        raise ChecksumMismatch("adapter checksum does not match its contents")

    values = np.frombuffer(body, dtype="<f4", offset=_HEADER.size).astype(np.float64)
    shapes = {"w1": (d, h), "w2": (h, d)}
    arrays: dict[str, npt.ArrayLike] = {}
    offset = 0
    for name in PARAMETER_ORDER:
        chunk = values[offset : offset + sizes[name]]
        arrays[name] = chunk.reshape(shapes.get(name, (sizes[name],)))
        offset += sizes[name]
    dropout_rate = float(values[offset])
    return ResidualAdapter(d, dropout_rate=dropout_rate).load_arrays(arrays)


def save_adapter(p: ResidualAdapter, path: Path | str) -> Path:
    target = Path(path)
    target.write_bytes(encode_adapter(p))
    logger.info("wrote adapter (d=%d) to %s", p.d, target)
    return target


def resolve_adapter_path(path: Path | str) -> Path:
    """A directory resolves to its ``adapter.otad``; a file path is used as is."""
    target = Path(path)
    if target.is_dir():
        target = target / config.ADAPTER_FILENAME
    if not target.is_file():
        raise FileNotFoundError(f"No adapter file at {target}")
    return target


def load_adapter(path: Path | str) -> ResidualAdapter:
    return decode_adapter(resolve_adapter_path(path).read_bytes())
