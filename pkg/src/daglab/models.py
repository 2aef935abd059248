"""Perceptron generator and the K-branch discriminator with configurable weight sharing.

A discriminator branch is a stack of trunk layers followed by a head layer.
Sharing is realised by aliasing: branches that share a layer hold the very
same ``Tensor`` objects, so an optimizer step on the unique parameter list
updates every branch at once.

Sharing modes (L = number of trunk layers):

``none``           every branch owns all of its layers
``half``           the first ceil(L/2) trunk layers are shared
``all_but_heads``  the whole trunk is shared, each branch keeps its own head
``all``            one network; every branch uses the same head
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class SharingMode(str, enum.Enum):
    NONE = "none"
    HALF = "half"
    ALL_BUT_HEADS = "all_but_heads"
    ALL = "all"


_ACTIVATIONS = {
    "relu": ad.relu,
    "leaky_relu": ad.leaky_relu,
    "tanh": ad.tanh,
    "sigmoid": ad.sigmoid,
    "linear": lambda x: x,
}


@dataclass(frozen=True)
class MlpSpec:
    in_dim: int
    hidden: tuple[int, ...]
    out_dim: int
    activation: str = "leaky_relu"
    output: str = "linear"

    def __post_init__(self):
        if not self.hidden:
            raise ValueError("an MLP needs at least one hidden layer")
        if min(self.in_dim, self.out_dim, *self.hidden) < 1:
            raise ValueError("layer widths must be positive")
        for act in (self.activation, self.output):
            if act not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")

    @property
    def widths(self) -> list[int]:
        return [self.in_dim, *self.hidden, self.out_dim]


@dataclass
class Layer:
    weight: Tensor
    bias: Tensor

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.weight), self.bias)

    @property
    def params(self) -> list[Tensor]:
        return [self.weight, self.bias]


def _layer(fan_in: int, fan_out: int, rng: np.random.Generator, name: str) -> Layer:
    return Layer(
        Tensor(ad.glorot_uniform(fan_in, fan_out, rng), name=f"{name}.w"),
        Tensor(np.zeros(fan_out), name=f"{name}.b"),
    )


def _unique(tensors) -> list[Tensor]:
    seen, out = set(), []
    for t in tensors:
        if id(t) not in seen:
            seen.add(id(t))
            out.append(t)
    return out


@dataclass
class Generator:
    spec: MlpSpec
    layers: list[Layer]
    latent_dim: int
    prior: str = "normal"

    @property
    def params(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.params]

    def forward(self, z: Tensor) -> Tensor:
        act = _ACTIVATIONS[self.spec.activation]
        h = z
        for layer in self.layers[:-1]:
            h = act(layer(h))
        return _ACTIVATIONS[self.spec.output](self.layers[-1](h))

    def sample_latent(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.prior == "uniform":
            return rng.uniform(0.0, 1.0, size=(n, self.latent_dim))
        return rng.standard_normal((n, self.latent_dim))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.forward(Tensor(self.sample_latent(n, rng))).values


def build_generator(spec: MlpSpec, seed: int | np.random.Generator, prior: str = "normal") -> Generator:
    if prior not in ("normal", "uniform"):
        raise ValueError(f"unknown latent prior {prior!r}")
    rng = np.random.default_rng(seed)
    w = spec.widths
    layers = [_layer(w[i], w[i + 1], rng, f"g{i}") for i in range(len(w) - 1)]
    return Generator(spec, layers, spec.in_dim, prior)


@dataclass
class SharedTrunkDiscriminator:
    spec: MlpSpec
    sharing: SharingMode
    branches: list[list[Layer]] = field(repr=False)

    @property
    def K(self) -> int:
        return len(self.branches)

    @property
    def params(self) -> list[Tensor]:
        """Unique parameters, each aliased tensor listed once."""
        return _unique(p for branch in self.branches for layer in branch for p in layer.params)

    def branch_params(self, k: int) -> list[Tensor]:
        return [p for layer in self.branches[k] for p in layer.params]

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params)

    def sharing_matrix(self) -> np.ndarray:
        """``M[k, j, l]`` is True when layer l of branch k is the same object as in branch j."""
        L = len(self.branches[0])
        out = np.zeros((self.K, self.K, L), dtype=bool)
        for k in range(self.K):
            for j in range(self.K):
                for l in range(L):
                    out[k, j, l] = self.branches[k][l] is self.branches[j][l]
        return out

    def subset(self, ks) -> "SharedTrunkDiscriminator":
        """A view over selected branches; parameters stay aliased to this one."""
        return SharedTrunkDiscriminator(self.spec, self.sharing, [self.branches[k] for k in ks])

    def discriminate(self, k: int, x: Tensor) -> Tensor:
        return discriminate(self, k, x)


def shared_layer_count(sharing: SharingMode, n_trunk: int) -> int:
    if sharing is SharingMode.NONE:
        return 0
    if sharing is SharingMode.HALF:
        return math.ceil(n_trunk / 2)
    return n_trunk


def build_discriminator(
    spec: MlpSpec, K: int, sharing: SharingMode | str, seed: int | np.random.Generator
) -> SharedTrunkDiscriminator:
    """Trunk layers are the hidden affine layers of ``spec``; the final affine layer is the head."""
    if K < 1:
        raise ValueError("K must be >= 1")
    sharing = SharingMode(sharing)
    rng = np.random.default_rng(seed)
    w = spec.widths
    n_trunk = len(w) - 2
    n_shared = shared_layer_count(sharing, n_trunk)
    shared = [_layer(w[i], w[i + 1], rng, f"d.shared{i}") for i in range(n_shared)]
    common_head = _layer(w[-2], w[-1], rng, "d.head") if sharing is SharingMode.ALL else None
    branches = []
    for k in range(K):
        own = [_layer(w[i], w[i + 1], rng, f"d{k}.{i}") for i in range(n_shared, n_trunk)]
        head = common_head or _layer(w[-2], w[-1], rng, f"d{k}.head")
        branches.append([*shared, *own, head])
    return SharedTrunkDiscriminator(spec, sharing, branches)


def discriminate(d: SharedTrunkDiscriminator, k: int, x: Tensor) -> Tensor:
    """Logits of branch ``k`` (0-based; branch 0 pairs with the identity transform)."""
    if not 0 <= k < d.K:
        raise IndexError(f"branch {k} out of range for K={d.K}")
    if x.shape[-1] != d.spec.in_dim:
        raise ad.ShapeError(f"expected input width {d.spec.in_dim}, got {x.shape}")
    act = _ACTIVATIONS[d.spec.activation]
    layers = d.branches[k]
    h = x
    for layer in layers[:-1]:
        h = act(layer(h))
    return layers[-1](h)


# ----------------------------------------------------------------------------
# flat serialization: one float64 blob plus a JSON-able manifest


def export_params(named: dict[str, list[Tensor]]) -> tuple[bytes, list[dict]]:
    """Concatenate unique tensors little-endian; aliases point at the first copy."""
    blob = bytearray()
    entries = []
    first: dict[int, str] = {}
    offset = 0
    for group, tensors in named.items():
        for i, t in enumerate(tensors):
            name = f"{group}[{i}]" if t.name is None else f"{group}:{t.name}"
            if id(t) in first:
                entries.append({"name": name, "alias_of": first[id(t)]})
                continue
            first[id(t)] = name
            data = np.ascontiguousarray(t.values, dtype="<f8")
            entries.append({"name": name, "shape": list(t.shape), "offset": offset, "count": int(data.size)})
            blob += data.tobytes()
            offset += data.size
    return bytes(blob), entries


def import_params(blob: bytes, entries: list[dict]) -> dict[str, np.ndarray]:
    flat = np.frombuffer(blob, dtype="<f8")
    out: dict[str, np.ndarray] = {}
    for e in entries:
        if "alias_of" in e:
            out[e["name"]] = out[e["alias_of"]]
        else:
            out[e["name"]] = flat[e["offset"] : e["offset"] + e["count"]].reshape(e["shape"]).copy()
    return out
