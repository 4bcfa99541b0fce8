"""The bank of K+1 feedforward networks: affine + activation layers, top-layer
embeddings and per-network squared distances."""

from dataclasses import dataclass, field

import numpy as np


def _scaled_tanh(z):
    return 1.7159 * np.tanh(z * (2.0 / 3.0))


def _scaled_tanh_prime(z):
    t = np.tanh(z * (2.0 / 3.0))
    return 1.7159 * (2.0 / 3.0) * (1.0 - t * t)


# relu derivative at 0 is defined as 0
ACTIVATIONS = {
    "linear": (lambda z: z, lambda z: np.ones_like(z)),
    "tanh": (np.tanh, lambda z: 1.0 - np.tanh(z) ** 2),
    "relu": (lambda z: np.maximum(z, 0.0), lambda z: (z > 0).astype(np.float64)),
    "scaled_tanh": (_scaled_tanh, _scaled_tanh_prime),
}


@dataclass
class LayerParams:
    W: np.ndarray  # (p_out, p_in)
    b: np.ndarray  # (p_out,)

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ValueError(f"inconsistent layer shapes W{self.W.shape} b{self.b.shape}")
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b))):
            raise ValueError("layer parameters must be finite")


@dataclass
class Network:
    layers: list
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation: {self.activation!r}")
        if not self.layers:
            raise ValueError("a network needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.W.shape[1] != prev.W.shape[0]:
                raise ValueError(
                    f"layer shapes do not chain: {prev.W.shape} -> {nxt.W.shape}")

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].W.shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].W.shape[0]

    def truncated(self, depth: int) -> "Network":
        """Shallow copy keeping layers 1..depth; parameter arrays are shared."""
        return Network(self.layers[:depth], self.activation)


@dataclass
class ForwardTrace:
    """Per-layer pre-activations z and activations h for one input."""

    zs: list
    hs: list

    @property
    def embedding(self) -> np.ndarray:
        return self.hs[-1]


@dataclass
class NetworkBank:
    """Index 0 is the global network; 1..K are the local networks."""

    networks: list

    def __post_init__(self):
        if not self.networks:
            raise ValueError("bank needs at least the global network")
        d = self.networks[0].in_dim
        if any(net.in_dim != d for net in self.networks):
            raise ValueError("all networks must share the input dimension")

    @property
    def global_net(self) -> Network:
        return self.networks[0]

    @property
    def k_locals(self) -> int:
        return len(self.networks) - 1

    @property
    def in_dim(self) -> int:
        return self.networks[0].in_dim

    def copy(self) -> "NetworkBank":
        return NetworkBank([
            Network([LayerParams(l.W.copy(), l.b.copy()) for l in net.layers],
                    net.activation)
            for net in self.networks
        ])


def identity_layer(p_out: int, p_in: int) -> LayerParams:
    """Rectangular identity weight (ones on the main diagonal) and zero bias."""
    return LayerParams(np.eye(p_out, p_in), np.zeros(p_out))


def init_network(dims, activation: str = "tanh") -> Network:
    """dims = [in, p1, ..., pM]; every layer starts at the identity-like init."""
    if len(dims) < 2:
        raise ValueError("dims must list the input size and at least one layer")
    layers = [identity_layer(dims[m + 1], dims[m]) for m in range(len(dims) - 1)]
    return Network(layers, activation)


def init_bank(dims, K: int, activation: str = "tanh") -> NetworkBank:
    """K+1 identically initialized networks.

    dims is either one size chain shared by all networks, or a list of K+1
    chains (global first).
    """
    if K < 0:
        raise ValueError("K must be >= 0")
    if dims and isinstance(dims[0], (list, tuple)):
        if len(dims) != K + 1:
            raise ValueError(f"expected {K + 1} dim chains, got {len(dims)}")
        chains = dims
    else:
        chains = [dims] * (K + 1)
    return NetworkBank([init_network(list(c), activation) for c in chains])


def forward(net: Network, x: np.ndarray) -> ForwardTrace:
    """Run one sample through the network, keeping every z and h."""
    h = np.asarray(x, dtype=np.float64)
    if h.shape != (net.in_dim,):
        raise ValueError(f"expected a {net.in_dim}-vector, got shape {h.shape}")
    act, _ = ACTIVATIONS[net.activation]
    zs, hs = [], []
    for layer in net.layers:
        z = layer.W @ h + layer.b
        h = act(z)
        zs.append(z)
        hs.append(h)
    return ForwardTrace(zs, hs)


def forward_batch(net: Network, X: np.ndarray):
    """Columns-of-X variant of forward; returns per-layer (Z, H) matrix lists."""
    if X.shape[0] != net.in_dim:
        raise ValueError(f"expected {net.in_dim}-dim columns, got {X.shape[0]}")
    act, _ = ACTIVATIONS[net.activation]
    H = X
    Zs, Hs = [], []
    for layer in net.layers:
        Z = layer.W @ H + layer.b[:, None]
        H = act(Z)
        Zs.append(Z)
        Hs.append(H)
    return Zs, Hs


def embed(net: Network, x: np.ndarray) -> np.ndarray:
    return forward(net, x).embedding


def net_distance(net: Network, x_i: np.ndarray, x_j: np.ndarray) -> float:
    """Squared Euclidean distance between top-layer embeddings."""
    diff = embed(net, x_i) - embed(net, x_j)
    return float(diff @ diff)
