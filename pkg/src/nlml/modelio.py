"""Versioned binary model container with a bit-exact round trip."""

import io
import json
import struct
from dataclasses import asdict

import numpy as np

from .clustering import ClusterModel, empty_clusters
from .metric import NlmlModel
from .network import LayerParams, Network, NetworkBank
from .pca import PcaModel
from .training import Hyperparams
from .utils import atomic_write_bytes

MODEL_MAGIC = b"NLMLMODL"
MODEL_VERSION = 1


class ModelFileError(ValueError):
    pass


def _write_bytes(buf, payload: bytes):
    buf.write(struct.pack("<I", len(payload)))
    buf.write(payload)


def _read_bytes(fh) -> bytes:
    (n,) = struct.unpack("<I", fh.read(4))
    return fh.read(n)


def _write_array(buf, arr: np.ndarray):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    buf.write(struct.pack("<I", arr.ndim))
    for s in arr.shape:
        buf.write(struct.pack("<Q", s))
    buf.write(arr.tobytes())


def _read_array(fh) -> np.ndarray:
    (ndim,) = struct.unpack("<I", fh.read(4))
    shape = tuple(struct.unpack("<Q", fh.read(8))[0] for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(fh.read(8 * count), dtype="<f8")
    return data.reshape(shape).copy()


def save_model(path, model: NlmlModel, hp: Hyperparams):
    buf = io.BytesIO()
    buf.write(MODEL_MAGIC)
    buf.write(struct.pack("<I", MODEL_VERSION))
    # hyperparams (includes the training seed) as a json blob; python float
    # repr round-trips exactly
    _write_bytes(buf, json.dumps(asdict(hp), sort_keys=True).encode("utf-8"))

    buf.write(struct.pack("<B", 1 if model.pca is not None else 0))
    if model.pca is not None:
        _write_array(buf, model.pca.mean)
        _write_array(buf, model.pca.basis)
        _write_array(buf, model.pca.explained_variance)
        buf.write(struct.pack("<B", 1 if model.pca.scale is not None else 0))
        if model.pca.scale is not None:
            _write_array(buf, model.pca.scale)

    buf.write(struct.pack("<I", model.clusters.k_regions))
    if model.clusters.k_regions:
        _write_array(buf, model.clusters.centers)
        buf.write(struct.pack("<d", model.clusters.sigma))
    else:
        buf.write(struct.pack("<I", model.bank.in_dim))

    buf.write(struct.pack("<d", model.beta))
    buf.write(struct.pack("<I", len(model.bank.networks)))
    for net in model.bank.networks:
        _write_bytes(buf, net.activation.encode("ascii"))
        buf.write(struct.pack("<I", net.depth))
        for layer in net.layers:
            _write_array(buf, layer.W)
            _write_array(buf, layer.b)
    atomic_write_bytes(path, buf.getvalue())


def load_model(path):
    """Returns (NlmlModel, Hyperparams)."""
    with open(path, "rb") as fh:
        if fh.read(8) != MODEL_MAGIC:
            raise ModelFileError(f"{path}: not a model file (bad magic)")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != MODEL_VERSION:
            raise ModelFileError(f"{path}: unsupported model version {version}")
        hp_dict = json.loads(_read_bytes(fh).decode("utf-8"))
        hp_dict["hidden_dims"] = tuple(hp_dict["hidden_dims"])
        hp = Hyperparams(**hp_dict)

        (has_pca,) = struct.unpack("<B", fh.read(1))
        pca = None
        if has_pca:
            mean = _read_array(fh)
            basis = _read_array(fh)
            ev = _read_array(fh)
            (has_scale,) = struct.unpack("<B", fh.read(1))
            scale = _read_array(fh) if has_scale else None
            pca = PcaModel(mean=mean, basis=basis, explained_variance=ev, scale=scale)

        (k,) = struct.unpack("<I", fh.read(4))
        if k:
            centers = _read_array(fh)
            (sigma,) = struct.unpack("<d", fh.read(8))
            clusters = ClusterModel(centers, sigma)
        else:
            (dim,) = struct.unpack("<I", fh.read(4))
            clusters = empty_clusters(dim)

        (beta,) = struct.unpack("<d", fh.read(8))
        (n_nets,) = struct.unpack("<I", fh.read(4))
        nets = []
        for _ in range(n_nets):
            activation = _read_bytes(fh).decode("ascii")
            (depth,) = struct.unpack("<I", fh.read(4))
            layers = []
            for _ in range(depth):
                W = _read_array(fh)
                b = _read_array(fh)
                layers.append(LayerParams(W, b))
            nets.append(Network(layers, activation))
    model = NlmlModel(bank=NetworkBank(nets), clusters=clusters, beta=beta, pca=pca)
    return model, hp
