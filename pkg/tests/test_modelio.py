import numpy as np
import pytest

from nlml.clustering import ClusterModel, empty_clusters
from nlml.metric import NlmlModel
from nlml.modelio import ModelFileError, load_model, save_model
from nlml.network import init_bank
from nlml.pca import PcaModel
from nlml.training import Hyperparams


def random_model(rng, with_pca=False):
    K = int(rng.integers(0, 4))
    d = int(rng.integers(2, 7))
    depth_dims = tuple(int(v) for v in rng.integers(2, 6, size=int(rng.integers(1, 4))))
    activation = rng.choice(["linear", "tanh", "relu", "scaled_tanh"])
    bank = init_bank([d, *depth_dims], K, str(activation))
    for net in bank.networks:
        for layer in net.layers:
            layer.W += rng.normal(size=layer.W.shape)
            layer.b += rng.normal(size=layer.b.shape)
    clusters = (ClusterModel(rng.normal(size=(d, K)), sigma=float(rng.uniform(0.1, 2)))
                if K else empty_clusters(d))
    pca = None
    if with_pca:
        d_in = d + 3
        basis = np.linalg.qr(rng.normal(size=(d_in, d)))[0]
        pca = PcaModel(mean=rng.normal(size=d_in), basis=basis,
                       explained_variance=np.sort(rng.uniform(size=d))[::-1].copy())
    hp = Hyperparams(K=K, hidden_dims=depth_dims, activation=str(activation),
                     seed=int(rng.integers(1 << 16)))
    return NlmlModel(bank=bank, clusters=clusters, beta=float(rng.uniform(0.1, 3)),
                     pca=pca), hp


def assert_bit_equal(a: NlmlModel, b: NlmlModel):
    assert len(a.bank.networks) == len(b.bank.networks)
    for na, nb in zip(a.bank.networks, b.bank.networks):
        assert na.activation == nb.activation
        for la, lb in zip(na.layers, nb.layers):
            assert la.W.tobytes() == lb.W.tobytes()
            assert la.b.tobytes() == lb.b.tobytes()
    assert a.clusters.centers.tobytes() == b.clusters.centers.tobytes()
    assert a.clusters.sigma == b.clusters.sigma
    assert a.beta == b.beta
    assert (a.pca is None) == (b.pca is None)
    if a.pca is not None:
        assert a.pca.mean.tobytes() == b.pca.mean.tobytes()
        assert a.pca.basis.tobytes() == b.pca.basis.tobytes()


def test_roundtrip_many_random_models(tmp_path):
    rng = np.random.default_rng(0)
    for trial in range(30):
        model, hp = random_model(rng, with_pca=bool(trial % 2))
        path = tmp_path / f"m{trial}.nlml"
        save_model(path, model, hp)
        loaded, hp2 = load_model(path)
        assert_bit_equal(model, loaded)
        assert hp2 == hp


def test_save_is_byte_deterministic(tmp_path):
    rng = np.random.default_rng(1)
    model, hp = random_model(rng, with_pca=True)
    p1, p2 = tmp_path / "a.nlml", tmp_path / "b.nlml"
    save_model(p1, model, hp)
    save_model(p2, model, hp)
    assert p1.read_bytes() == p2.read_bytes()


def test_bad_magic_rejected(tmp_path):
    p = tmp_path / "bogus.nlml"
    p.write_bytes(b"NOTMODEL" + b"\x00" * 32)
    with pytest.raises(ModelFileError, match="magic"):
        load_model(p)


def test_bad_version_rejected(tmp_path):
    import struct
    p = tmp_path / "vers.nlml"
    p.write_bytes(b"NLMLMODL" + struct.pack("<I", 99))
    with pytest.raises(ModelFileError, match="version"):
        load_model(p)
