import numpy as np
import pytest

from cemlab import data, models, train


def tiny_arch(kind: str, ds, emb_size: int = 8, hidden=(16, 16), **kw) -> models.ArchitectureConfig:
    return models.ArchitectureConfig(
        kind=kind,
        n_features=ds.n_features,
        n_concepts=ds.n_concepts,
        n_classes=ds.n_classes,
        emb_size=emb_size,
        hidden=hidden,
        **kw,
    )


def quick_train(kind: str, ds, max_epochs: int = 25, seed: int = 0, **kw):
    cfg = tiny_arch(kind, ds, **{k: v for k, v in kw.items() if k in ("emb_size", "hidden")})
    tkw = {k: v for k, v in kw.items() if k not in ("emb_size", "hidden")}
    tcfg = train.TrainConfig(seed=seed, max_epochs=max_epochs, **tkw)
    params = models.init(cfg)
    params, trace = train.train(params, cfg, tcfg, ds)
    return params, cfg, trace


@pytest.fixture(scope="session")
def xor_small():
    return data.generate("xor", n=400, seed=11)


@pytest.fixture(scope="session")
def trig_small():
    return data.generate("trig", n=400, seed=11)


@pytest.fixture(scope="session")
def dot_small():
    return data.generate("dot", n=400, seed=11)


@pytest.fixture(scope="session")
def trained_fuzzy_xor(xor_small):
    return quick_train("fuzzy", xor_small, max_epochs=40)


@pytest.fixture(scope="session")
def trained_cem_xor(xor_small):
    return quick_train("cem", xor_small, max_epochs=40, randint=True)
