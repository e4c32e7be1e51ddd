import numpy as np
import pytest

from md2ga.backbone import ModelConfig, init_params
from md2ga.data import SyntheticConfig, gen_synthetic
from md2ga.model import forward
from md2ga.objective import total_loss

TINY = dict(T_p=4, T_f=4, J=3, D=2, K=2)
TINY_WIDTHS = dict(embed_hidden=8, hidden=8, head_hidden=8, gate_hidden=8, mlp_hidden=8)


def tiny_config(**overrides):
    return ModelConfig(**{**TINY, **TINY_WIDTHS, **overrides})


def tiny_data(count=3, seed=0):
    return gen_synthetic(SyntheticConfig(J=3, D=2, T_p=4, T_f=4, count=count, seed=seed))


def tiny_loss_fn(params, ds):
    G = ds.G

    def f():
        fw = forward(params, ds.X)
        return total_loss(fw.prediction, fw.outputs, G, params.config.schedule).total

    return f


@pytest.fixture
def tiny_params():
    return init_params(tiny_config())


@pytest.fixture
def tiny_ds():
    return tiny_data()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
