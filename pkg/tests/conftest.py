import numpy as np
import pytest

from graphrank.graph import SbmParams, Split, build_graph, generate_sbm


@pytest.fixture
def path_graph():
    """Path 0-1-2 with one node per split."""
    return build_graph(
        [(0, 1), (1, 2)], 3,
        features=np.eye(3),
        labels=[0, 1, 0],
        split=[Split.TRAIN, Split.VAL, Split.TEST],
    )


@pytest.fixture(scope="session")
def small_sbm():
    """Separable two-block SBM used across model tests."""
    return generate_sbm(SbmParams(n=60, c=2, p_in=0.4, p_out=0.02, d=8,
                                  signal=4.0, noise=0.5, seed=7))


@pytest.fixture(scope="session")
def sbm_50():
    """The fixed 50-node instance behind the golden regression files."""
    return generate_sbm(SbmParams(n=50, c=3, p_in=0.3, p_out=0.05, d=6,
                                  signal=2.0, noise=1.0, seed=11))


@pytest.fixture(scope="session")
def sbm50_mc_bundle(sbm_50):
    """Dropout-averaged predictions on the golden instance (fixed recipe)."""
    from graphrank.models import TrainConfig, gcn_mc_dropout, train_gcn

    model = train_gcn(sbm_50, TrainConfig(epochs=60, learning_rate=0.05, hidden=16,
                                          weight_decay=1e-4, dropout=0.5, seed=13))
    return gcn_mc_dropout(model, sbm_50, passes=10, rate=0.5, seed=13)
