import numpy as np
import pytest

from kickmc.model import homogeneous_model, standard_cosine_model


@pytest.fixture(scope="session")
def hom():
    return homogeneous_model()


@pytest.fixture(scope="session")
def cos_model():
    return standard_cosine_model()


def l1(p: np.ndarray, q: np.ndarray) -> float:
    return float(np.sum(np.abs(np.asarray(p) - np.asarray(q))))
