import os

import numpy as np
import pytest

from dmimo.eadf import PatternGrid, build_eadf
from dmimo.signal_model import LosParams, SignalSpec, UeAntenna

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIG_DIR = os.path.join(REPO_ROOT, "configs")


def config_path(name: str) -> str:
    return os.path.join(CONFIG_DIR, name)


def random_pattern(rng, elements=2, m_theta=8, m_phi=8) -> PatternGrid:
    shape = (elements, 2, m_theta, m_phi)
    return PatternGrid(rng.normal(size=shape) + 1j * rng.normal(size=shape))


def random_model(rng, elements=2, m_theta=8, m_phi=8):
    return build_eadf(random_pattern(rng, elements, m_theta, m_phi))


def random_spec(rng, n_freq=8, noise_variance=0.01) -> SignalSpec:
    freqs = np.linspace(-200e6, 200e6, n_freq)
    amps = rng.uniform(0.5, 1.5, n_freq)
    return SignalSpec(freqs, amps, noise_variance)


def random_link(rng) -> LosParams:
    return LosParams(
        theta=rng.uniform(0.3, np.pi - 0.3),
        phi=rng.uniform(-np.pi, np.pi),
        tau=rng.uniform(1e-8, 8e-8),
        alpha_vv=complex(rng.normal(), rng.normal()) * 1e-3,
        alpha_hh=complex(rng.normal(), rng.normal()) * 1e-3,
    )


def random_ue(rng) -> UeAntenna:
    return UeAntenna(
        c_tv=complex(rng.normal(), rng.normal()),
        c_th=complex(rng.normal(), rng.normal()),
        beta=rng.uniform(0, 2 * np.pi),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
