import numpy as np
import pytest

from mmvlab.model import (
    DISCRETE,
    EXPONENTIAL,
    ClaimModel,
    InsuranceParams,
    MarketParams,
    ModelConfig,
    experiment_6_2,
)
from mmvlab.schedules import CoefficientSchedule


@pytest.fixture
def cfg62():
    return experiment_6_2()


def random_config(rng: np.random.Generator, piecewise: bool = False) -> ModelConfig:
    """Random valid instance for identity sweeps."""
    horizon = float(rng.uniform(0.5, 5.0))

    def sched(lo, hi):
        if piecewise and rng.random() < 0.5:
            k = rng.integers(2, 4)
            bps = np.concatenate(([0.0], np.sort(rng.uniform(0.05, horizon * 0.95, k - 1))))
            return CoefficientSchedule.piecewise(bps, rng.uniform(lo, hi, k))
        return CoefficientSchedule.constant(float(rng.uniform(lo, hi)))

    r = sched(0.01, 0.08)
    mu_gap = sched(0.01, 0.12)
    mu = CoefficientSchedule.piecewise(
        np.union1d(r._bp, mu_gap._bp),
        [r.value(t) + mu_gap.value(t) for t in np.union1d(r._bp, mu_gap._bp)],
    )
    sigma = sched(0.1, 0.5)
    kappa_r = float(rng.uniform(0.05, 0.5))
    kappa = float(rng.uniform(0.01, 1.0)) * kappa_r
    if rng.random() < 0.5:
        claims = ClaimModel(intensity=float(rng.uniform(0.5, 10.0)), law=EXPONENTIAL,
                            rate=float(rng.uniform(1.0, 20.0)))
    else:
        k = int(rng.integers(1, 6))
        w = rng.dirichlet(np.ones(k))
        claims = ClaimModel(intensity=float(rng.uniform(0.5, 10.0)), law=DISCRETE,
                            atoms=tuple(np.sort(rng.uniform(0.05, 2.0, k))), weights=tuple(w))
    return ModelConfig(
        horizon=horizon,
        x0=float(rng.uniform(0.1, 5.0)),
        theta=float(rng.uniform(0.2, 10.0)),
        market=MarketParams(r=r, mu=mu, sigma=sigma, sigma_floor=1e-6),
        insurance=InsuranceParams(kappa=kappa, kappa_r=kappa_r),
        claims=claims,
    )
