"""Data generators shared by tests."""
import numpy as np

from tsdmfb import synth
from tsdmfb.inner_em import InnerMixture


def mixture_data(J, D, n, seed, precision=60.0, separation=0.25):
    spec = synth.random_spec(1, J, D, n, precision=precision, min_separation=separation, seed=seed)
    return synth.generate(spec).dataset.points, spec.classes[0].mixture


def three_class_spec(seed, D=4, size=300, J=1, novelty_rate=0.0):
    return synth.random_spec(3, J, D, size, novelty_rate=novelty_rate, seed=seed)


def random_mixture(rng, J, D):
    return InnerMixture(rng.dirichlet(np.full(J, 3.0)), rng.uniform(0.5, 30.0, (J, D)))
