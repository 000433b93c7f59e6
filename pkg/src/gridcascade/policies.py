"""Fixed dispatch rules used as baselines, with the estimator interface."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array

__all__ = ["RandomDispatch", "MaxDispatch", "HalfDispatch", "ConstantDispatch", "make_baseline"]


class ConstantDispatch(BaseEstimator):
    """Every generator runs at ``coefficient`` times its capacity."""

    def __init__(self, coefficient=0.5):
        self.coefficient = coefficient

    def fit(self, env=None, n_episodes=0, **kwargs):
        if env is not None:
            self.action_dim_ = env.action_dim
        return self

    def predict(self, X):
        X = check_array(X, dtype=float)
        m = getattr(self, "action_dim_", None)
        if m is None:
            raise ValueError("action dimension unknown; call fit(env) first")
        return np.full((X.shape[0], m), float(self.coefficient))

    def act(self, obs, noise_scale=0.0):
        return self.predict(np.asarray(obs, dtype=float).reshape(1, -1))[0]


class MaxDispatch(ConstantDispatch):
    def __init__(self):
        super().__init__(coefficient=1.0)


class HalfDispatch(ConstantDispatch):
    def __init__(self):
        super().__init__(coefficient=0.5)


class RandomDispatch(BaseEstimator):
    """Independent uniform coefficient per generator per stage."""

    def __init__(self, random_state=0):
        self.random_state = random_state

    def fit(self, env=None, n_episodes=0, **kwargs):
        self.rng_ = np.random.default_rng(self.random_state)
        if env is not None:
            self.action_dim_ = env.action_dim
        return self

    def predict(self, X):
        X = check_array(X, dtype=float)
        if not hasattr(self, "rng_"):
            raise ValueError("call fit(env) first")
        return self.rng_.uniform(0.0, 1.0, size=(X.shape[0], self.action_dim_))

    def act(self, obs, noise_scale=0.0):
        return self.predict(np.asarray(obs, dtype=float).reshape(1, -1))[0]


_BASELINES = {"random": RandomDispatch, "max": MaxDispatch, "half": HalfDispatch}


def make_baseline(kind: str, seed: int = 0):
    """Baseline policy by name: ``random``, ``max`` or ``half``."""
    try:
        cls = _BASELINES[kind]
    except KeyError:
        raise ValueError(f"unknown baseline {kind!r}; choose from {sorted(_BASELINES)}") from None
    return cls(random_state=seed) if cls is RandomDispatch else cls()
