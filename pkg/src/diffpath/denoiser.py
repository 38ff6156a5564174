"""Noise-prediction interface and a closed-form Gaussian-mixture oracle.

The sampling and editing loops only ever see the abstract :class:`Denoiser`
interface.  The analytic oracle below realizes it exactly for data drawn from
a conditional isotropic Gaussian mixture, which makes every downstream
operator testable against algebra instead of a trained network: under the
forward corruption x_t = sqrt(a)*x_0 + sqrt(1-a)*eps with x_0 mixture
distributed, the Bayes-optimal noise prediction is available in closed form.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import ParameterError
from .rng import standard_normals


@dataclass(frozen=True)
class ConditionEmbedding:
    """A condition as a dense vector; ``is_null`` marks the empty condition."""

    values: np.ndarray
    is_null: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ParameterError("condition embedding must be a vector")
        if not np.all(np.isfinite(v)):
            raise ParameterError("condition embedding must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def m(self) -> int:
        return self.values.size


def embed_condition(source, m: int,
                    named: Mapping[str, ConditionEmbedding] | None = None) -> ConditionEmbedding:
    """Resolve a raw vector or a preset name into a ConditionEmbedding.

    ``source`` may be a sequence of floats or a name registered in ``named``.
    The name ``"null"`` resolves to the registered empty condition, or to the
    all-zeros vector when no registry is given.
    """
    if isinstance(source, str):
        if named is not None and source in named:
            return named[source]
        if source == "null":
            return ConditionEmbedding(np.zeros(m), is_null=True)
        raise ParameterError(f"unknown condition preset {source!r}")
    values = np.asarray(source, dtype=np.float64)
    if values.ndim != 1 or values.size != m:
        raise ParameterError(f"condition must have dimension {m}, got shape {values.shape}")
    return ConditionEmbedding(values)


class Denoiser(abc.ABC):
    """Predicts the Gaussian noise mixed into a latent at a given noise level.

    Time enters analytic implementations only through ``alpha_bar``; the
    training-step index is still part of the call so remote backends that key
    off discrete timesteps can be bridged.
    """

    #: latent dimension
    d: int
    #: condition-embedding dimension
    m: int
    #: whether independent calls may run concurrently
    concurrent_safe: bool = True
    #: whether attention-style introspection hooks can query internals
    supports_introspection: bool = False

    @abc.abstractmethod
    def predict_noise(self, x: np.ndarray, c: ConditionEmbedding,
                      alpha_bar: float, t: int) -> np.ndarray:
        """Return eps_hat(x, c) at signal level ``alpha_bar`` (training step ``t``)."""


@dataclass(frozen=True)
class GMMDenoiserParams:
    """Conditional isotropic Gaussian mixture over clean latents.

    Component k has mean ``condition_maps[k] @ c + base_means[k]`` and
    covariance ``variances[k] * I``; ``weights`` sum to one.  Means affine in
    the embedding keep interpolated conditions meaningful: the model for a
    blended embedding is itself a mixture of the same family.
    """

    weights: np.ndarray        # (K,)
    base_means: np.ndarray     # (K, d)
    condition_maps: np.ndarray  # (K, d, m)
    variances: np.ndarray      # (K,)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.base_means, dtype=np.float64)
        cm = np.asarray(self.condition_maps, dtype=np.float64)
        v = np.asarray(self.variances, dtype=np.float64)
        if w.ndim != 1 or w.size < 1:
            raise ParameterError("weights must be a non-empty vector")
        k = w.size
        if b.ndim != 2 or b.shape[0] != k:
            raise ParameterError("base_means must have shape (K, d)")
        if cm.ndim != 3 or cm.shape[0] != k or cm.shape[1] != b.shape[1]:
            raise ParameterError("condition_maps must have shape (K, d, m)")
        if v.shape != (k,):
            raise ParameterError("variances must have shape (K,)")
        if np.any(w <= 0.0) or not np.isclose(w.sum(), 1.0, rtol=0, atol=1e-12):
            raise ParameterError("weights must be positive and sum to 1")
        if np.any(v < 0.0):
            raise ParameterError("variances must be nonnegative")
        for arr in (w, b, cm, v):
            if not np.all(np.isfinite(arr)):
                raise ParameterError("mixture parameters must be finite")
            arr.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "base_means", b)
        object.__setattr__(self, "condition_maps", cm)
        object.__setattr__(self, "variances", v)

    @property
    def k(self) -> int:
        return self.weights.size

    @property
    def d(self) -> int:
        return self.base_means.shape[1]

    @property
    def m(self) -> int:
        return self.condition_maps.shape[2]

    def component_means(self, c: ConditionEmbedding) -> np.ndarray:
        """Per-component clean-data means under condition ``c``, shape (K, d)."""
        return self.condition_maps @ c.values + self.base_means


def _check_alpha_bar(alpha_bar: float, *, allow_one: bool) -> float:
    a = float(alpha_bar)
    if not 0.0 < a <= 1.0:
        raise ParameterError(f"alpha_bar must lie in (0, 1], got {a}")
    if a == 1.0 and not allow_one:
        raise ZeroDivisionError(
            "noise prediction is undefined at alpha_bar = 1 (clean endpoint)")
    return a


def gmm_responsibilities(params: GMMDenoiserParams, x: np.ndarray,
                         c: ConditionEmbedding, alpha_bar: float) -> np.ndarray:
    """Posterior component weights of x_t under the noised mixture.

    The marginal of x_t is a mixture of N(sqrt(a)*mu_k, (a*s2_k + 1 - a) I);
    the softmax over its component log densities is evaluated after
    subtracting the max so it is stable at any noise level.
    """
    a = _check_alpha_bar(alpha_bar, allow_one=True)
    x = np.asarray(x, dtype=np.float64)
    mus = params.component_means(c)
    var = a * params.variances + (1.0 - a)
    if np.any(var == 0.0):
        raise ParameterError(
            "degenerate mixture (zero marginal variance) at alpha_bar = 1")
    resid = x - np.sqrt(a) * mus
    log_resp = (np.log(params.weights)
                - 0.5 * params.d * np.log(2.0 * np.pi * var)
                - 0.5 * np.einsum("kd,kd->k", resid, resid) / var)
    log_resp -= log_resp.max()
    resp = np.exp(log_resp)
    return resp / resp.sum()


def gmm_posterior_mean(params: GMMDenoiserParams, x: np.ndarray,
                       c: ConditionEmbedding, alpha_bar: float) -> np.ndarray:
    """Bayes-optimal E[x_0 | x_t, c] for the mixture data law.

    Each component contributes its joint-Gaussian regression mean
    mu_k + sqrt(a)*s2_k / (a*s2_k + 1 - a) * (x - sqrt(a)*mu_k), weighted by
    its responsibility.
    """
    a = _check_alpha_bar(alpha_bar, allow_one=True)
    x = np.asarray(x, dtype=np.float64)
    mus = params.component_means(c)                      # (K, d)
    var = a * params.variances + (1.0 - a)               # (K,)
    if np.any(var == 0.0):
        if params.k == 1:
            return mus[0].copy()
        raise ParameterError(
            "degenerate mixture (zero marginal variance) with K > 1 at alpha_bar = 1")
    sqrt_a = np.sqrt(a)
    resid = x - sqrt_a * mus                             # (K, d)
    resp = gmm_responsibilities(params, x, c, a)
    shrink = sqrt_a * params.variances / var             # (K,)
    cond_means = mus + shrink[:, None] * resid           # (K, d)
    return resp @ cond_means


def predict_noise(params: GMMDenoiserParams, x: np.ndarray,
                  c: ConditionEmbedding, alpha_bar: float) -> np.ndarray:
    """Optimal noise prediction for the mixture data law.

    eps = (x - sqrt(a) * E[x_0 | x, c]) / sqrt(1 - a); undefined at a = 1.
    """
    a = _check_alpha_bar(alpha_bar, allow_one=False)
    x = np.asarray(x, dtype=np.float64)
    x0_hat = gmm_posterior_mean(params, x, c, a)
    return (x - np.sqrt(a) * x0_hat) / np.sqrt(1.0 - a)


def gmm_log_density(params: GMMDenoiserParams, x: np.ndarray,
                    c: ConditionEmbedding) -> float:
    """Log density of the clean-data mixture at ``x`` under condition ``c``."""
    if np.any(params.variances == 0.0):
        raise ParameterError("log density requires strictly positive component variances")
    x = np.asarray(x, dtype=np.float64)
    mus = params.component_means(c)
    resid = x - mus
    logs = (np.log(params.weights)
            - 0.5 * params.d * np.log(2.0 * np.pi * params.variances)
            - 0.5 * np.einsum("kd,kd->k", resid, resid) / params.variances)
    peak = logs.max()
    return float(peak + np.log(np.exp(logs - peak).sum()))


class GMMDenoiser(Denoiser):
    """In-process analytic denoiser backed by :class:`GMMDenoiserParams`."""

    concurrent_safe = True
    supports_introspection = True

    def __init__(self, params: GMMDenoiserParams):
        self.params = params
        self.d = params.d
        self.m = params.m

    def predict_noise(self, x: np.ndarray, c: ConditionEmbedding,
                      alpha_bar: float, t: int) -> np.ndarray:
        return predict_noise(self.params, x, c, alpha_bar)

    def posterior_mean(self, x: np.ndarray, c: ConditionEmbedding,
                       alpha_bar: float) -> np.ndarray:
        return gmm_posterior_mean(self.params, x, c, alpha_bar)

    def log_density(self, x: np.ndarray, c: ConditionEmbedding) -> float:
        return gmm_log_density(self.params, x, c)

    def sample_clean(self, c: ConditionEmbedding, n: int,
                     gen: np.random.Generator) -> np.ndarray:
        """Draw ``n`` clean latents from the mixture under condition ``c``."""
        mus = self.params.component_means(c)
        ks = gen.choice(self.params.k, size=n, p=self.params.weights)
        noise = standard_normals(gen, (n, self.d))
        return mus[ks] + np.sqrt(self.params.variances[ks])[:, None] * noise
