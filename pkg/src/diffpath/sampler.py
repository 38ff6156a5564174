"""Deterministic sampling, inversion, and guided-regeneration optimization.

One sampling step maps x_t to x_{t-1} with

    x_{t-1} = sqrt(a_prev) * f(x_t, eps, a_t) + sqrt(1 - a_prev) * eps,
    f(x_t, eps, a_t) = (x_t - sqrt(1 - a_t) * eps) / sqrt(a_t),

where a is the cumulative signal factor of the step's training index and
``f`` is the clean latent implied by the pair (x_t, eps).  Inversion walks
the same grid upward, predicting the noise at the target level of each hop
(evaluating at the current level would hit the undefined a = 1 endpoint on
the very first hop from clean data).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .denoiser import ConditionEmbedding, Denoiser
from .errors import DenoiserError, ParameterError
from .schedule import AlphaSchedule, TimestepGrid

log = logging.getLogger(__name__)

GENERATION = "generation"
INVERSION = "inversion"


def f_theta(x_t: np.ndarray, eps: np.ndarray, alpha_bar_t: float) -> np.ndarray:
    """Predicted clean latent implied by (x_t, eps) at level alpha_bar_t."""
    a = float(alpha_bar_t)
    if not 0.0 < a <= 1.0:
        raise ParameterError(f"alpha_bar_t must lie in (0, 1], got {a}")
    return (x_t - np.sqrt(1.0 - a) * eps) / np.sqrt(a)


def ddim_step(x_t: np.ndarray, eps: np.ndarray,
              alpha_bar_t: float, alpha_bar_prev: float) -> np.ndarray:
    """One deterministic update from level alpha_bar_t down to alpha_bar_prev."""
    a_t = float(alpha_bar_t)
    a_prev = float(alpha_bar_prev)
    if not 0.0 < a_t < 1.0:
        raise ParameterError(f"alpha_bar_t must lie in (0, 1), got {a_t}")
    if not 0.0 < a_prev <= 1.0:
        raise ParameterError(f"alpha_bar_prev must lie in (0, 1], got {a_prev}")
    if a_prev < a_t:
        raise ParameterError(
            f"schedule order violated: alpha_bar_prev={a_prev} < alpha_bar_t={a_t}")
    if a_prev == a_t:
        # algebraic fixed point: no noise is removed
        return x_t + 0.0 * eps
    return np.sqrt(a_prev) * f_theta(x_t, eps, a_t) + np.sqrt(1.0 - a_prev) * eps


def invert_step(x_t: np.ndarray, eps: np.ndarray,
                alpha_bar_t: float, alpha_bar_next: float) -> np.ndarray:
    """One upward hop from level alpha_bar_t to the noisier alpha_bar_next."""
    a_t = float(alpha_bar_t)
    a_next = float(alpha_bar_next)
    if not 0.0 < a_t <= 1.0:
        raise ParameterError(f"alpha_bar_t must lie in (0, 1], got {a_t}")
    if not 0.0 < a_next <= a_t:
        raise ParameterError(
            f"inversion requires alpha_bar_next <= alpha_bar_t, got {a_next} > {a_t}")
    return np.sqrt(a_next) * f_theta(x_t, eps, a_t) + np.sqrt(1.0 - a_next) * eps


def effective_noise(x_t: np.ndarray, x_prev: np.ndarray,
                    alpha_bar_t: float, alpha_bar_prev: float) -> np.ndarray:
    """Solve ddim_step(x_t, eps, a_t, a_prev) = x_prev for eps.

    The update is affine in eps with slope
    gamma = sqrt(1 - a_prev) - sqrt(a_prev * (1 - a_t) / a_t), which is
    nonzero whenever the two levels differ; edits that blend latents rather
    than noises use this to stay replayable as ordinary steps.
    """
    a_t = float(alpha_bar_t)
    a_prev = float(alpha_bar_prev)
    if a_prev == a_t:
        raise ParameterError("effective noise undefined for a zero-width step")
    gamma = np.sqrt(1.0 - a_prev) - np.sqrt(a_prev * (1.0 - a_t) / a_t)
    return (x_prev - np.sqrt(a_prev / a_t) * x_t) / gamma


def cfg_combine(eps_cond: np.ndarray, eps_null: np.ndarray, beta: float) -> np.ndarray:
    """Guidance-scale combination eps_cond + beta * (eps_cond - eps_null)."""
    if np.shape(eps_cond) != np.shape(eps_null):
        raise ParameterError("guidance operands must share a shape")
    return eps_cond + beta * (eps_cond - eps_null)


@dataclass(frozen=True)
class PathRecord:
    """Full trajectory of one deterministic pass over a timestep grid.

    For generation, ``latents[i]`` sits at sampling index T - i (so index 0 is
    the initial noise and the last entry is the clean output); for inversion
    the order is ascending and ``latents[i]`` sits at sampling index i.  Each
    ``noises[i]`` is the prediction consumed by the hop from ``latents[i]`` to
    ``latents[i+1]``, so replaying the hops reproduces the stored latents
    exactly.
    """

    grid: TimestepGrid
    latents: tuple[np.ndarray, ...]
    noises: tuple[np.ndarray, ...]
    condition: ConditionEmbedding
    direction: str

    def __post_init__(self):
        if self.direction not in (GENERATION, INVERSION):
            raise ParameterError(f"unknown direction {self.direction!r}")
        if len(self.latents) != len(self.noises) + 1:
            raise ParameterError("need exactly one more latent than noise entries")
        if len(self.noises) != self.grid.t_sample:
            raise ParameterError("trajectory length must match the grid")
        for arr in (*self.latents, *self.noises):
            arr.setflags(write=False)

    @property
    def t_sample(self) -> int:
        return self.grid.t_sample

    @property
    def x0(self) -> np.ndarray:
        """Clean endpoint of the trajectory."""
        return self.latents[-1] if self.direction == GENERATION else self.latents[0]

    @property
    def x_top(self) -> np.ndarray:
        """Fully noised endpoint of the trajectory."""
        return self.latents[0] if self.direction == GENERATION else self.latents[-1]

    def replay_errors(self, schedule: AlphaSchedule) -> np.ndarray:
        """Max-abs replay residual per hop; all-zero for a consistent record."""
        errs = np.empty(len(self.noises))
        for i in range(len(self.noises)):
            if self.direction == GENERATION:
                a_t = schedule.at(self.grid.level(i))
                a_prev = schedule.at(self.grid.prev_level(i))
                redo = ddim_step(self.latents[i], self.noises[i], a_t, a_prev)
            else:
                pos = self.t_sample - 1 - i
                a_t = schedule.at(self.grid.prev_level(pos))
                a_next = schedule.at(self.grid.level(pos))
                redo = invert_step(self.latents[i], self.noises[i], a_t, a_next)
            errs[i] = np.max(np.abs(redo - self.latents[i + 1]))
        return errs


def _predict(denoiser: Denoiser, x: np.ndarray, c: ConditionEmbedding,
             alpha_bar: float, level: int, sampling_step: int) -> np.ndarray:
    try:
        eps = denoiser.predict_noise(x, c, alpha_bar, level)
    except (ParameterError, ZeroDivisionError):
        raise
    except DenoiserError as err:
        if err.sampling_step is None:
            # preserve the concrete kind; every DenoiserError shares the ctor
            raise type(err)(str(err), sampling_step=sampling_step,
                            training_step=level) from err
        raise
    except Exception as err:  # pragma: no cover - defensive wrap
        raise DenoiserError(f"denoiser call failed: {err}",
                            sampling_step=sampling_step, training_step=level) from err
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != np.shape(x):
        raise DenoiserError(
            f"denoiser returned shape {eps.shape}, expected {np.shape(x)}",
            sampling_step=sampling_step, training_step=level)
    return eps


def _resolve_null(null_embeddings, i: int) -> ConditionEmbedding:
    if isinstance(null_embeddings, ConditionEmbedding):
        return null_embeddings
    return null_embeddings[i]


def _as_latent(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ParameterError("latent must be a vector")
    if not np.all(np.isfinite(x)):
        raise ParameterError("latent entries must be finite")
    return x.copy()


def generate(denoiser: Denoiser, x_top: np.ndarray, c: ConditionEmbedding,
             grid: TimestepGrid, schedule: AlphaSchedule,
             guidance: tuple[float, object] | None = None) -> PathRecord:
    """Run the full deterministic pass from noise to data, recording the path.

    ``guidance`` is an optional ``(beta, null_embeddings)`` pair; the null
    side may be a single shared embedding or one embedding per step in loop
    order.  The recorded noise at each step is the combined prediction that
    actually drove the update.
    """
    _check_grid(grid, schedule)
    x = _as_latent(x_top)
    latents = [x.copy()]
    noises = []
    t_sample = grid.t_sample
    if guidance is not None:
        beta, nulls = guidance
        if not isinstance(nulls, ConditionEmbedding) and len(nulls) != t_sample:
            raise ParameterError(
                f"need one null embedding per step ({t_sample}), got {len(nulls)}")
    for i in range(t_sample):
        level = grid.level(i)
        sampling_step = t_sample - i
        a_t = schedule.at(level)
        a_prev = schedule.at(grid.prev_level(i))
        eps = _predict(denoiser, x, c, a_t, level, sampling_step)
        if guidance is not None:
            beta, nulls = guidance
            eps_null = _predict(denoiser, x, _resolve_null(nulls, i),
                                a_t, level, sampling_step)
            eps = cfg_combine(eps, eps_null, beta)
        x = ddim_step(x, eps, a_t, a_prev)
        noises.append(eps)
        latents.append(x.copy())
    return PathRecord(grid=grid, latents=tuple(latents), noises=tuple(noises),
                      condition=c, direction=GENERATION)


def ddim_invert(denoiser: Denoiser, x0: np.ndarray, c: ConditionEmbedding,
                grid: TimestepGrid, schedule: AlphaSchedule) -> PathRecord:
    """Walk the grid upward from clean data to the fully noised latent.

    Each hop raises the level from the grid's previous index to its step
    index, predicting the noise at the target level.
    """
    _check_grid(grid, schedule)
    x = _as_latent(x0)
    latents = [x.copy()]
    noises = []
    t_sample = grid.t_sample
    for pos in range(t_sample - 1, -1, -1):
        target = grid.level(pos)
        current = grid.prev_level(pos)
        a_cur = schedule.at(current)
        a_tgt = schedule.at(target)
        sampling_step = t_sample - pos
        eps = _predict(denoiser, x, c, a_tgt, target, sampling_step)
        x = invert_step(x, eps, a_cur, a_tgt)
        noises.append(eps)
        latents.append(x.copy())
    return PathRecord(grid=grid, latents=tuple(latents), noises=tuple(noises),
                      condition=c, direction=INVERSION)


@dataclass(frozen=True)
class NullTextResult:
    """Per-step optimized empty-condition embeddings, in generation loop order."""

    embeddings: tuple[ConditionEmbedding, ...]
    objectives: tuple[float, ...]
    diagnostics: tuple[str, ...] = field(default=())


def null_text_invert(denoiser: Denoiser, x0: np.ndarray, c: ConditionEmbedding,
                     beta: float, grid: TimestepGrid, schedule: AlphaSchedule,
                     iterations: int = 10, step_size: float = 0.1,
                     initial_null: ConditionEmbedding | None = None,
                     fd_epsilon: float = 1e-4) -> NullTextResult:
    """Optimize per-step empty-condition embeddings for guided reconstruction.

    The reference trajectory is the plain inversion of ``x0`` under ``c``.
    Processing steps from the top down, each step's null embedding is tuned by
    central-difference gradient descent so the guided update from the evolving
    latent lands on the reference latent; the per-step objective never
    increases (a step that would increase it is reverted and optimization of
    that step stops with a diagnostic).  With ``beta = 0`` the objective does
    not depend on the null side and the initial embedding is returned for
    every step.
    """
    if iterations < 0:
        raise ParameterError("iterations must be >= 0")
    inv = ddim_invert(denoiser, x0, c, grid, schedule)
    null0 = initial_null if initial_null is not None \
        else ConditionEmbedding(np.zeros(denoiser.m), is_null=True)
    t_sample = grid.t_sample
    x = inv.latents[-1].copy()
    embeddings: list[ConditionEmbedding] = []
    objectives: list[float] = []
    diagnostics: list[str] = []
    for i in range(t_sample):
        level = grid.level(i)
        sampling_step = t_sample - i
        a_t = schedule.at(level)
        a_prev = schedule.at(grid.prev_level(i))
        target = inv.latents[sampling_step - 1]
        eps_c = _predict(denoiser, x, c, a_t, level, sampling_step)

        def objective(null_values: np.ndarray) -> float:
            eps_null = _predict(denoiser, x, ConditionEmbedding(null_values, is_null=True),
                                a_t, level, sampling_step)
            step = ddim_step(x, cfg_combine(eps_c, eps_null, beta), a_t, a_prev)
            resid = step - target
            return float(resid @ resid)

        null = null0.values.copy()
        best = objective(null)
        for it in range(iterations):
            grad = np.empty_like(null)
            for j in range(null.size):
                bump = np.zeros_like(null)
                bump[j] = fd_epsilon
                grad[j] = (objective(null + bump) - objective(null - bump)) / (2.0 * fd_epsilon)
            candidate = null - step_size * grad
            value = objective(candidate)
            if value > best * (1.0 + 1e-12) + 1e-300:
                msg = (f"sampling step {sampling_step}: objective rose "
                       f"{best:.6e} -> {value:.6e} at iteration {it}; reverted and stopped")
                diagnostics.append(msg)
                log.warning("null-embedding optimization diverged: %s", msg)
                break
            null, best = candidate, value
        null_emb = ConditionEmbedding(null, is_null=True)
        eps_null = _predict(denoiser, x, null_emb, a_t, level, sampling_step)
        x = ddim_step(x, cfg_combine(eps_c, eps_null, beta), a_t, a_prev)
        embeddings.append(null_emb)
        objectives.append(best)
    return NullTextResult(embeddings=tuple(embeddings), objectives=tuple(objectives),
                          diagnostics=tuple(diagnostics))


def _check_grid(grid: TimestepGrid, schedule: AlphaSchedule) -> None:
    if grid.level(0) > schedule.t_train:
        raise ParameterError(
            f"grid top {grid.level(0)} exceeds schedule length {schedule.t_train}")
