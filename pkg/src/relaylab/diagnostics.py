"""Evaluation metrics and spectral diagnostics.

Relative L2 is reported in percent and averaged over (trajectory, step)
pairs. Spectral profiles bin fft2 modes into integer shells by rounding
|k|; shells run 0..nx/2 and the rare corner modes beyond nx/2 are folded
into the top shell so that the shell sum always satisfies Parseval.
Undefined entries (zero-norm deltas, empty shells) are reported as NaN
with explicit counts, never silently dropped.
"""

from dataclasses import dataclass

import numpy as np

from .grid import Grid, workspace_for


@dataclass(frozen=True)
class ErrorReport:
    """Relative L2 summary: per-step and per-trajectory marginals."""

    per_step: np.ndarray            # (T,) percent
    mean: float                     # percent over all N*T pairs
    per_trajectory_means: np.ndarray  # (N,) percent

    @property
    def n_trajectories(self) -> int:
        return len(self.per_trajectory_means)

    @property
    def n_steps(self) -> int:
        return len(self.per_step)


@dataclass(frozen=True)
class SpectrumProfile:
    """One value per integer wavenumber shell 0..k_max."""

    shells: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if len(self.shells) != len(self.values):
            raise ValueError("shells and values disagree in length")

    @property
    def defined(self) -> np.ndarray:
        return np.isfinite(self.values)


def _as_batch(fields):
    arr = np.asarray(fields, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise ValueError("expected (N, T, nx, ny) or (T, nx, ny) fields")
    return arr


def relative_l2(preds, truth) -> ErrorReport:
    """Mean relative L2 error in percent: 100/(N T) sum |pred-true|/|true|."""
    preds = _as_batch(preds)
    truth = _as_batch(truth)
    if preds.shape != truth.shape:
        raise ValueError(f"shape mismatch: {preds.shape} vs {truth.shape}")
    n, t = truth.shape[:2]
    flat_p = preds.reshape(n, t, -1)
    flat_t = truth.reshape(n, t, -1)
    denom = np.linalg.norm(flat_t, axis=2)
    if np.any(denom == 0):
        bad = np.argwhere(denom == 0)[0]
        raise ValueError(f"truth frame (n={bad[0]}, t={bad[1]}) has zero norm")
    ratio = 100.0 * np.linalg.norm(flat_p - flat_t, axis=2) / denom
    return ErrorReport(per_step=ratio.mean(axis=0),
                       mean=float(ratio.mean()),
                       per_trajectory_means=ratio.mean(axis=1))


def dynamics_cosine(borrowed, actual) -> float:
    """Cosine similarity between a borrowed and the actual transition."""
    a = np.asarray(borrowed, dtype=np.float64).ravel()
    b = np.asarray(actual, dtype=np.float64).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na <= 1e-12 or nb <= 1e-12:
        raise ValueError("zero-norm delta: cosine undefined")
    return float(np.dot(a, b) / (na * nb))


def dynamics_cosine_profile(borrowed, actual):
    """Per-step mean cosine over trajectories, with undefined counts.

    borrowed, actual: (N, T, nx, ny). Steps whose delta norm vanishes are
    excluded from that step's average; the second return value counts the
    exclusions per step.
    """
    borrowed = _as_batch(borrowed)
    actual = _as_batch(actual)
    if borrowed.shape != actual.shape:
        raise ValueError("borrowed/actual shape mismatch")
    n, t = borrowed.shape[:2]
    fa = borrowed.reshape(n, t, -1)
    fb = actual.reshape(n, t, -1)
    na = np.linalg.norm(fa, axis=2)
    nb = np.linalg.norm(fb, axis=2)
    ok = (na > 1e-12) & (nb > 1e-12)
    cos = np.full((n, t), np.nan)
    dots = np.einsum("ntk,ntk->nt", fa, fb)
    cos[ok] = dots[ok] / (na[ok] * nb[ok])
    with np.errstate(invalid="ignore"):
        per_step = np.where(ok.any(axis=0),
                            np.nanmean(np.where(ok, cos, np.nan), axis=0),
                            np.nan)
    undefined = (~ok).sum(axis=0)
    return per_step, undefined, cos


def _spectrum_shells(grid: Grid):
    ws = workspace_for(grid)
    k_max = max(grid.nx, grid.ny) // 2
    index = np.minimum(ws.shell_index, k_max)
    return index, k_max


def enstrophy_spectrum(omega, grid: Grid | None = None) -> SpectrumProfile:
    """Shell-binned enstrophy with Parseval-preserving normalisation."""
    omega = np.asarray(omega, dtype=np.float64)
    grid = grid or Grid(nx=omega.shape[-2], ny=omega.shape[-1])
    ws = workspace_for(grid)
    index, k_max = _spectrum_shells(grid)
    w_hat = ws.fft(omega) / grid.n_points
    power = 0.5 * np.abs(w_hat) ** 2
    values = np.bincount(index.ravel(), weights=power.ravel(),
                         minlength=k_max + 1)
    return SpectrumProfile(shells=np.arange(k_max + 1), values=values)


def spectrum_ratio(pred: SpectrumProfile, truth: SpectrumProfile) -> SpectrumProfile:
    """Elementwise pred/truth; zero-denominator shells marked NaN."""
    if len(pred.shells) != len(truth.shells):
        raise ValueError("profiles disagree in shell count")
    with np.errstate(divide="ignore", invalid="ignore"):
        values = np.where(truth.values > 0, pred.values / truth.values, np.nan)
    return SpectrumProfile(shells=pred.shells.copy(), values=values)


def spectral_relative_error(pred, truth, grid: Grid | None = None) -> SpectrumProfile:
    """Per-shell relative L2 over the complex mode coefficients.

    err(k) = |pred_hat - truth_hat| / |truth_hat| restricted to shell k;
    shells where truth carries no energy are marked NaN.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError("pred/truth shape mismatch")
    grid = grid or Grid(nx=pred.shape[-2], ny=pred.shape[-1])
    ws = workspace_for(grid)
    index, k_max = _spectrum_shells(grid)
    diff_power = np.abs(ws.fft(pred) - ws.fft(truth)) ** 2
    truth_power = np.abs(ws.fft(truth)) ** 2
    num = np.bincount(index.ravel(), weights=diff_power.ravel(),
                      minlength=k_max + 1)
    den = np.bincount(index.ravel(), weights=truth_power.ravel(),
                      minlength=k_max + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        values = np.where(den > 0, np.sqrt(num / den), np.nan)
    return SpectrumProfile(shells=np.arange(k_max + 1), values=values)


def bootstrap_ci(per_trajectory_values, n_boot: int, level: float, seed=0):
    """Percentile bootstrap interval for the mean, deterministic per seed."""
    values = np.asarray(per_trajectory_values, dtype=np.float64)
    if values.ndim != 1 or len(values) < 1:
        raise ValueError("need a nonempty 1-D value array")
    if not 0 < level < 1:
        raise ValueError("level must be in (0, 1)")
    rng = np.random.default_rng(seed)
    n = len(values)
    idx = rng.integers(0, n, size=(n_boot, n))
    means = values[idx].mean(axis=1)
    lo = float(np.quantile(means, (1.0 - level) / 2.0))
    hi = float(np.quantile(means, (1.0 + level) / 2.0))
    return lo, hi
