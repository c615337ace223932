"""Control-filter estimation: filtered references, the regularized
multichannel Wiener solve, spectral filter shaping and estimator plumbing.

Correlations use the biased estimator over the zero-padded window, so the
normal matrix is exactly block-Toeplitz. Large systems are solved with
preconditioned conjugate gradients whose matrix-vector product is an FFT
block-Toeplitz multiply; small ones can also be solved densely as a check.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from .dsp import FirFilter, MultiChannelWaveform, Waveform, convolve_causal

log = logging.getLogger(__name__)

DEFAULT_BETA_SCALE = 1e-4
DENSE_MAX_TAPS = 256


class SingularSystemError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class AncFilterSet:
    """M control filters of equal length at one sample rate."""

    filters: tuple
    fs: int
    beta_used: float = 0.0

    def __post_init__(self):
        filters = tuple(self.filters)
        if not filters:
            raise ValueError("AncFilterSet needs at least one filter")
        if len({len(f) for f in filters}) != 1:
            raise ValueError("all control filters must have the same length")
        if any(f.sample_rate_hz != self.fs for f in filters):
            raise ValueError("filter sample rates must match the set's rate")
        if self.beta_used < 0:
            raise ValueError("beta_used must be non-negative")
        object.__setattr__(self, "filters", filters)

    @property
    def num_channels(self) -> int:
        return len(self.filters)

    @property
    def length(self) -> int:
        return len(self.filters[0])

    def taps(self) -> np.ndarray:
        return np.stack([f.taps for f in self.filters])

    @classmethod
    def from_taps(cls, taps: np.ndarray, fs: int, beta_used: float = 0.0) -> "AncFilterSet":
        return cls(tuple(FirFilter(t, fs) for t in np.atleast_2d(taps)), fs, beta_used)

    @classmethod
    def zeros(cls, num_channels: int, length: int, fs: int) -> "AncFilterSet":
        return cls.from_taps(np.zeros((num_channels, length)), fs)


def filtered_reference(x: MultiChannelWaveform, s_hat: FirFilter) -> MultiChannelWaveform:
    """Per-channel causal convolution ``r_m = s_hat * x_m``."""
    if x.sample_rate_hz != s_hat.sample_rate_hz:
        raise ValueError(f"sample-rate mismatch: {x.sample_rate_hz} vs {s_hat.sample_rate_hz}")
    return MultiChannelWaveform(convolve_causal(x.samples, s_hat.taps), x.sample_rate_hz)


@dataclass(frozen=True)
class WienerProblem:
    filtered_refs: MultiChannelWaveform
    target: Waveform
    num_taps: int
    beta: float | None = None  # None selects the scale-invariant default

    def __post_init__(self):
        n = len(self.target)
        if len(self.filtered_refs) != n:
            raise ValueError("filtered references and target must have equal length")
        if self.filtered_refs.sample_rate_hz != self.target.sample_rate_hz:
            raise ValueError("filtered references and target must share a sample rate")
        if self.num_taps < 1:
            raise ValueError("num_taps must be positive")
        if n < 2 * self.num_taps:
            raise ValueError(f"signals of {n} samples are shorter than 2*L_C = {2 * self.num_taps}")
        if self.beta is not None and self.beta < 0:
            raise ValueError("beta must be non-negative")


class Correlations:
    """Biased cross-correlations of the filtered references and target.

    ``rr[i, j, lag]`` holds ``(1/N) sum_n r_i[n] r_j[n + lag]`` for
    ``lag`` in ``[-(L-1), L-1]`` stored at index ``lag + L - 1``;
    ``rd[i, lag]`` holds ``(1/N) sum_n r_i[n] d[n + lag]`` for ``lag`` in
    ``[0, L)``.
    """

    def __init__(self, refs: np.ndarray, target: np.ndarray, num_taps: int):
        m, n = refs.shape
        L = num_taps
        nfft = 1 << int(np.ceil(np.log2(n + L)))
        R = np.fft.rfft(refs, nfft)
        D = np.fft.rfft(target, nfft)
        cross = np.fft.irfft(np.conj(R)[:, None, :] * R[None, :, :], nfft)
        self.rr = np.concatenate([cross[..., nfft - L + 1 :], cross[..., :L]], axis=-1) / n
        self.rd = np.fft.irfft(np.conj(R) * D[None, :], nfft)[:, :L] / n
        self.dd = float(np.dot(target, target)) / n
        self.num_channels = m
        self.num_taps = L
        self.num_samples = n

    def phi_vector(self) -> np.ndarray:
        return self.rd.ravel()

    def trace(self) -> float:
        return float(np.sum(self.rr[np.arange(self.num_channels), np.arange(self.num_channels), self.num_taps - 1]))

    def default_beta(self) -> float:
        return DEFAULT_BETA_SCALE * self.trace() / (self.num_channels * self.num_taps)

    def dense_matrix(self) -> np.ndarray:
        """Explicit (M*L)^2 normal matrix assembled from the correlation lags."""
        M, L = self.num_channels, self.num_taps
        a = np.arange(L)
        lag_idx = (a[:, None] - a[None, :]) + L - 1
        phi = np.empty((M * L, M * L))
        for i in range(M):
            for j in range(M):
                phi[i * L : (i + 1) * L, j * L : (j + 1) * L] = self.rr[i, j][lag_idx]
        return phi


class ToeplitzOperator:
    """FFT-based product with the block-Toeplitz normal matrix plus ``beta I``."""

    def __init__(self, corr: Correlations, beta: float):
        M, L = corr.num_channels, corr.num_taps
        self.M, self.L, self.beta = M, L, beta
        self.nfft = 2 * L
        # circulant embedding of the lags -(L-1)..(L-1) with a zero at lag L
        kern = np.zeros((M, M, self.nfft))
        kern[..., :L] = corr.rr[..., L - 1 :]
        kern[..., L + 1 :] = corr.rr[..., : L - 1]
        self.kernel = np.fft.rfft(kern, axis=-1)

    def matvec(self, w: np.ndarray) -> np.ndarray:
        W = np.fft.rfft(w.reshape(self.M, self.L), self.nfft, axis=-1)
        Y = np.einsum("ijf,jf->if", self.kernel, W)
        y = np.fft.irfft(Y, self.nfft, axis=-1)[:, : self.L]
        return y.ravel() + self.beta * w


class CirculantPreconditioner:
    """Inverse of the optimal block-circulant approximation of the normal matrix."""

    def __init__(self, corr: Correlations, beta: float):
        M, L = corr.num_channels, corr.num_taps
        self.M, self.L = M, L
        t = np.arange(L)
        pos = corr.rr[..., L - 1 :]  # lags 0..L-1
        neg = np.zeros_like(pos)  # lag t - L for t = 1..L-1 lives at index t - 1
        neg[..., 1:] = corr.rr[..., : L - 1]
        col = ((L - t) * pos + t * neg) / L
        blocks = np.fft.fft(col, axis=-1).transpose(2, 0, 1)  # (L, M, M)
        blocks = 0.5 * (blocks + np.conj(blocks.transpose(0, 2, 1)))
        blocks = blocks + beta * np.eye(M)[None]
        scale = max(np.max(np.abs(blocks)), np.finfo(float).tiny)
        floor = 1e-12 * scale * np.eye(M)[None]
        self.inverse = np.linalg.inv(blocks + floor)

    def apply(self, v: np.ndarray) -> np.ndarray:
        V = np.fft.fft(v.reshape(self.M, self.L), axis=-1).T  # (L, M)
        Y = np.einsum("fij,fj->fi", self.inverse, V)
        return np.fft.ifft(Y.T, axis=-1).real.ravel()


@dataclass
class SolveInfo:
    method: str
    iterations: int = 0
    relative_residual: float = 0.0
    converged: bool = True


def conjugate_gradient(op, rhs, precond=None, tol=1e-10, max_iter=2000):
    """Preconditioned CG for a symmetric positive-definite operator."""
    x = np.zeros_like(rhs)
    r = rhs.copy()
    bnorm = np.linalg.norm(rhs)
    if bnorm == 0:
        return x, SolveInfo("cg", 0, 0.0, True)
    z = precond(r) if precond else r
    p = z.copy()
    rz = r @ z
    for it in range(1, max_iter + 1):
        Ap = op(p)
        pAp = p @ Ap
        if pAp <= 0:
            raise SingularSystemError("normal matrix is not positive definite; use beta > 0")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        res = np.linalg.norm(r) / bnorm
        if res < tol:
            return x, SolveInfo("cg", it, float(res), True)
        z = precond(r) if precond else r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, SolveInfo("cg", max_iter, float(res), False)


def dense_reference_system(problem: WienerProblem) -> tuple[np.ndarray, np.ndarray]:
    """Normal matrix and cross-correlation vector from an explicit data matrix.

    Builds the full convolution (data) matrix of the filtered references and
    forms ``R^T R / N`` directly; it shares no code with the FFT route.
    """
    r = problem.filtered_refs.samples
    d = problem.target.samples
    M, N = r.shape
    L = problem.num_taps
    rows = N + L - 1
    cols = []
    for m in range(M):
        block = np.zeros((rows, L))
        for k in range(L):
            block[k : k + N, k] = r[m]
        cols.append(block)
    X = np.hstack(cols)
    dpad = np.zeros(rows)
    dpad[:N] = d
    return X.T @ X / N, X.T @ dpad / N


def _resolve_beta(problem: WienerProblem, corr: Correlations) -> float:
    return corr.default_beta() if problem.beta is None else float(problem.beta)


def wiener_solve(
    problem: WienerProblem,
    method: str = "auto",
    tol: float = 1e-10,
    max_iter: int = 3000,
    return_info: bool = False,
):
    """Regularized minimizer ``w = -(Phi + beta I)^-1 phi``.

    ``method`` is ``"cg"`` (FFT operator with circulant preconditioning),
    ``"dense"`` (explicit matrix, only for L_C <= 256) or ``"auto"`` (CG).
    """
    fs = problem.target.sample_rate_hz
    M, L = problem.filtered_refs.num_channels, problem.num_taps
    corr = Correlations(problem.filtered_refs.samples, problem.target.samples, L)
    beta = _resolve_beta(problem, corr)
    if method == "dense":
        if L > DENSE_MAX_TAPS:
            raise ValueError(f"dense solve limited to L_C <= {DENSE_MAX_TAPS}")
        phi, vec = dense_reference_system(problem)
        a = phi + beta * np.eye(M * L)
        if np.linalg.cond(a) > 1e12:
            raise SingularSystemError("normal matrix is numerically singular; use beta > 0")
        w = -np.linalg.solve(a, vec)
        info = SolveInfo("dense")
    elif method in ("cg", "auto"):
        if corr.trace() == 0 and beta == 0:
            raise SingularSystemError("filtered references are silent; use beta > 0")
        op = ToeplitzOperator(corr, beta)
        pre = CirculantPreconditioner(corr, beta)
        w, info = conjugate_gradient(op.matvec, -corr.phi_vector(), pre.apply, tol, max_iter)
        if not info.converged:
            if beta == 0:
                raise SingularSystemError(
                    f"CG did not converge (residual {info.relative_residual:.2e}); "
                    "the system is numerically singular, use beta > 0"
                )
            log.warning("CG stopped at residual %.2e after %d iterations", info.relative_residual, info.iterations)
    else:
        raise ValueError(f"unknown method {method!r}")
    result = AncFilterSet.from_taps(w.reshape(M, L), fs, beta)
    return (result, info) if return_info else result


def empirical_cost(problem: WienerProblem, w: np.ndarray, beta: float) -> float:
    """``mean(e^2) + beta |w|^2`` with ``e = d + sum_m w_m * r_m`` over the zero-padded window."""
    r = problem.filtered_refs.samples
    d = problem.target.samples
    M, N = r.shape
    L = problem.num_taps
    w = w.reshape(M, L)
    e = np.zeros(N + L - 1)
    e[:N] += d
    for m in range(M):
        e += np.convolve(r[m], w[m])
    return float(np.sum(e**2) / N + beta * np.sum(w**2))


# filter shaping ------------------------------------------------------------

TAPER_FRACTION = 0.125
FADE_FRACTION = 0.10


def spectral_taper(num_bins: int, fraction: float = TAPER_FRACTION) -> np.ndarray:
    """Unit gain below the top ``fraction`` of bins, half-cosine 1 -> 0 across them."""
    gain = np.ones(num_bins)
    n = int(round(fraction * num_bins))
    if n > 0:
        t = np.arange(1, n + 1) / n
        gain[num_bins - n :] = 0.5 * (1 + np.cos(np.pi * t))
    return gain


def fade_out(length: int, fraction: float = FADE_FRACTION) -> np.ndarray:
    gain = np.ones(length)
    n = int(round(fraction * length))
    if n > 0:
        t = np.arange(1, n + 1) / n
        gain[length - n :] = 0.5 * (1 + np.cos(np.pi * t))
    return gain


def shape_filters(freq_filters, fs_low: int, n_fft: int, target_fs: int, num_taps: int) -> AncFilterSet:
    """Turn low-rate frequency-domain filters into time-domain FIR filters.

    ``freq_filters`` has shape ``(frames, M, n_fft // 2 + 1)`` (a 2-D array
    is treated as a single frame). Steps: average over frames, half-cosine
    taper of the top 12.5% of bins, zero-pad the spectrum to the target
    rate's FFT size, inverse FFT, keep ``num_taps`` taps, raised-cosine fade
    over the last 10% of taps.
    """
    spec = np.asarray(freq_filters, dtype=np.complex128)
    if spec.ndim == 2:
        spec = spec[None]
    if spec.ndim != 3 or spec.shape[-1] != n_fft // 2 + 1:
        raise ValueError(f"expected (frames, M, {n_fft // 2 + 1}) spectra, got {spec.shape}")
    if (n_fft * target_fs) % fs_low or target_fs < fs_low:
        raise ValueError("target rate must be an upsampling of fs_low that keeps an integer FFT size")
    if num_taps < 1:
        raise ValueError("num_taps must be positive")
    mean = spec.mean(axis=0)
    tapered = mean * spectral_taper(mean.shape[-1])
    n_target = n_fft * target_fs // fs_low
    padded = np.zeros((mean.shape[0], n_target // 2 + 1), dtype=np.complex128)
    padded[:, : mean.shape[-1]] = tapered
    taps = np.fft.irfft(padded, n_target, axis=-1) * (n_target / n_fft)
    out = np.zeros((mean.shape[0], num_taps))
    k = min(num_taps, n_target)
    out[:, :k] = taps[:, :k]
    out *= fade_out(num_taps)
    return AncFilterSet.from_taps(out, target_fs)


# estimators ------------------------------------------------------------------


@runtime_checkable
class FilterEstimator(Protocol):
    """Maps a context of clean reference signals to control filters."""

    name: str

    def estimate(
        self,
        context: MultiChannelWaveform,
        s_hat: FirFilter,
        ear: Waveform | None,
        num_taps: int,
    ) -> AncFilterSet: ...


class ZeroEstimator:
    name = "zero"

    def estimate(self, context, s_hat, ear, num_taps):
        return AncFilterSet.zeros(context.num_channels, num_taps, context.sample_rate_hz)


@dataclass
class OracleWienerEstimator:
    """Wiener filter fitted on the context with access to the true ear signal."""

    beta: float | None = None
    on_silence: str = "zeros"  # or "error"
    tol: float = 1e-8
    max_iter: int = 3000
    name: str = "wiener-oracle"

    def estimate(self, context, s_hat, ear, num_taps):
        if ear is None:
            raise ValueError("the oracle Wiener estimator needs the ear signal")
        refs = filtered_reference(context, s_hat)
        if not np.any(refs.samples) or not np.any(ear.samples):
            if self.on_silence == "error":
                raise SingularSystemError("context is silent")
            return AncFilterSet.zeros(context.num_channels, num_taps, context.sample_rate_hz)
        return wiener_solve(WienerProblem(refs, ear, num_taps, self.beta), tol=self.tol, max_iter=self.max_iter)


def oracle_wiener_estimator(context: MultiChannelWaveform, s_hat: FirFilter, d: Waveform,
                            num_taps: int = 2048, beta: float | None = None) -> AncFilterSet:
    return OracleWienerEstimator(beta=beta).estimate(context, s_hat, d, num_taps)


ESTIMATORS = {"wiener-oracle": OracleWienerEstimator, "zero": ZeroEstimator}


def make_estimator(name: str, **kwargs) -> FilterEstimator:
    try:
        return ESTIMATORS[name](**kwargs)
    except KeyError:
        raise ValueError(f"unknown estimator {name!r}; choose from {sorted(ESTIMATORS)}") from None
