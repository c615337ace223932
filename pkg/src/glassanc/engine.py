"""Sample-synchronous anti-noise engine.

Each control filter is split into a time-domain head (the first ``2B``
taps, so tap 0 acts on the current sample) and a tail of ``L_C/B - 2``
partitions of ``B`` taps handled by uniformly partitioned overlap-add with
``2B``-point FFTs. Tail blocks are computed when an input block completes;
the block finished at index ``b`` first contributes to output block
``b + 2``, which leaves one whole block for the computation, the slack a
background worker would use on hardware.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .dsp import FirFilterBank
from .filters import AncFilterSet


class EngineError(ValueError):
    pass


@dataclass(frozen=True)
class EngineConfig:
    block_size: int = 128
    num_taps: int = 2048
    fs: int = 22050
    injected_latency_samples: int = 1
    crossfade_samples: int | None = None  # defaults to one block

    def __post_init__(self):
        B, L = self.block_size, self.num_taps
        if B < 1 or B & (B - 1):
            raise EngineError(f"block size must be a power of two, got {B}")
        if L % B:
            raise EngineError(f"L_C={L} is not divisible by B={B}")
        if L < 2 * B:
            raise EngineError(f"L_C={L} must be at least 2B={2 * B}")
        if self.injected_latency_samples < 1:
            raise EngineError("injected latency must be at least one sample")
        if self.fs <= 0:
            raise EngineError("fs must be positive")
        if self.crossfade_samples is not None and self.crossfade_samples < 1:
            raise EngineError("crossfade must last at least one sample")

    @property
    def crossfade(self) -> int:
        return self.block_size if self.crossfade_samples is None else self.crossfade_samples

    @property
    def num_partitions(self) -> int:
        return self.num_taps // self.block_size

    @property
    def num_tail_partitions(self) -> int:
        return self.num_partitions - 2


@dataclass(frozen=True)
class UpdateSchedule:
    context_s: float = 2.0
    update_period_s: float = 0.2
    application_delay_s: float = 0.2

    def __post_init__(self):
        if min(self.context_s, self.update_period_s, self.application_delay_s) <= 0:
            raise EngineError("schedule durations must be positive")


@dataclass
class _FilterSlot:
    taps: np.ndarray  # (M, L)
    head: np.ndarray  # (M, 2B)
    spectra: np.ndarray  # (P, M, B + 1)
    z_ring: list = field(default_factory=list)  # last three tail blocks, newest last
    tail_now: np.ndarray = None  # tail samples for the block in progress


class HybridEngine:
    """Stateful engine; see :func:`engine_init`.

    ``plant_feedback`` is a simulation hook: when set, the engine adds
    ``plant_feedback[m] * out[n-1]`` to each raw input before feedback
    cancellation, coupling its own speaker output back into the mics
    sample by sample.
    """

    def __init__(self, w: AncFilterSet, g_hat: FirFilterBank | None, config: EngineConfig,
                 plant_feedback: FirFilterBank | None = None, output_limit: float = 0.0):
        if w.length != config.num_taps:
            raise EngineError(f"filters have {w.length} taps, config expects {config.num_taps}")
        if w.fs != config.fs:
            raise EngineError(f"filter rate {w.fs} Hz does not match config rate {config.fs} Hz")
        self.config = config
        self.M = w.num_channels
        B = config.block_size
        self.B = B
        self.P = config.num_tail_partitions
        self.ghat = self._bank_taps(g_hat, "g_hat")
        self.plant = self._bank_taps(plant_feedback, "plant_feedback")
        self.limit = float(output_limit)
        self.xbuf = np.zeros((self.M, 3 * B))
        self.fdl = np.zeros((self.P + 2, self.M, B + 1), dtype=np.complex128)  # newest first
        self.blocks_done = 0
        self.pos = 0
        self.yhist = np.zeros(2 * self.ghat.shape[1])
        self.ypos = 0
        self.ohist = np.zeros(2 * self.plant.shape[1])
        self.opos = 0
        self.active = self._make_slot(w.taps())
        self.pending: _FilterSlot | None = None
        self.cf_done = 0
        self.samples_processed = 0

    def _bank_taps(self, bank, name):
        if bank is None:
            return np.zeros((self.M, 1))
        if len(bank) != self.M:
            raise EngineError(f"{name} has {len(bank)} filters for {self.M} channels")
        taps = bank.as_array()
        nz = np.flatnonzero(np.any(taps != 0, axis=0))
        return np.ascontiguousarray(taps[:, : (nz[-1] + 1 if nz.size else 1)])

    # filter slots -------------------------------------------------------------

    def _tail_block(self, spectra: np.ndarray, age: int) -> np.ndarray:
        """Overlap-add block produced when the input block ``age`` blocks ago completed."""
        if self.P == 0:
            return np.zeros(2 * self.B)
        X = self.fdl[age : age + self.P]
        return np.fft.irfft(np.einsum("pmf,pmf->f", spectra, X), 2 * self.B)

    def _make_slot(self, taps: np.ndarray) -> _FilterSlot:
        B, P = self.B, self.P
        taps = np.array(taps, dtype=np.float64)
        head = np.ascontiguousarray(taps[:, : 2 * B])
        parts = taps[:, 2 * B :].reshape(self.M, P, B).transpose(1, 0, 2)
        spectra = np.fft.rfft(parts, 2 * B, axis=-1)
        slot = _FilterSlot(taps, head, spectra)
        # rebuild the tail state as if these filters had always been running:
        # z_ring holds the blocks from the last three completed inputs, oldest first
        slot.z_ring = [self._tail_block(spectra, age) for age in (2, 1, 0)]
        slot.tail_now = slot.z_ring[1][:B] + slot.z_ring[0][B:]
        return slot

    # processing ----------------------------------------------------------------

    def _complete_block(self):
        B = self.B
        X = np.fft.rfft(self.xbuf[:, 2 * B :], 2 * B, axis=-1)
        self.fdl = np.roll(self.fdl, 1, axis=0)
        self.fdl[0] = X
        for slot in (self.active, self.pending):
            if slot is None:
                continue
            slot.z_ring = slot.z_ring[1:] + [self._tail_block(slot.spectra, 0)]
            slot.tail_now = slot.z_ring[1][:B] + slot.z_ring[0][B:]
        self.xbuf[:, : 2 * B] = self.xbuf[:, B:]
        self.blocks_done += 1
        self.pos = 0

    def process_block(self, raw, playback=None) -> np.ndarray:
        """Run ``raw`` (shape ``(M, n)``) through the engine; returns speaker output."""
        raw = np.ascontiguousarray(np.atleast_2d(np.asarray(raw, dtype=np.float64)))
        if raw.shape[0] != self.M:
            raise EngineError(f"expected {self.M} input channels, got {raw.shape[0]}")
        n = raw.shape[1]
        play = np.zeros(n) if playback is None else np.ascontiguousarray(playback, dtype=np.float64)
        out = np.empty(n)
        self.last_clean = np.empty((self.M, n))
        i = 0
        while i < n:
            count = min(n - i, self.B - self.pos)
            if self.pending is not None:
                count = min(count, self.config.crossfade - self.cf_done)
            pend = self.pending if self.pending is not None else self.active
            self.cf_done, self.ypos, self.opos = _kernels.run_segment(
                raw, play, i, count, self.pos, self.B,
                self.xbuf, self.active.head, self.active.tail_now, pend.head, pend.tail_now,
                self.pending is not None, self.cf_done, self.config.crossfade,
                self.ghat, self.yhist, self.ypos, self.plant, self.ohist, self.opos, self.limit,
                out, self.last_clean,
            )
            i += count
            self.pos += count
            if self.pending is not None and self.cf_done >= self.config.crossfade:
                self.active, self.pending, self.cf_done = self.pending, None, 0
            if self.pos == self.B:
                self._complete_block()
        self.samples_processed += n
        return out

    def process_sample(self, raw_mic_samples, playback_sample: float = 0.0) -> float:
        raw = np.asarray(raw_mic_samples, dtype=np.float64).reshape(self.M, 1)
        return float(self.process_block(raw, np.array([playback_sample]))[0])

    def update_filters(self, w_new: AncFilterSet):
        """Crossfade linearly to ``w_new`` over ``crossfade_samples``.

        An update that arrives mid-crossfade freezes the current blend as
        the outgoing set and fades from there to the newest filters.
        """
        if w_new.num_channels != self.M or w_new.length != self.config.num_taps:
            raise EngineError(
                f"update has shape ({w_new.num_channels}, {w_new.length}), "
                f"engine expects ({self.M}, {self.config.num_taps})"
            )
        if w_new.fs != self.config.fs:
            raise EngineError("update sample rate does not match the engine")
        if self.pending is not None:
            alpha = self.cf_done / self.config.crossfade
            blend = self.active.taps + alpha * (self.pending.taps - self.active.taps)
            self.active = self._make_slot(blend)
        self.pending = self._make_slot(w_new.taps())
        self.cf_done = 0

    @property
    def current_taps(self) -> np.ndarray:
        """Taps of the filter set that will be live once any crossfade finishes."""
        return (self.pending or self.active).taps.copy()


def engine_init(w: AncFilterSet, g_hat: FirFilterBank | None, config: EngineConfig) -> HybridEngine:
    return HybridEngine(w, g_hat, config)
