"""Additive white Gaussian noise channel for transmitted parameter vectors."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .numerics import RngStream, gauss_vector

MODES = ("noiseless", "snr_db", "sigma")
POWER_REFS = ("unit", "empirical")


def sigma_from_snr(snr_db: float, signal_power: float = 1.0) -> float:
    """Noise std for a per-coordinate signal power at the given SNR."""
    if not signal_power > 0:
        raise ParameterError(f"signal power must be positive, got {signal_power}")
    if not math.isfinite(snr_db):
        raise ParameterError(f"SNR must be finite, got {snr_db}")
    return math.sqrt(signal_power * 10.0 ** (-snr_db / 10.0))


@dataclass(frozen=True)
class ChannelSpec:
    mode: str = "noiseless"
    value: float = 0.0  # SNR in dB or sigma, depending on mode
    power_ref: str = "unit"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ParameterError(f"unknown channel mode {self.mode!r}")
        if self.power_ref not in POWER_REFS:
            raise ParameterError(f"unknown power reference {self.power_ref!r}")
        if not math.isfinite(self.value):
            raise ParameterError("channel value must be finite")
        if self.mode == "sigma" and self.value < 0:
            raise ParameterError(f"sigma must be non-negative, got {self.value}")

    @classmethod
    def noiseless(cls) -> "ChannelSpec":
        return cls()

    @classmethod
    def snr(cls, snr_db: float, power_ref: str = "unit") -> "ChannelSpec":
        return cls("snr_db", snr_db, power_ref)

    @classmethod
    def fixed_sigma(cls, sigma: float) -> "ChannelSpec":
        return cls("sigma", sigma)

    @property
    def is_noiseless(self) -> bool:
        return self.mode == "noiseless" or (self.mode == "sigma" and self.value == 0)

    def sigma_for(self, w: np.ndarray | None = None) -> float:
        """Noise std for transmitting ``w``.

        In ``empirical`` power mode the signal power is ``||w||^2 / d`` of the
        vector being sent; an all-zero vector falls back to unit power.
        """
        if self.mode == "noiseless":
            return 0.0
        if self.mode == "sigma":
            return self.value
        power = 1.0
        if self.power_ref == "empirical" and w is not None and w.size:
            p = float(np.dot(w, w)) / w.size
            power = p if p > 0 else 1.0
        return sigma_from_snr(self.value, power)

    def nominal_sigma(self) -> float:
        """Std under unit signal power; what the bounds consume."""
        return 0.0 if self.mode == "noiseless" else (self.value if self.mode == "sigma" else sigma_from_snr(self.value))


def transmit(w: np.ndarray, spec: ChannelSpec, rng: RngStream) -> np.ndarray:
    """Return ``w`` plus an isotropic Gaussian draw scaled for the channel."""
    w = np.asarray(w, dtype=np.float64)
    if spec.is_noiseless:
        return w.copy()
    return w + gauss_vector(rng, w.size, spec.sigma_for(w))
