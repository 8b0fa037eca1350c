"""Per-tier non-idealities: uniform quantization, ReRAM conductance noise and
photonic relative input noise. SRAM only ever gets quantized.

ReRAM noise stds are computed as sqrt(4 G Freq k_B T / V) (thermal) and
sqrt(2 G Freq q / V) (shot), exactly as written; V sits under the root, so the
result is not dimensionally a conductance. The formula is kept verbatim.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ContractError

BOLTZMANN_K = 1.380649e-23
ELECTRON_Q = 1.602177e-19


@dataclass(frozen=True)
class NoiseConfig:
    temperature_k: float = 300.0
    freq_hz: float = 1e8
    read_voltage_v: float = 0.2
    g_max_s: float = 1e-6
    photonic_sigma: float = 0.0031
    boltzmann_k: float = BOLTZMANN_K
    electron_q: float = ELECTRON_Q
    seed: int = 0

    def __post_init__(self):
        if self.temperature_k <= 0:
            raise ContractError(f"temperature_k must be > 0, got {self.temperature_k}")
        if self.read_voltage_v <= 0:
            raise ContractError(f"read_voltage_v must be > 0, got {self.read_voltage_v}")
        if self.photonic_sigma < 0:
            raise ContractError(f"photonic_sigma must be >= 0, got {self.photonic_sigma}")
        if self.g_max_s <= 0 or self.freq_hz <= 0:
            raise ContractError("g_max_s and freq_hz must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class QuantSpec:
    bits: int
    per_tensor_scale: float
    symmetric: bool = True

    def __post_init__(self):
        if not 1 <= self.bits <= 8:
            raise ContractError(f"bits must be in [1, 8], got {self.bits}")
        if not self.per_tensor_scale > 0:
            raise ContractError(f"per_tensor_scale must be > 0, got {self.per_tensor_scale}")
        if not self.symmetric:
            raise ContractError("only symmetric quantization is supported")

    @property
    def levels(self) -> int:
        """Largest code magnitude, 2^(bits-1) - 1 (at least 1 so 1-bit is usable)."""
        return max(2 ** (self.bits - 1) - 1, 1)

    @property
    def step(self) -> float:
        return self.per_tensor_scale / self.levels


def quantize(x, spec: QuantSpec) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    q = np.clip(np.rint(x / spec.step), -spec.levels, spec.levels)
    # q / levels first: the max code then lands exactly on the scale
    return q / spec.levels * spec.per_tensor_scale


def spec_for(x, bits: int) -> QuantSpec | None:
    """Per-tensor spec with scale max|x|; None for an all-zero tensor."""
    scale = float(np.max(np.abs(x))) if np.size(x) else 0.0
    return QuantSpec(bits, scale) if scale > 0 else None


def reram_noise_std(g, cfg: NoiseConfig) -> tuple[np.ndarray | float, np.ndarray | float]:
    """(thermal, shot) standard deviations of the conductance noise at ``g``."""
    g_arr = np.asarray(g, dtype=float)
    if np.any(g_arr < 0):
        raise ContractError("conductance must be non-negative")
    thermal = np.sqrt(4.0 * g_arr * cfg.freq_hz * cfg.boltzmann_k * cfg.temperature_k / cfg.read_voltage_v)
    shot = np.sqrt(2.0 * g_arr * cfg.freq_hz * cfg.electron_q / cfg.read_voltage_v)
    if g_arr.ndim == 0:
        return float(thermal), float(shot)
    return thermal, shot


def perturb_reram_weights(w_row, cfg: NoiseConfig, rng: np.random.Generator, w_max: float | None = None) -> np.ndarray:
    """Map weights to conductances, add thermal + shot noise, map back.

    ``|w|`` in ``[0, w_max]`` maps linearly onto ``[0, g_max]``; the sign is
    carried digitally (differential pair), so the noisy magnitude keeps the
    original sign. ``w_max`` defaults to ``max|w_row|``.
    """
    w = np.asarray(w_row, dtype=float)
    if w_max is None:
        w_max = float(np.max(np.abs(w))) if w.size else 0.0
    thermal_z = rng.standard_normal(w.shape)
    shot_z = rng.standard_normal(w.shape)
    if w_max <= 0:
        return w.copy()
    g = np.abs(w) * (cfg.g_max_s / w_max)
    thermal, shot = reram_noise_std(g, cfg)
    g_noisy = g + thermal * thermal_z + shot * shot_z
    return np.sign(w) * g_noisy * (w_max / cfg.g_max_s)


def reram_weight_variance(w, cfg: NoiseConfig, w_max: float) -> np.ndarray | float:
    """Closed-form variance of ``perturb_reram_weights`` output around ``w``."""
    g = np.abs(np.asarray(w, dtype=float)) * (cfg.g_max_s / w_max)
    thermal, shot = reram_noise_std(g, cfg)
    return (np.square(thermal) + np.square(shot)) * (w_max / cfg.g_max_s) ** 2


def perturb_photonic_inputs(x_q, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """x + N(0, (sigma |x|)^2), elementwise."""
    if sigma < 0:
        raise ContractError(f"sigma must be >= 0, got {sigma}")
    x = np.asarray(x_q, dtype=float)
    z = rng.standard_normal(x.shape)
    if sigma == 0:
        return x.copy()
    return x + sigma * np.abs(x) * z
