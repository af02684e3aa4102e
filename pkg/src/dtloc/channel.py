"""Beamformed per-subband RSS from traced paths.

The downlink channel towards a single-antenna user is a length-``n_t`` row per OFDM
subcarrier; subcarriers are grouped into subbands and the RSS of beam ``f_k`` in subband
``b`` is ``|h_b^H f_k|^2`` in dBm.  Receiver noise is deliberately not added here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .raytrace import PathSet
from .scene import ArraySpec, Scene

RSS_FLOOR_DBM = -174.0
AGGREGATIONS = ("coherent", "power")


@dataclass(frozen=True, eq=False)
class Codebook:
    """DFT grid of beams.  Every beam has unit norm and entries of magnitude 1/sqrt(n_t)."""

    beams: np.ndarray = field(repr=False)  # (n_beams, n_t) complex
    n_t: int
    oversampling: int
    spatial_freqs: np.ndarray = field(repr=False)  # spacing * direction cosine each beam points at
    scaling: str = "unit-norm"

    @property
    def n_beams(self) -> int:
        return len(self.beams)

    def spec(self) -> dict:
        return {"kind": "dft", "n_t": self.n_t, "oversampling": self.oversampling, "scaling": self.scaling}


def dft_codebook(n_t: int, oversampling: int = 1) -> Codebook:
    if n_t < 1 or oversampling < 1:
        raise ValueError("n_t and oversampling must be >= 1")
    n = n_t * oversampling
    psi = (np.arange(n) - n // 2) / n  # uniform in [-1/2, 1/2)
    m = np.arange(n_t)
    beams = np.exp(2j * np.pi * np.outer(psi, m)) / np.sqrt(n_t)
    return Codebook(beams=beams, n_t=n_t, oversampling=oversampling, spatial_freqs=psi)


def array_response(array: ArraySpec, az_deg, el_deg) -> np.ndarray:
    """ULA steering vector(s); the array axis is horizontal and perpendicular to boresight.

    Broadside (az = boresight, el = 0) gives the all-ones vector.  Broadcasts over the
    angle arguments: the result has shape ``broadcast(az, el).shape + (n_t,)``.
    """
    az = np.deg2rad(np.asarray(az_deg, dtype=float) - array.boresight_az_deg)
    el = np.deg2rad(np.asarray(el_deg, dtype=float))
    u = np.cos(el) * np.sin(az)
    m = np.arange(array.n_antennas)
    return np.exp(2j * np.pi * array.spacing_wavelengths * np.multiply.outer(u, m))


def subcarrier_layout(scene: Scene) -> tuple[np.ndarray, np.ndarray]:
    """Baseband subcarrier offsets (Hz) and the subband each one belongs to.

    Only subcarriers that fit entirely in the band are used; a subcarrier belongs to the
    subband containing its centre.
    """
    n_sc = int(np.floor(scene.bandwidth_hz / scene.subcarrier_hz + 1e-9))
    offsets = (np.arange(n_sc) + 0.5) * scene.subcarrier_hz
    band = np.minimum((offsets // scene.subband_hz).astype(int), scene.n_subbands - 1)
    freqs = offsets - n_sc * scene.subcarrier_hz / 2.0
    return freqs, band


def _averaging_matrix(band: np.ndarray, n_subbands: int) -> np.ndarray:
    M = np.zeros((len(band), n_subbands))
    M[np.arange(len(band)), band] = 1.0
    return M / M.sum(axis=0, keepdims=True)


@dataclass(frozen=True, eq=False)
class SubbandChannel:
    position_index: int
    coeffs: np.ndarray = field(repr=False)  # (n_subbands, n_t) coherent subband means
    aggregation: str = "coherent"
    reference_delay_s: float = 0.0
    subcarrier_coeffs: np.ndarray | None = field(default=None, repr=False)  # (n_sc, n_t), power mode only
    subband_of: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_subbands(self) -> int:
        return self.coeffs.shape[0]

    def beam_power_mw(self, codebook: Codebook) -> np.ndarray:
        """Linear received power, shape (n_beams, n_subbands)."""
        if self.aggregation == "coherent":
            y = self.coeffs.conj() @ codebook.beams.T  # (B, K)
            return (np.abs(y) ** 2).T
        y = np.abs(self.subcarrier_coeffs.conj() @ codebook.beams.T) ** 2  # (n_sc, K)
        return y.T @ _averaging_matrix(self.subband_of, self.n_subbands)


def _path_terms(scene: Scene, pathset: PathSet):
    cols = pathset.arrays()
    amp = np.sqrt(10.0 ** (scene.bs.tx_power_dbm / 10.0)) * 10.0 ** (cols["gain_db"] / 20.0)
    alpha = amp * np.exp(1j * cols["phase_rad"])
    steer = array_response(scene.bs.array, cols["aod_az_deg"], cols["aod_el_deg"])  # (L, n_t)
    return alpha, steer, cols["delay_s"]


def subcarrier_response(scene: Scene, pathset: PathSet) -> tuple[np.ndarray, np.ndarray]:
    """Baseband subcarrier offsets and the (n_sc, n_t) channel at each, absolute delays."""
    freqs, _ = subcarrier_layout(scene)
    if len(pathset) == 0:
        return freqs, np.zeros((len(freqs), scene.bs.array.n_antennas), dtype=complex)
    alpha, steer, tau = _path_terms(scene, pathset)
    E = np.exp(-2j * np.pi * np.outer(tau, freqs))
    return freqs, (E.T * alpha) @ steer


def subband_channels(
    scene: Scene, pathset: PathSet, position_index: int = -1, aggregation: str = "coherent"
) -> SubbandChannel:
    """Per-subband channel rows.

    Coherent mode averages the subcarrier responses after aligning timing to the first
    arriving path, as a synchronised receiver would; without that, the bulk delay alone
    (0.3 us per 100 m) would rotate the phase across a 1 MHz subband and cancel the mean.
    Power mode keeps every subcarrier and averages beam powers instead.
    """
    if aggregation not in AGGREGATIONS:
        raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
    freqs, band = subcarrier_layout(scene)
    n_t = scene.bs.array.n_antennas
    B = scene.n_subbands
    if len(pathset) == 0:
        zeros = np.zeros((B, n_t), dtype=complex)
        if aggregation == "power":
            return SubbandChannel(position_index, zeros, aggregation, 0.0,
                                  np.zeros((len(freqs), n_t), dtype=complex), band)
        return SubbandChannel(position_index, zeros, aggregation)

    alpha, steer, tau = _path_terms(scene, pathset)
    tau_ref = float(tau.min())
    if aggregation == "coherent":
        E = np.exp(-2j * np.pi * np.outer(tau - tau_ref, freqs))  # (L, n_sc)
        D = E @ _averaging_matrix(band, B)  # (L, B)
        coeffs = (D.T * alpha) @ steer
        return SubbandChannel(position_index, coeffs, aggregation, tau_ref)
    E = np.exp(-2j * np.pi * np.outer(tau, freqs))
    H = (E.T * alpha) @ steer  # (n_sc, n_t)
    coeffs = _averaging_matrix(band, B).T @ (H * np.exp(2j * np.pi * freqs * tau_ref)[:, None])
    return SubbandChannel(position_index, coeffs, aggregation, tau_ref, H, band)


def to_dbm(power_mw, floor_dbm: float = RSS_FLOOR_DBM) -> np.ndarray:
    p = np.asarray(power_mw, dtype=float)
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(p)
    return np.maximum(np.where(p > 0, db, floor_dbm), floor_dbm)


def rss(channel: SubbandChannel, codebook: Codebook, beam: int, subband: int, floor_dbm: float = RSS_FLOOR_DBM) -> float:
    """RSS in dBm of one beam in one subband (zero or negligible power maps to the floor)."""
    return float(rss_matrix(channel, codebook, floor_dbm)[beam, subband])


def rss_matrix(channel: SubbandChannel, codebook: Codebook, floor_dbm: float = RSS_FLOOR_DBM) -> np.ndarray:
    """All beams x subbands, dBm."""
    return to_dbm(channel.beam_power_mw(codebook), floor_dbm)
