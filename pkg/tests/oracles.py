"""Independent closed-form and brute-force references used by the tests.

Nothing here imports the package's propagation, channel or localization code; inputs
are plain numbers so that agreement is meaningful.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate

C = 299_792_458.0


def friis_gain_db(distance_m: float, freq_hz: float) -> float:
    """Free-space gain between isotropic antennas, -20 log10(4 pi d / lambda)."""
    lam = C / freq_hz
    return -20.0 * math.log10(4.0 * math.pi * distance_m / lam)


def subcarrier_freqs(bandwidth_hz: float, spacing_hz: float, subband_hz: float, subband: int) -> np.ndarray:
    """Baseband frequencies of the subcarriers whose centre lies in ``subband``.

    Subcarriers that fit in the band are laid out edge to edge, centred on the carrier.
    """
    n = int(math.floor(bandwidth_hz / spacing_hz + 1e-9))
    lo = -n * spacing_hz / 2.0
    out = []
    for i in range(n):
        centre_from_edge = (i + 0.5) * spacing_hz
        if min(int(centre_from_edge // subband_hz), int(round(bandwidth_hz / subband_hz)) - 1) == subband:
            out.append(lo + centre_from_edge)
    return np.array(out)


def dirichlet_mean(freqs: np.ndarray, tau: float) -> complex:
    """Mean of exp(-j 2 pi f tau) over equally spaced ``freqs``, in closed form."""
    n = len(freqs)
    df = freqs[1] - freqs[0]
    x = math.pi * df * tau
    ratio = 1.0 if abs(math.sin(x)) < 1e-15 else math.sin(n * x) / (n * math.sin(x))
    centre = (freqs[0] + freqs[-1]) / 2.0
    return ratio * complex(math.cos(-2 * math.pi * centre * tau), math.sin(-2 * math.pi * centre * tau))


def two_ray_subband_power_dbm(
    ground_range_m: float,
    h_tx: float,
    h_rx: float,
    carrier_hz: float,
    tx_power_dbm: float,
    freqs: np.ndarray,
    ground_loss_db: float = 0.0,
) -> float:
    """Direct plus ground-reflected ray, coherently averaged over a subband.

    The reflected ray has the unfolded length sqrt(r^2 + (h_tx + h_rx)^2), a sign flip
    and an optional extra loss.  Subcarrier phases are referenced to the direct ray's
    arrival (a receiver synchronised on the first path).
    """
    d1 = math.hypot(ground_range_m, h_tx - h_rx)
    d2 = math.hypot(ground_range_m, h_tx + h_rx)
    lam = C / carrier_hz
    amp_tx = math.sqrt(10 ** (tx_power_dbm / 10.0))
    total = 0j
    tau0 = d1 / C
    for d, sign, loss in ((d1, 1.0, 0.0), (d2, -1.0, ground_loss_db)):
        tau = d / C
        a = amp_tx * lam / (4 * math.pi * d) * 10 ** (-loss / 20.0) * sign
        carrier = complex(math.cos(-2 * math.pi * carrier_hz * tau), math.sin(-2 * math.pi * carrier_hz * tau))
        total += a * carrier * dirichlet_mean(freqs, tau - tau0)
    return 10.0 * math.log10(abs(total) ** 2)


def mirror_point(p, a, b):
    """Reflection of 2D point p across the infinite line through a and b."""
    p, a, b = (np.asarray(v, dtype=float) for v in (p, a, b))
    d = (b - a) / np.linalg.norm(b - a)
    v = p - a
    return a + 2 * (v @ d) * d - v


def line_intersection(p1, p2, q1, q2):
    p1, p2, q1, q2 = (np.asarray(v, dtype=float) for v in (p1, p2, q1, q2))
    r, s = p2 - p1, q2 - q1
    t = ((q1[0] - p1[0]) * s[1] - (q1[1] - p1[1]) * s[0]) / (r[0] * s[1] - r[1] * s[0])
    return p1 + t * r


def gaussian_interval_log_prob(measured: float, mean: float, sigma: float, delta: float) -> float:
    """log of the normal probability mass on [measured - delta, measured + delta], by quadrature."""
    norm = 1.0 / (sigma * math.sqrt(2.0 * math.pi))

    def pdf(x):
        return norm * math.exp(-0.5 * ((x - mean) / sigma) ** 2)

    val, _ = integrate.quad(pdf, measured - delta, measured + delta, epsabs=0.0, epsrel=1e-12)
    return math.log(val)


def brute_force_argmax(fingerprints: np.ndarray, entries, sigma: float, delta: float) -> tuple[int, np.ndarray]:
    """Argmax over candidates of the product of per-entry interval probabilities.

    ``fingerprints`` is (P, K, B); ``entries`` is a list of (k, b, t, rss).  Products are
    accumulated in log space; first index wins ties.
    """
    scores = np.zeros(len(fingerprints))
    for p, fp in enumerate(fingerprints):
        scores[p] = sum(gaussian_interval_log_prob(r, fp[k, b], sigma, delta) for k, b, _, r in entries)
    best = 0
    for p in range(1, len(scores)):
        if scores[p] > scores[best]:
            best = p
    return best, scores


def ula_response(n: int, spacing: float, az_deg: float, el_deg: float = 0.0) -> np.ndarray:
    u = math.cos(math.radians(el_deg)) * math.sin(math.radians(az_deg))
    return np.array([complex(math.cos(2 * math.pi * spacing * m * u), math.sin(2 * math.pi * spacing * m * u))
                     for m in range(n)])
