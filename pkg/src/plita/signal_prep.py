"""Signal conditioning: resample to 100 Hz, high-pass, normalize, gate quality.

The chain is resample -> 0.5 Hz high-pass -> unit-variance normalization,
recorded step by step in the output's provenance list. Normalization is
per-10-second block so a streaming consumer never needs a whole-record pass;
strips cut at arbitrary offsets get re-normalized at extraction time (see
``data.sampling``).

The resampler is a windowed-sinc polyphase design (Kaiser beta 8.6, 64 taps
per phase, plus one tap so the symmetric filter has integer group delay).
The high-pass is a 5th-order Butterworth in second-order sections, applied
forward-backward for zero phase; cascaded sections keep the 0.005 normalized
cutoff numerically stable where a transfer-function form would not be.
"""

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.signal import butter, firwin, sosfiltfilt, sosfreqz

from . import kernels

TARGET_FS = 100.0
HIGHPASS_ORDER = 5
HIGHPASS_CUTOFF_HZ = 0.5
BLOCK_SECONDS = 10.0
TAPS_PER_PHASE = 64
KAISER_BETA = 8.6

_MAX_RATE_DENOMINATOR = 512


@dataclass
class RawSignal:
    samples: np.ndarray
    fs: float


@dataclass
class CleanSignal:
    samples: np.ndarray
    fs: float
    provenance: list = field(default_factory=list)


class UnsupportedRateError(ValueError):
    pass


def _rational_ratio(fs_in, fs_out):
    ratio = Fraction(str(fs_out)) / Fraction(str(fs_in))
    approx = ratio.limit_denominator(_MAX_RATE_DENOMINATOR)
    if approx != ratio:
        raise UnsupportedRateError(
            f"rate conversion {fs_in} -> {fs_out} Hz has no small rational ratio"
        )
    return approx.numerator, approx.denominator


def design_polyphase(up, down):
    """Kaiser lowpass split into `up` phases; returns (phases, delay).

    Total length TAPS_PER_PHASE*up + 1 keeps the symmetric filter's group
    delay an integer number of upsampled-rate samples.
    """
    n_taps = TAPS_PER_PHASE * up + 1
    cutoff = 1.0 / max(up, down)  # relative to Nyquist at the upsampled rate
    h = firwin(n_taps, cutoff, window=("kaiser", KAISER_BETA)) * up
    delay = (n_taps - 1) // 2
    t_max = math.ceil(n_taps / up)
    phases = np.zeros((up, t_max), dtype=np.float64)
    for p in range(up):
        taps = h[p::up]
        phases[p, : taps.shape[0]] = taps
    return phases, delay


def resample(samples, fs_in, fs_out=TARGET_FS):
    """Rational polyphase resample; returns float64 of length ceil(n*up/down).

    Equal rates return an untouched copy. Duration is preserved to within one
    output sample.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a 1-d signal, got shape {x.shape}")
    if float(fs_in) == float(fs_out):
        return x.copy()
    up, down = _rational_ratio(fs_in, fs_out)
    phases, delay = design_polyphase(up, down)
    n_out = -((-x.shape[0] * up) // down)
    return kernels.polyphase_apply(np.ascontiguousarray(x), phases, up, down, delay, n_out)


def design_highpass(fs=TARGET_FS):
    return butter(HIGHPASS_ORDER, HIGHPASS_CUTOFF_HZ, btype="highpass", fs=fs, output="sos")


def highpass(samples, fs=TARGET_FS):
    """Zero-phase 5th-order Butterworth high-pass at 0.5 Hz."""
    return sosfiltfilt(design_highpass(fs), np.asarray(samples, dtype=np.float64))


def single_pass_gain_db(freq_hz, fs=TARGET_FS):
    """Magnitude response of one forward pass, in dB, at one frequency."""
    sos = design_highpass(fs)
    _, h = sosfreqz(sos, worN=[2.0 * np.pi * freq_hz / fs])
    return float(20.0 * np.log10(np.abs(h[0])))


def normalize_unit_variance(samples, degenerate_tol=1e-12):
    """Zero-mean, unit-variance copy; (near-)constant input comes back as zeros."""
    x = np.asarray(samples, dtype=np.float64)
    mu = x.mean()
    sd = x.std()
    if sd <= degenerate_tol:
        return np.zeros_like(x)
    return (x - mu) / sd


def normalize_blocks(samples, fs, block_s=BLOCK_SECONDS):
    """Normalize each contiguous block of block_s seconds independently.

    A trailing partial block is normalized on its own. Block means are zero,
    so a record of whole blocks keeps overall variance 1.
    """
    x = np.asarray(samples, dtype=np.float64)
    b = int(round(block_s * fs))
    out = np.empty_like(x)
    for start in range(0, x.shape[0], b):
        seg = x[start : start + b]
        out[start : start + b] = normalize_unit_variance(seg)
    return out


def clean(raw, fs_out=TARGET_FS):
    """Full conditioning chain RawSignal -> CleanSignal with provenance."""
    y = resample(raw.samples, raw.fs, fs_out)
    prov = [f"resample:{raw.fs:g}->{fs_out:g}Hz"]
    y = highpass(y, fs_out)
    prov.append(
        f"highpass:butter{HIGHPASS_ORDER}@{HIGHPASS_CUTOFF_HZ:g}Hz:zero-phase"
    )
    y = normalize_blocks(y, fs_out)
    prov.append(f"normalize:per-{BLOCK_SECONDS:g}s-block")
    return CleanSignal(samples=y.astype(np.float32), fs=float(fs_out), provenance=prov)


# --- strip quality predicates ------------------------------------------------
#
# A predicate takes (strip, fs) and returns True to KEEP the strip. The
# registry maps names usable from configs and the command line.

FLATLINE_WINDOW_S = 2.0
FLATLINE_VAR_FLOOR = 1e-4
CLIPPING_MAX_FRACTION = 0.05


def accept_all(strip, fs):
    return True


def flatline_ok(strip, fs):
    """Reject when any 2 s sub-window is (near) constant."""
    w = int(round(FLATLINE_WINDOW_S * fs))
    x = np.ascontiguousarray(strip, dtype=np.float64)
    return kernels.min_window_var(x, w) >= FLATLINE_VAR_FLOOR


def clipping_ok(strip, fs):
    """Reject when more than 5% of samples sit at the strip's min or max."""
    x = np.asarray(strip)
    at_rail = (x == x.min()) | (x == x.max())
    return float(at_rail.mean()) <= CLIPPING_MAX_FRACTION


def strict(strip, fs):
    return flatline_ok(strip, fs) and clipping_ok(strip, fs)


QUALITY_PREDICATES = {
    "default": accept_all,
    "flatline": flatline_ok,
    "clipping": clipping_ok,
    "strict": strict,
}


def get_quality_predicate(name):
    try:
        return QUALITY_PREDICATES[name]
    except KeyError:
        raise KeyError(
            f"unknown quality predicate {name!r}; known: {sorted(QUALITY_PREDICATES)}"
        ) from None
