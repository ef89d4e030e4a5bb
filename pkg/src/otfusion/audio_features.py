"""Audio preprocessing: STFT, mel filterbank, log-mel spectrogram, delta
features, and the stacked 3-channel 224x224 image used by the image
branch. Everything is deterministic and pure numpy."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import InputError, ParameterError

IMAGE_SIZE = 224
TENSOR_MAGIC = b"OTF1"


@dataclass
class Waveform:
    """Mono audio samples at a fixed rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float).ravel()
        if self.sample_rate <= 0:
            raise ParameterError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.samples.size == 0:
            raise InputError("empty waveform")


@dataclass
class FeatureParams:
    """Extraction settings; defaults follow the 224-band / hop-1024 setup."""

    n_fft: int = 2048
    hop: int = 1024
    n_mels: int = 224
    delta_width: int = 9


@dataclass
class SpectrogramImage:
    """Three stacked channels (log-mel, delta, delta-delta), each 224x224."""

    channels: np.ndarray

    def __post_init__(self):
        if self.channels.shape != (3, IMAGE_SIZE, IMAGE_SIZE):
            raise InputError(f"expected 3x{IMAGE_SIZE}x{IMAGE_SIZE}, got {self.channels.shape}")


def _hann(n: int) -> np.ndarray:
    # periodic Hann, the analysis-window convention
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft(w: Waveform, n_fft: int = 2048, hop: int = 1024) -> np.ndarray:
    """Centered short-time Fourier transform with a Hanning window.

    Frames are reflect-padded at the signal edges; output is complex with
    shape (n_fft // 2 + 1, frames).
    """
    if n_fft < 256 or n_fft & (n_fft - 1):
        raise ParameterError(f"n_fft must be a power of two >= 256, got {n_fft}")
    if hop < 1:
        raise ParameterError("hop must be >= 1")
    x = w.samples
    if x.size < n_fft:
        raise InputError(f"signal length {x.size} shorter than n_fft {n_fft}")
    pad = n_fft // 2
    x = np.pad(x, pad, mode="reflect")
    frames = 1 + (x.size - n_fft) // hop
    window = _hann(n_fft)
    out = np.empty((n_fft // 2 + 1, frames), dtype=complex)
    for t in range(frames):
        seg = x[t * hop:t * hop + n_fft] * window
        out[:, t] = np.fft.rfft(seg)
    return out


def _hz_to_mel(f):
    # Slaney: linear below 1 kHz, log-spaced above
    f = np.asarray(f, dtype=float)
    mel = 3.0 * f / 200.0
    log_region = f >= 1000.0
    mel = np.where(log_region, 15.0 + 27.0 * np.log(np.maximum(f, 1000.0) / 1000.0) / np.log(6.4), mel)
    return mel


def _mel_to_hz(m):
    m = np.asarray(m, dtype=float)
    f = 200.0 * m / 3.0
    log_region = m >= 15.0
    f = np.where(log_region, 1000.0 * np.exp(np.log(6.4) * (m - 15.0) / 27.0), f)
    return f


def mel_filterbank(n_mels: int, sample_rate: int, n_fft: int) -> np.ndarray:
    """Triangular area-normalized mel filters spanning 0 to Nyquist."""
    if n_mels < 1:
        raise ParameterError("n_mels must be >= 1")
    n_bins = n_fft // 2 + 1
    if n_mels > n_bins:
        raise ParameterError(f"n_mels {n_mels} exceeds the {n_bins} FFT bins")
    mel_pts = np.linspace(_hz_to_mel(0.0), _hz_to_mel(sample_rate / 2.0), n_mels + 2)
    hz_pts = _mel_to_hz(mel_pts)
    fft_freqs = np.linspace(0.0, sample_rate / 2.0, n_bins)
    fb = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, center, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        up = (fft_freqs - lo) / max(center - lo, 1e-12)
        down = (hi - fft_freqs) / max(hi - center, 1e-12)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
        fb[m] *= 2.0 / (hi - lo)
    return fb


def log_mel(w: Waveform, params: FeatureParams | None = None) -> np.ndarray:
    """Log-mel power spectrogram in dB, floored at 80 dB below the peak."""
    params = params or FeatureParams()
    spec = stft(w, params.n_fft, params.hop)
    power = np.abs(spec) ** 2
    fb = mel_filterbank(params.n_mels, w.sample_rate, params.n_fft)
    mel_power = fb @ power
    db = 10.0 * np.log10(mel_power + 1e-10)
    return np.maximum(db, db.max() - 80.0)


def delta(m: np.ndarray, width: int = 9) -> np.ndarray:
    """Per-row local least-squares slope over a centered window.

    Edges are handled by replicating the boundary columns. The second
    difference is just delta applied twice.
    """
    if width % 2 == 0 or width < 3:
        raise ParameterError(f"width must be odd and >= 3, got {width}")
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise ParameterError("delta expects a 2-D matrix")
    half = width // 2
    cols = m.shape[1]
    padded = np.pad(m, ((0, 0), (half, half)), mode="edge")
    out = np.zeros_like(m)
    # paired differences so constant inputs cancel exactly
    for k in range(1, half + 1):
        out += k * (padded[:, half + k:half + k + cols] - padded[:, half - k:half - k + cols])
    denom = 2.0 * sum(k * k for k in range(1, half + 1))
    return out / denom


def bilinear_resize(m: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Separable linear interpolation onto an endpoint-aligned grid.

    Resizing to the input's own shape reproduces it exactly.
    """
    m = np.asarray(m, dtype=float)
    in_r, in_c = m.shape
    row_pos = np.linspace(0.0, in_r - 1.0, rows) if in_r > 1 else np.zeros(rows)
    col_pos = np.linspace(0.0, in_c - 1.0, cols) if in_c > 1 else np.zeros(cols)
    tmp = np.empty((in_r, cols))
    src_c = np.arange(in_c, dtype=float)
    for i in range(in_r):
        tmp[i] = np.interp(col_pos, src_c, m[i])
    out = np.empty((rows, cols))
    src_r = np.arange(in_r, dtype=float)
    for j in range(cols):
        out[:, j] = np.interp(row_pos, src_r, tmp[:, j])
    return out


def to_image(w: Waveform, params: FeatureParams | None = None) -> SpectrogramImage:
    """Stack [log-mel, delta, delta-delta], each resized to 224x224."""
    params = params or FeatureParams()
    base = log_mel(w, params)
    d1 = delta(base, params.delta_width)
    d2 = delta(d1, params.delta_width)
    channels = np.stack([
        bilinear_resize(base, IMAGE_SIZE, IMAGE_SIZE),
        bilinear_resize(d1, IMAGE_SIZE, IMAGE_SIZE),
        bilinear_resize(d2, IMAGE_SIZE, IMAGE_SIZE),
    ])
    return SpectrogramImage(channels)


# ---------------------------------------------------------------------------
# file I/O used by the CLI
# ---------------------------------------------------------------------------

def load_wav(path: str) -> Waveform:
    """Read a mono or stereo WAV file (PCM16 or float32); stereo is averaged."""
    from scipy.io import wavfile

    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise InputError(f"cannot read WAV file {path}: {exc}") from exc
    data = np.asarray(data)
    if data.dtype == np.int16:
        data = data.astype(float) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(float) / 2147483648.0
    else:
        data = data.astype(float)
    if data.ndim == 2:
        data = data.mean(axis=1)
    return Waveform(data, int(rate))


def save_tensor(path: str, arr: np.ndarray):
    """Write a little-endian float32 tensor: magic, ndim, dims, raw data."""
    arr = np.asarray(arr, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<i", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}i", *arr.shape))
        fh.write(arr.tobytes())


def load_tensor(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(4) != TENSOR_MAGIC:
            raise InputError(f"{path} is not a tensor file")
        ndim = struct.unpack("<i", fh.read(4))[0]
        shape = struct.unpack(f"<{ndim}i", fh.read(4 * ndim))
        data = np.frombuffer(fh.read(), dtype="<f4")
    return data.reshape(shape)
