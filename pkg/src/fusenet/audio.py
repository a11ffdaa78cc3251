"""Audio-to-spectrogram pipeline: WAV decode, resample, amplitude trim,
fixed-length segmentation, STFT, band crop.

All stages are pure functions over value types, deterministic for a given
input, and operate on mono float signals in [-1, 1].
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

CANONICAL_RATE = 22050  # smallest common rate whose Nyquist covers the 10 kHz band


class WavFormatError(ValueError):
    """Malformed RIFF/WAVE container."""


class WavCodecError(ValueError):
    """Structurally valid WAV with an unsupported sample encoding."""


class EmptyAudioError(ValueError):
    """Every frame fell below the amplitude threshold."""


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray  # mono, float, in [-1, 1]
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate}")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    window_size: int = 512
    overlap: float = 0.5
    segment_seconds: float = 10.0
    band_low_hz: float = 0.0
    band_high_hz: float = 10000.0

    def __post_init__(self):
        if self.window_size < 2 or self.window_size & (self.window_size - 1):
            raise ValueError(f"window_size must be a power of two, got {self.window_size}")
        if not 0.0 <= self.overlap < 1.0:
            raise ValueError(f"overlap must be in [0, 1), got {self.overlap}")
        if self.segment_seconds <= 0:
            raise ValueError("segment_seconds must be positive")
        if self.band_high_hz < self.band_low_hz:
            raise ValueError("band high must be >= band low")

    @property
    def hop(self) -> int:
        return int(round(self.window_size * (1.0 - self.overlap)))


@dataclass(frozen=True)
class SpectrogramMatrix:
    magnitudes: np.ndarray  # [freq_bins, time_frames], non-negative
    bin_hz: float
    hop: int

    def __post_init__(self):
        if self.magnitudes.ndim != 2:
            raise ValueError("magnitudes must be 2-D [freq_bins, time_frames]")


# ---------------------------------------------------------------------------
# WAV container

def decode_wav(data: bytes) -> Waveform:
    """Parse a RIFF/WAVE blob (PCM16 or IEEE float32), average to mono.

    Integer samples are scaled by 1/32768 so full-scale positive is just
    below 1.0; multichannel input becomes the per-frame channel mean.
    """
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavFormatError("not a RIFF/WAVE stream")
    pos = 12
    fmt = None
    payload = None
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8:pos + 8 + size]
        if len(body) != size:
            raise WavFormatError(f"chunk {cid!r} truncated")
        if cid == b"fmt ":
            if size < 16:
                raise WavFormatError("fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            payload = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned
    if fmt is None or payload is None:
        raise WavFormatError("missing fmt or data chunk")

    audio_format, channels, rate, _, _, bits = fmt
    if channels < 1 or rate < 1:
        raise WavFormatError("fmt chunk declares zero channels or rate")
    if audio_format == 1 and bits == 16:
        raw = np.frombuffer(payload, dtype="<i2")
        samples = raw.astype(np.float64) / 32768.0
    elif audio_format == 3 and bits == 32:
        samples = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    else:
        raise WavCodecError(f"unsupported codec: format tag {audio_format}, {bits}-bit")
    if channels > 1:
        usable = (len(samples) // channels) * channels
        samples = samples[:usable].reshape(-1, channels).mean(axis=1)
    if len(samples) == 0:
        raise WavFormatError("data chunk holds no samples")
    return Waveform(samples=samples, sample_rate=int(rate))


def encode_wav(w: Waveform, bits: int = 16) -> bytes:
    """Serialize a mono waveform as PCM16 or float32 WAV."""
    if bits == 16:
        fmt_tag, block = 1, 2
        payload = np.clip(np.round(w.samples * 32768.0), -32768, 32767) \
            .astype("<i2").tobytes()
    elif bits == 32:
        fmt_tag, block = 3, 4
        payload = w.samples.astype("<f4").tobytes()
    else:
        raise ValueError("bits must be 16 or 32")
    fmt = struct.pack("<HHIIHH", fmt_tag, 1, w.sample_rate,
                      w.sample_rate * block, block, bits)
    chunks = b"fmt " + struct.pack("<I", len(fmt)) + fmt \
        + b"data" + struct.pack("<I", len(payload)) + payload
    return b"RIFF" + struct.pack("<I", 4 + len(chunks)) + b"WAVE" + chunks


# ---------------------------------------------------------------------------
# signal conditioning

def resample(w: Waveform, target_hz: int) -> Waveform:
    """Linear-interpolation resampling; duration preserved within one sample."""
    if target_hz < 1:
        raise ValueError("target rate must be >= 1")
    if target_hz == w.sample_rate:
        return w
    n_out = max(1, int(round(len(w.samples) * target_hz / w.sample_rate)))
    t_out = np.arange(n_out) * (w.sample_rate / target_hz)
    samples = np.interp(t_out, np.arange(len(w.samples)), w.samples)
    return Waveform(samples=samples, sample_rate=target_hz)


def trim_silence(w: Waveform, cfg: StftConfig = StftConfig()) -> Waveform:
    """Drop hop-sized frames quieter than 1/4 of the global peak amplitude.

    Frames are consecutive non-overlapping blocks of ``cfg.hop`` samples
    (the trailing partial block counts as a frame). A frame survives when
    its peak |sample| is >= peak(|signal|)/4; removal is strictly
    less-than, so a frame exactly at the threshold is retained.
    """
    if len(w.samples) == 0:
        raise ValueError("empty waveform")
    hop = cfg.hop
    peak = np.abs(w.samples).max()
    if peak == 0.0:
        raise EmptyAudioError("signal is silent")
    threshold = peak / 4.0
    kept = []
    for start in range(0, len(w.samples), hop):
        frame = w.samples[start:start + hop]
        if np.abs(frame).max() >= threshold:
            kept.append(frame)
    if not kept:
        raise EmptyAudioError("all frames below 1/4 of peak amplitude")
    return Waveform(samples=np.concatenate(kept), sample_rate=w.sample_rate)


def segment(w: Waveform, cfg: StftConfig = StftConfig()) -> list[Waveform]:
    """Cut into consecutive fixed-length pieces of ``segment_seconds``.

    A trailing remainder at least half full is zero-padded to full length;
    a shorter one is dropped.
    """
    seg_len = int(round(cfg.segment_seconds * w.sample_rate))
    out = []
    for start in range(0, len(w.samples), seg_len):
        piece = w.samples[start:start + seg_len]
        if len(piece) == seg_len:
            out.append(Waveform(samples=piece, sample_rate=w.sample_rate))
        elif len(piece) * 2 >= seg_len:
            padded = np.zeros(seg_len, dtype=piece.dtype)
            padded[:len(piece)] = piece
            out.append(Waveform(samples=padded, sample_rate=w.sample_rate))
    return out


# ---------------------------------------------------------------------------
# spectrogram

def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window w[i] = 0.5*(1 - cos(2*pi*i/n))."""
    if n < 2:
        raise ValueError("window length must be >= 2")
    i = np.arange(n)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * i / n))


def stft(w: Waveform, cfg: StftConfig = StftConfig()) -> SpectrogramMatrix:
    """Windowed real-FFT magnitudes over hopping frames.

    Frame count is floor((len - window) / hop) + 1; bins 0..window/2 are
    kept (band cropping happens separately).
    """
    n = cfg.window_size
    if len(w.samples) < n:
        raise ValueError(f"input of {len(w.samples)} samples is shorter "
                         f"than one {n}-sample window")
    hop = cfg.hop
    n_frames = (len(w.samples) - n) // hop + 1
    idx = np.arange(n)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = w.samples[idx] * hann_window(n)[None, :]
    mags = np.abs(np.fft.rfft(frames, axis=1)).T  # [bins, frames]
    return SpectrogramMatrix(magnitudes=mags, bin_hz=w.sample_rate / n, hop=hop)


def crop_band(s: SpectrogramMatrix, cfg: StftConfig = StftConfig()) -> SpectrogramMatrix:
    """Keep bins k with k*bin_hz <= band_high_hz."""
    nyquist = s.bin_hz * (s.magnitudes.shape[0] - 1)
    if cfg.band_high_hz > nyquist:
        raise ValueError(f"band top {cfg.band_high_hz} Hz above Nyquist {nyquist:.1f} Hz")
    k_max = int(np.floor(cfg.band_high_hz / s.bin_hz))
    return SpectrogramMatrix(magnitudes=s.magnitudes[:k_max + 1],
                             bin_hz=s.bin_hz, hop=s.hop)
