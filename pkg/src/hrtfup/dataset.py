"""Data preparation: bundle file I/O, HRIR -> HRTF pipeline, subject
splits, measurement-grid subsampling, and standardization statistics.

The on-disk bundle is a little-endian binary container of raw impulse
responses with their source positions (see docs/formats.md for the exact
byte layout).  Spherical t-design point sets used to pick measurement
subsets ship with the package as text files, one unit vector per line.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, replace
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np
import scipy.signal

BUNDLE_MAGIC = b"HRIRB"
BUNDLE_VERSION = 1
DEFAULT_TARGET_RATE = 32000.0
FFT_SIZE = 256
NUM_BINS = 128


class FormatError(ValueError):
    """Malformed bundle file; carries the byte offset of the failure."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class UnsupportedRatio(ValueError):
    """Sample rates are not rationally related within tolerance."""


class MissingDesignFile(FileNotFoundError):
    """No packaged t-design point set for the requested size."""


class NotPerfectSquare(ValueError):
    """Measurement-subset size must be a perfect square."""


class DegenerateVariance(ValueError):
    """Training data has (near) zero variance; standardization undefined."""


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------


@dataclass
class HrirBundle:
    """Raw impulse responses for a set of subjects on one position grid."""

    subjects: list[str]
    positions: np.ndarray  # (B, 3) Cartesian meters
    sample_rate: float
    hrirs: np.ndarray  # (S, B, C, T) float64

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.hrirs = np.asarray(self.hrirs, dtype=np.float64)
        s, b, _, _ = self.hrirs.shape
        if len(self.subjects) != s:
            raise ValueError(f"{len(self.subjects)} subject IDs for {s} subjects")
        if self.positions.shape != (b, 3):
            raise ValueError(
                f"positions {self.positions.shape} do not match {b} grid points"
            )
        if not self.sample_rate > 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate}")


@dataclass
class HrtfSet:
    """Transfer-function magnitudes (and optionally complex values).

    log_magnitudes holds log10 of the magnitude, shape (S, B, C, L).  The
    frequency axis is bin l -> (l+1) * sample_rate / fft_size, i.e. strictly
    125 Hz, 250 Hz, ... 16 kHz for the 32 kHz / 256-point pipeline.
    """

    log_magnitudes: np.ndarray
    positions: np.ndarray
    frequencies: np.ndarray
    subjects: list[str]
    complex_values: np.ndarray | None = None

    def __post_init__(self):
        s, b, _, l = self.log_magnitudes.shape
        if len(self.subjects) != s:
            raise ValueError(f"{len(self.subjects)} subject IDs for {s} subjects")
        if self.positions.shape != (b, 3):
            raise ValueError("position table does not match data")
        if self.frequencies.shape != (l,):
            raise ValueError("frequency axis does not match data")
        if self.complex_values is not None and (
            self.complex_values.shape != self.log_magnitudes.shape
        ):
            raise ValueError("complex values do not match log-magnitudes")

    def select_subjects(self, ids: list[str]) -> "HrtfSet":
        index = {sid: i for i, sid in enumerate(self.subjects)}
        missing = [sid for sid in ids if sid not in index]
        if missing:
            raise KeyError(f"unknown subject IDs: {missing}")
        rows = [index[sid] for sid in ids]
        return replace(
            self,
            log_magnitudes=self.log_magnitudes[rows],
            subjects=list(ids),
            complex_values=None
            if self.complex_values is None
            else self.complex_values[rows],
        )

    def restrict_positions(self, indices) -> "HrtfSet":
        indices = np.asarray(indices, dtype=int)
        return replace(
            self,
            log_magnitudes=self.log_magnitudes[:, indices],
            positions=self.positions[indices],
            complex_values=None
            if self.complex_values is None
            else self.complex_values[:, indices],
        )


@dataclass(frozen=True)
class SplitSpec:
    """Disjoint train/validation/test subject-ID lists."""

    train: list[str]
    val: list[str]
    test: list[str]

    def __post_init__(self):
        seen: set[str] = set()
        for name, ids in [("train", self.train), ("val", self.val), ("test", self.test)]:
            dupes = seen.intersection(ids)
            if dupes or len(set(ids)) != len(ids):
                raise ValueError(f"split '{name}' overlaps another split: {dupes}")
            seen.update(ids)

    @classmethod
    def default_for(cls, subjects: list[str], sizes=(77, 10, 7)) -> "SplitSpec":
        """First-N assignment in subject order; sizes must cover the list."""
        if sum(sizes) != len(subjects):
            raise ValueError(
                f"split sizes {sizes} do not sum to {len(subjects)} subjects"
            )
        a, b, _ = sizes
        return cls(
            train=list(subjects[:a]),
            val=list(subjects[a : a + b]),
            test=list(subjects[a + b :]),
        )

    @classmethod
    def from_dir(cls, path) -> "SplitSpec":
        path = Path(path)
        return cls(
            train=read_split_file(path / "train.txt"),
            val=read_split_file(path / "val.txt"),
            test=read_split_file(path / "test.txt"),
        )

    def write_dir(self, path) -> None:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        for name, ids in [("train", self.train), ("val", self.val), ("test", self.test)]:
            (path / f"{name}.txt").write_text("".join(f"{s}\n" for s in ids))


def read_split_file(path) -> list[str]:
    """One subject ID per line; blank lines ignored."""
    return [line.strip() for line in Path(path).read_text().splitlines() if line.strip()]


@dataclass(frozen=True)
class StandardizationStats:
    """Global scalar mean/std of the training log-magnitudes."""

    mean: float
    std: float

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def invert(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean


def compute_standardization(train: HrtfSet | np.ndarray) -> StandardizationStats:
    """Scalar mean/std over every training log-magnitude entry."""
    x = train.log_magnitudes if isinstance(train, HrtfSet) else np.asarray(train)
    if x.size == 0:
        raise ValueError("empty training set")
    mean = float(np.mean(x))
    std = float(np.std(x))
    if std < 1e-12:
        raise DegenerateVariance(f"training std {std} is degenerate")
    return StandardizationStats(mean=mean, std=std)


# ---------------------------------------------------------------------------
# HRIR -> HRTF pipeline
# ---------------------------------------------------------------------------


def resample_hrirs(
    bundle: HrirBundle, target_rate: float = DEFAULT_TARGET_RATE
) -> HrirBundle:
    """Rational polyphase resampling of every impulse response.

    The anti-aliasing filter is a Kaiser-window FIR designed for < 0.1 dB
    passband ripple below 0.875x the output Nyquist and ~70 dB stopband
    attenuation.  Equal rates pass the data through bit-exactly.

    Raises
    ------
    UnsupportedRatio
        If target/source is not a rational number within 1e-9 relative.
    """
    source_rate = bundle.sample_rate
    if target_rate == source_rate:
        return replace(bundle, hrirs=bundle.hrirs.copy())
    ratio = target_rate / source_rate
    frac = Fraction(ratio).limit_denominator(10000)
    if abs(float(frac) - ratio) > 1e-9 * ratio:
        raise UnsupportedRatio(
            f"rates {source_rate} -> {target_rate} are not rationally related"
        )
    up, down = frac.numerator, frac.denominator

    h = _antialias_filter(source_rate, target_rate, up)
    out = scipy.signal.resample_poly(bundle.hrirs, up, down, axis=-1, window=h)
    n_out = int(round(bundle.hrirs.shape[-1] * ratio))
    return replace(bundle, sample_rate=float(target_rate), hrirs=out[..., :n_out])


def _antialias_filter(source_rate: float, target_rate: float, up: int) -> np.ndarray:
    """Kaiser lowpass at the polyphase rate; cutoff at min(fs_in, fs_out)/2."""
    poly_rate = source_rate * up
    fc = min(source_rate, target_rate) / 2.0
    width = 0.125 * fc  # transition band: [0.875 fc, fc]
    numtaps, beta = scipy.signal.kaiserord(70.0, 2.0 * width / poly_rate)
    numtaps |= 1
    return scipy.signal.firwin(
        numtaps, 0.9375 * fc, window=("kaiser", beta), fs=poly_rate
    )


def hrir_to_hrtf(bundle: HrirBundle) -> HrtfSet:
    """Transform impulse responses to positive-frequency transfer functions.

    Responses are zero-padded (or truncated) to 256 taps, transformed with
    a 256-point FFT, conjugated, and bins 1..128 kept.  At 32 kHz this
    yields the 125 Hz grid up to 16 kHz.  Both the complex values and the
    log10 magnitudes are stored.
    """
    spectrum = np.conj(np.fft.fft(bundle.hrirs, n=FFT_SIZE, axis=-1))
    bins = spectrum[..., 1 : NUM_BINS + 1]
    magnitudes = np.abs(bins)
    if not np.all(np.isfinite(magnitudes)) or np.any(magnitudes == 0.0):
        raise ValueError("zero or non-finite magnitude; cannot take log")
    frequencies = (bundle.sample_rate / FFT_SIZE) * np.arange(1, NUM_BINS + 1)
    return HrtfSet(
        log_magnitudes=np.log10(magnitudes),
        positions=bundle.positions.copy(),
        frequencies=frequencies,
        subjects=list(bundle.subjects),
        complex_values=bins,
    )


# ---------------------------------------------------------------------------
# t-design subsampling
# ---------------------------------------------------------------------------


def load_tdesign(t: int, design_dir=None) -> np.ndarray:
    """Load the packaged (t+1)^2-point spherical t-design, unit vectors."""
    count = (t + 1) ** 2
    name = f"tdesign_t{t}_n{count}.txt"
    if design_dir is not None:
        path = Path(design_dir) / name
        if not path.exists():
            raise MissingDesignFile(str(path))
        text = path.read_text()
    else:
        ref = resources.files("hrtfup") / "designs" / name
        if not ref.is_file():
            raise MissingDesignFile(f"no packaged design {name}")
        text = ref.read_text()
    points = np.loadtxt(io.StringIO(text))
    if points.shape != (count, 3):
        raise FormatError(f"design file {name} has shape {points.shape}", 0)
    return points


def tdesign_subsample(
    positions: np.ndarray, b_prime: int, design_dir=None
) -> list[int]:
    """Pick ``b_prime`` grid indices nearest to a spherical t-design.

    t = sqrt(b_prime) - 1.  For each design direction (in file order) the
    grid position with the largest unit-vector dot product is chosen; if it
    was already taken, the next-nearest unused one is used, so the result
    always has exactly b_prime distinct indices.  Returned sorted.
    """
    root = math.isqrt(b_prime)
    if root * root != b_prime:
        raise NotPerfectSquare(f"b_prime={b_prime} is not a perfect square")
    design = load_tdesign(root - 1, design_dir=design_dir)
    grid = np.asarray(positions, dtype=float)
    unit = grid / np.linalg.norm(grid, axis=1, keepdims=True)

    chosen: list[int] = []
    taken = np.zeros(len(grid), dtype=bool)
    for direction in design:
        order = np.argsort(-(unit @ direction), kind="stable")
        for idx in order:
            if not taken[idx]:
                taken[idx] = True
                chosen.append(int(idx))
                break
    return sorted(chosen)


# ---------------------------------------------------------------------------
# bundle file format
# ---------------------------------------------------------------------------


def write_bundle(bundle: HrirBundle, path) -> None:
    """Write the little-endian binary bundle format (docs/formats.md)."""
    s, b, c, t = bundle.hrirs.shape
    with open(path, "wb") as fh:
        fh.write(BUNDLE_MAGIC)
        fh.write(str(BUNDLE_VERSION).encode("ascii"))
        fh.write(struct.pack("<IIII", s, b, c, t))
        fh.write(struct.pack("<d", float(bundle.sample_rate)))
        for sid in bundle.subjects:
            raw = sid.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
        fh.write(np.ascontiguousarray(bundle.positions, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(bundle.hrirs, dtype="<f8").tobytes())


def read_bundle(path) -> HrirBundle:
    """Read a bundle file; raises FormatError with the failing byte offset."""
    data = Path(path).read_bytes()
    offset = 0

    def take(n: int, what: str) -> bytes:
        nonlocal offset
        if offset + n > len(data):
            raise FormatError(f"truncated file while reading {what}", offset)
        chunk = data[offset : offset + n]
        offset += n
        return chunk

    magic = take(len(BUNDLE_MAGIC), "magic")
    if magic != BUNDLE_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {BUNDLE_MAGIC!r}", 0)
    version_byte = take(1, "version")
    try:
        version = int(version_byte.decode("ascii"))
    except (UnicodeDecodeError, ValueError):
        raise FormatError(f"unreadable version byte {version_byte!r}", 5) from None
    if version != BUNDLE_VERSION:
        raise FormatError(
            f"unsupported version: expected {BUNDLE_VERSION}, found {version}", 5
        )
    s, b, c, t = struct.unpack("<IIII", take(16, "counts"))
    (rate,) = struct.unpack("<d", take(8, "sample rate"))
    subjects = []
    for i in range(s):
        (length,) = struct.unpack("<H", take(2, f"subject {i} ID length"))
        subjects.append(take(length, f"subject {i} ID").decode("utf-8"))
    positions = np.frombuffer(
        take(b * 3 * 8, "positions"), dtype="<f8"
    ).reshape(b, 3)
    hrirs = np.frombuffer(
        take(s * b * c * t * 8, "HRIR payload"), dtype="<f8"
    ).reshape(s, b, c, t)
    if offset != len(data):
        raise FormatError(f"{len(data) - offset} trailing bytes", offset)
    return HrirBundle(
        subjects=subjects,
        positions=positions.copy(),
        sample_rate=float(rate),
        hrirs=hrirs.copy(),
    )


# ---------------------------------------------------------------------------
# prepared-set persistence (library/CLI convenience, NPZ container)
# ---------------------------------------------------------------------------


def save_hrtf_set(hs: HrtfSet, path) -> None:
    arrays = dict(
        log_magnitudes=hs.log_magnitudes,
        positions=hs.positions,
        frequencies=hs.frequencies,
        subjects=np.array(hs.subjects, dtype=str),
    )
    if hs.complex_values is not None:
        arrays["complex_values"] = hs.complex_values
    np.savez_compressed(path, **arrays)


def load_hrtf_set(path) -> HrtfSet:
    with np.load(path, allow_pickle=False) as z:
        return HrtfSet(
            log_magnitudes=z["log_magnitudes"],
            positions=z["positions"],
            frequencies=z["frequencies"],
            subjects=[str(s) for s in z["subjects"]],
            complex_values=z["complex_values"] if "complex_values" in z else None,
        )
