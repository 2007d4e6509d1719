"""Synthetic fingerprinted-emitter signals, IQ file I/O, and episode sampling.

A device "fingerprint" is a small set of hardware impairments applied to a
clean QPSK burst. The impairment chain order is fixed:

    PA cubic nonlinearity -> IQ imbalance -> CFO rotation ->
    phase-noise random walk -> DC offset -> AWGN

Permuting the chain changes outputs; a golden-hash regression test pins it.
All generation is deterministic given explicit seeds; independent records
derive their generator as default_rng(master_seed XOR record_index).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConstantSignal,
    InsufficientSamples,
    InvalidLength,
    MalformedHeader,
    SeparationInfeasible,
    TruncatedPayload,
    UnsupportedVersion,
    ZeroPowerSignal,
)

IQ_MAGIC = b"IQFS"
IQ_VERSION = 1

SAMPLES_PER_SYMBOL = 4

# Configured maxima for impairment magnitudes (the profile parameter space).
PROFILE_BOUNDS = {
    "cfo_hz": 0.01,
    "iq_gain_imbalance": 0.2,
    "iq_phase_imbalance_rad": 0.2,
    "dc_offset": 0.1,
    "pa_cubic_coeff": 0.3,
    "phase_noise_std": 0.05,
}

_PROFILE_SAMPLER_ATTEMPTS = 1000


@dataclass
class SignalRecord:
    """One labeled IQ burst: row 0 carries I, row 1 carries Q."""

    iq: np.ndarray
    label: int
    emitter_id: int

    def __post_init__(self):
        arr = np.asarray(self.iq, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != 2 or arr.shape[1] < 1:
            raise InvalidLength(f"iq must be (2, L) with L >= 1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("iq contains NaN or Inf")
        self.iq = arr

    @property
    def length(self) -> int:
        return self.iq.shape[1]


@dataclass(frozen=True)
class EmitterProfile:
    """Per-device impairment parameters: the synthetic fingerprint."""

    cfo_hz: float
    iq_gain_imbalance: float
    iq_phase_imbalance_rad: float
    dc_offset: complex
    pa_cubic_coeff: float
    phase_noise_std: float

    def __post_init__(self):
        checks = [
            ("cfo_hz", abs(self.cfo_hz)),
            ("iq_gain_imbalance", abs(self.iq_gain_imbalance)),
            ("iq_phase_imbalance_rad", abs(self.iq_phase_imbalance_rad)),
            ("dc_offset", abs(self.dc_offset)),
            ("pa_cubic_coeff", abs(self.pa_cubic_coeff)),
            ("phase_noise_std", self.phase_noise_std),
        ]
        if self.phase_noise_std < 0:
            raise ValueError("phase_noise_std must be non-negative")
        for name, magnitude in checks:
            if magnitude > PROFILE_BOUNDS[name] + 1e-12:
                raise ValueError(f"{name}={magnitude} exceeds bound {PROFILE_BOUNDS[name]}")


@dataclass
class FewShotEpisode:
    """A C-way K-shot training split plus a held-out test split."""

    train: list
    test: list
    C: int
    K: int

    def __post_init__(self):
        counts = {}
        for rec in self.train:
            counts[rec.label] = counts.get(rec.label, 0) + 1
        if len(counts) != self.C or any(v != self.K for v in counts.values()):
            raise InsufficientSamples(
                f"episode train histogram {counts} is not {self.C} classes x {self.K}"
            )


def profile_separation_gaps(a: EmitterProfile, b: EmitterProfile) -> dict:
    """Normalized pairwise gaps in the rotation-invariant fingerprint observables.

    Quarter-turn rotation augmentation aliases the signed components of the
    IQ-plane impairments (a 90-degree rotation turns gain +g into the same
    observable as gain -g, and rotates the DC vector), and the constant
    QPSK envelope makes the cubic PA term collapse to a gain the min-max
    normalization cancels. What survives as a class fingerprint is the CFO,
    the magnitude of the gain anisotropy, the magnitude of the quadrature
    skew, and the phase-noise level; separation is certified on those.
    """
    b_ = PROFILE_BOUNDS
    return {
        "cfo_hz": abs(a.cfo_hz - b.cfo_hz) / (2 * b_["cfo_hz"]),
        "iq_gain_imbalance": abs(abs(a.iq_gain_imbalance) - abs(b.iq_gain_imbalance))
        / b_["iq_gain_imbalance"],
        "iq_phase_imbalance_rad": abs(
            abs(a.iq_phase_imbalance_rad) - abs(b.iq_phase_imbalance_rad)
        )
        / b_["iq_phase_imbalance_rad"],
        "phase_noise_std": abs(a.phase_noise_std - b.phase_noise_std)
        / b_["phase_noise_std"],
    }


def _pair_separated(a: EmitterProfile, b: EmitterProfile, separation: float) -> bool:
    return any(gap >= separation for gap in profile_separation_gaps(a, b).values())


def _draw_profile(rng: np.random.Generator) -> EmitterProfile:
    b = PROFILE_BOUNDS
    dc_mag = rng.uniform(0.0, b["dc_offset"])
    dc_arg = rng.uniform(0.0, 2.0 * math.pi)
    return EmitterProfile(
        cfo_hz=rng.uniform(-b["cfo_hz"], b["cfo_hz"]),
        iq_gain_imbalance=rng.uniform(-b["iq_gain_imbalance"], b["iq_gain_imbalance"]),
        iq_phase_imbalance_rad=rng.uniform(
            -b["iq_phase_imbalance_rad"], b["iq_phase_imbalance_rad"]
        ),
        dc_offset=dc_mag * complex(math.cos(dc_arg), math.sin(dc_arg)),
        pa_cubic_coeff=rng.uniform(-b["pa_cubic_coeff"], b["pa_cubic_coeff"]),
        phase_noise_std=rng.uniform(0.0, b["phase_noise_std"]),
    )


def synth_emitter_profiles(C: int, rng: np.random.Generator, separation: float) -> list:
    """Draw C profiles where every pair differs by at least `separation`
    of one fingerprint observable's full range (see profile_separation_gaps).
    Rejection-sampled; deterministic given rng. The DC offset and PA
    coefficient still vary per profile but do not count toward separation.
    """
    if C < 2:
        raise ValueError(f"need at least 2 emitters, got {C}")
    if not (0.0 < separation <= 1.0):
        raise ValueError(f"separation must be in (0, 1], got {separation}")
    for _ in range(_PROFILE_SAMPLER_ATTEMPTS):
        profiles = [_draw_profile(rng) for _ in range(C)]
        ok = all(
            _pair_separated(profiles[i], profiles[j], separation)
            for i in range(C)
            for j in range(i + 1, C)
        )
        if ok:
            return profiles
    raise SeparationInfeasible(
        f"no {C}-profile set at separation {separation} in "
        f"{_PROFILE_SAMPLER_ATTEMPTS} attempts"
    )


def generate_signal(
    profile: EmitterProfile,
    length: int,
    snr_db: float,
    rng: np.random.Generator,
    label: int = 0,
    emitter_id: int = 0,
) -> SignalRecord:
    """One QPSK-like burst passed through the impairment chain.

    The clean baseband is unit power: random QPSK symbols at 4 samples per
    symbol with rectangular shaping. snr_db=inf disables the noise stage.
    """
    if length < 16:
        raise InvalidLength(f"length must be >= 16, got {length}")
    n_sym = -(-length // SAMPLES_PER_SYMBOL)
    sym = rng.integers(0, 4, n_sym)
    points = ((1.0 - 2.0 * (sym & 1)) + 1j * (1.0 - 2.0 * (sym >> 1))) / math.sqrt(2.0)
    s = np.repeat(points, SAMPLES_PER_SYMBOL)[:length]

    if profile.pa_cubic_coeff != 0.0:
        s = s * (1.0 + profile.pa_cubic_coeff * np.abs(s) ** 2)
    if profile.iq_gain_imbalance != 0.0 or profile.iq_phase_imbalance_rad != 0.0:
        g = profile.iq_gain_imbalance
        phi = profile.iq_phase_imbalance_rad
        i_part = (1.0 + g) * s.real
        q_part = math.cos(phi) * s.imag + math.sin(phi) * s.real
        s = i_part + 1j * q_part
    if profile.cfo_hz != 0.0:
        s = s * np.exp(2j * math.pi * profile.cfo_hz * np.arange(length))
    if profile.phase_noise_std > 0.0:
        walk = np.cumsum(rng.normal(0.0, profile.phase_noise_std, length))
        s = s * np.exp(1j * walk)
    if profile.dc_offset != 0.0:
        s = s + profile.dc_offset

    iq = np.stack([s.real, s.imag]).astype(np.float64)
    if not math.isinf(snr_db):
        iq = add_awgn(iq, snr_db, rng)
    return SignalRecord(iq=iq, label=label, emitter_id=emitter_id)


def add_awgn(iq: np.ndarray, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    """Add white Gaussian noise at the requested SNR; snr_db=inf passes through."""
    if snr_db == math.inf:
        return iq
    power = float(np.mean(iq[0] ** 2 + iq[1] ** 2))
    if power == 0.0:
        raise ZeroPowerSignal("cannot set an SNR for an all-zero signal")
    noise_power = power / (10.0 ** (snr_db / 10.0))
    sigma = math.sqrt(noise_power / 2.0)
    return iq + rng.normal(0.0, sigma, iq.shape)


def generate_dataset(
    profiles,
    samples_per_class: int,
    length: int,
    snr_db: float,
    seed: int,
) -> list:
    """samples_per_class records per profile; record i uses default_rng(seed ^ i)."""
    if seed < 0:
        raise ValueError("seed must be non-negative")
    records = []
    index = 0
    for cls, profile in enumerate(profiles):
        for _ in range(samples_per_class):
            rec_rng = np.random.default_rng(seed ^ index)
            records.append(
                generate_signal(
                    profile, length, snr_db, rec_rng, label=cls, emitter_id=cls
                )
            )
            index += 1
    return records


def minmax_normalize(record: SignalRecord) -> SignalRecord:
    """Affinely map the whole 2xL matrix onto [0, 1] (one global min/max)."""
    lo = float(record.iq.min())
    hi = float(record.iq.max())
    if hi == lo:
        raise ConstantSignal("record is constant; min-max normalization undefined")
    return SignalRecord(
        iq=(record.iq - lo) / (hi - lo),
        label=record.label,
        emitter_id=record.emitter_id,
    )


def sample_episode(
    dataset,
    C: int,
    K: int,
    test_per_class: int,
    rng: np.random.Generator,
) -> FewShotEpisode:
    """Uniformly choose C classes, then K train + test_per_class test records
    per class without replacement. Episode labels are remapped to 0..C-1 in
    ascending order of the chosen original labels.
    """
    by_class = {}
    for idx, rec in enumerate(dataset):
        by_class.setdefault(rec.label, []).append(idx)
    labels = sorted(by_class)
    if len(labels) < C:
        raise InsufficientSamples(f"dataset has {len(labels)} classes, need {C}")
    chosen = sorted(rng.choice(len(labels), size=C, replace=False).tolist())
    train, test = [], []
    for new_label, pick in enumerate(chosen):
        orig = labels[pick]
        idxs = by_class[orig]
        need = K + test_per_class
        if len(idxs) < need:
            raise InsufficientSamples(
                f"class {orig} has {len(idxs)} records, need {need}"
            )
        perm = rng.permutation(len(idxs))
        for j in perm[:K]:
            src = dataset[idxs[j]]
            train.append(SignalRecord(iq=src.iq, label=new_label, emitter_id=src.emitter_id))
        for j in perm[K : K + test_per_class]:
            src = dataset[idxs[j]]
            test.append(SignalRecord(iq=src.iq, label=new_label, emitter_id=src.emitter_id))
    return FewShotEpisode(train=train, test=test, C=C, K=K)


def stack_records(records) -> np.ndarray:
    """Stack records into an (N, 2, L) array for batched model input."""
    if not records:
        raise InsufficientSamples("no records to stack")
    length = records[0].length
    if any(r.length != length for r in records):
        raise InvalidLength("records have differing lengths")
    return np.stack([r.iq for r in records])


# -- IQ file format -----------------------------------------------------------------
#
# magic "IQFS", version u16, record count u32, then per record:
# label u16, emitter_id u16, length u32, payload 2*L little-endian float32
# interleaved I,Q,I,Q,... Values are quantized to float32 on save.


def save_iq_file(records, path):
    blob = bytearray()
    blob += IQ_MAGIC
    blob += struct.pack("<H", IQ_VERSION)
    blob += struct.pack("<I", len(records))
    for rec in records:
        if not (0 <= rec.label < 2 ** 16 and 0 <= rec.emitter_id < 2 ** 16):
            raise ValueError(
                f"label/emitter_id ({rec.label}, {rec.emitter_id}) exceed u16 range"
            )
        blob += struct.pack("<HHI", rec.label, rec.emitter_id, rec.length)
        inter = np.empty(2 * rec.length, dtype="<f4")
        inter[0::2] = rec.iq[0]
        inter[1::2] = rec.iq[1]
        blob += inter.tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load_iq_file(path) -> list:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 10 or buf[:4] != IQ_MAGIC:
        raise MalformedHeader("not an IQ dataset file (bad magic)")
    version = struct.unpack_from("<H", buf, 4)[0]
    if version != IQ_VERSION:
        raise UnsupportedVersion(f"IQ file version {version}, expected {IQ_VERSION}")
    count = struct.unpack_from("<I", buf, 6)[0]
    pos = 10
    records = []
    for _ in range(count):
        if pos + 8 > len(buf):
            raise TruncatedPayload(f"record header truncated at offset {pos}")
        label, emitter_id, length = struct.unpack_from("<HHI", buf, pos)
        pos += 8
        nbytes = 2 * length * 4
        if pos + nbytes > len(buf):
            raise TruncatedPayload(f"record payload truncated at offset {pos}")
        inter = np.frombuffer(buf, dtype="<f4", count=2 * length, offset=pos)
        pos += nbytes
        iq = np.stack([inter[0::2], inter[1::2]]).astype(np.float64)
        records.append(SignalRecord(iq=iq, label=int(label), emitter_id=int(emitter_id)))
    return records
