"""Synthetic sample generation and dataset serialization.

One sample = one solved trajectory of one sampled ODE instance: noisy
values on the input grid (first third of a uniform grid on [0, 6]),
noisy labels on the query grid (last two thirds), the ground-truth
symbol sequence, and a possibly-corrupted copy of it as symbolic input.
Generation is deterministic: every sample is produced from a child RNG
keyed by (master seed, family, instance, initial condition), so worker
count and ordering cannot change a single byte of the output.
"""

from __future__ import annotations

import dataclasses
import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .bdf import SolverConfig, SolverError, Trajectory, solve
from .odes import OdeFamily, SamplingConfig, family_by_name, sample_params
from .symbolic import (CorruptionConfig, SystemExpr, Vocabulary, corrupt,
                       to_polish)

N_GRID = 192          # uniform points on [0, 6]
N_INPUT_FULL = 64     # of which the first 64 lie in [0, 2]
N_LABEL = 128


class ZeroSignal(ValueError):
    pass


class GenerationExhausted(RuntimeError):
    pass


class DimensionTooLarge(ValueError):
    pass


class SchemaMismatch(ValueError):
    pass


class CorruptRecord(ValueError):
    def __init__(self, index: int, reason: str):
        self.index = index
        super().__init__(f"record {index}: {reason}")


@dataclass(frozen=True)
class DatasetConfig:
    families: tuple[str, ...] = ("thomas", "lorenz3d", "halvorsen")
    n_instances: int = 200          # coefficient draws per family
    ics_per_instance: int = 4       # trajectories per coefficient draw
    lam: float = 0.10
    ic_box: float = 2.0
    snr: float = 0.02
    n_input: int = N_INPUT_FULL     # must divide 64; smaller = subsampled grid
    d_max: int = 3
    mantissa_len: int = 3
    unknown_coefficients: bool = False
    term_deletion: float = 0.0
    term_addition: float = 0.0
    max_retries: int = 10

    def __post_init__(self):
        if N_INPUT_FULL % self.n_input != 0:
            raise ValueError(f"n_input must divide {N_INPUT_FULL}")
        for name in self.families:
            fam = family_by_name(name)
            if fam.dim > self.d_max:
                raise DimensionTooLarge(
                    f"family {name} has dimension {fam.dim} > d_max")

    @property
    def size(self) -> int:
        return len(self.families) * self.n_instances * self.ics_per_instance

    def corruption(self) -> CorruptionConfig:
        return CorruptionConfig(
            unknown_coefficients=self.unknown_coefficients,
            term_deletion=self.term_deletion,
            term_addition=self.term_addition)

    def sampling(self) -> SamplingConfig:
        return SamplingConfig(lam=self.lam, ic_box=self.ic_box)

    def vocabulary(self) -> Vocabulary:
        return Vocabulary(d_max=self.d_max, mantissa_len=self.mantissa_len)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def time_grids(n_input: int = N_INPUT_FULL
               ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(full solver grid, input grid, label grid).

    The full grid is 192 uniform points on [0, 6]; the first 64 fall in
    [0, 2] and are the input points, the last 128 are the labels.  For
    n_input < 64 the input points are an even subsample of the first 64.
    """
    full = np.linspace(0.0, 6.0, N_GRID)
    stride = N_INPUT_FULL // n_input
    input_idx = np.arange(0, N_INPUT_FULL, stride)
    return full, input_idx, np.arange(N_INPUT_FULL, N_GRID)


@dataclass
class Sample:
    family: str
    dim: int
    index: int
    t_input: np.ndarray       # (n_input,)
    u_input: np.ndarray       # (n_input, d_max), noisy, zero-padded
    mask: np.ndarray          # (d_max,) 1.0 for true dims
    t_query: np.ndarray       # (n_label,)
    u_label: np.ndarray       # (n_label, d_max), noisy, zero-padded
    u_clean_end: np.ndarray   # (d_max,) clean state at the last input time
    symbol_input: np.ndarray  # token ids, unframed
    symbol_target: np.ndarray  # token ids, SOS/EOS framed

    @property
    def d_max(self) -> int:
        return self.mask.size


def add_noise(traj: Trajectory, snr: float,
              rng: np.random.Generator) -> Trajectory:
    """Additive Gaussian noise scaled so sigma*||eta|| / ||u|| == snr."""
    if snr < 0:
        raise ValueError("snr must be non-negative")
    if snr == 0:
        return traj
    u_norm = float(np.linalg.norm(traj.values))
    if u_norm == 0.0:
        raise ZeroSignal("cannot scale noise against a zero trajectory")
    eta = rng.standard_normal(traj.values.shape)
    sigma = snr * u_norm / float(np.linalg.norm(eta))
    return Trajectory(times=traj.times, values=traj.values + sigma * eta)


def pad_to_dim(values: np.ndarray, d_max: int) -> np.ndarray:
    """Zero-pad the trailing (dimension) axis to width d_max."""
    d = values.shape[-1]
    if d > d_max:
        raise DimensionTooLarge(f"dimension {d} exceeds d_max={d_max}")
    if d == d_max:
        return values
    pad = [(0, 0)] * (values.ndim - 1) + [(0, d_max - d)]
    return np.pad(values, pad)


def dim_mask(d: int, d_max: int) -> np.ndarray:
    if d > d_max:
        raise DimensionTooLarge(f"dimension {d} exceeds d_max={d_max}")
    m = np.zeros(d_max)
    m[:d] = 1.0
    return m


def _instance_rng(master_seed: int, fam_idx: int, inst: int):
    return np.random.default_rng([master_seed, fam_idx, inst])


def _ic_rng(master_seed: int, fam_idx: int, inst: int, ic: int):
    return np.random.default_rng([master_seed, fam_idx, inst, ic])


def make_sample(family: OdeFamily, cfg: DatasetConfig, vocab: Vocabulary,
                rng: np.random.Generator, index: int = 0,
                expr: SystemExpr | None = None,
                solver_cfg: SolverConfig = SolverConfig()) -> Sample:
    """Full pipeline: (sample ->) solve -> noise -> corrupt -> tokenize.

    If `expr` is given the coefficients are fixed and only the initial
    condition is drawn; otherwise both come from `rng`.  Solver failures
    trigger a fresh draw, up to cfg.max_retries.
    """
    full, input_idx, label_idx = time_grids(cfg.n_input)
    sampling = cfg.sampling()
    for _ in range(cfg.max_retries):
        if expr is None:
            params = sample_params(family, sampling, rng)
            candidate = family.build(params)
        else:
            candidate = expr
        u0 = rng.uniform(-cfg.ic_box, cfg.ic_box, size=family.dim)
        try:
            traj = solve(candidate, u0, full, solver_cfg)
        except SolverError:
            if expr is not None:
                expr = None  # the instance itself may be the problem
            continue
        noisy = add_noise(traj, cfg.snr, rng)
        target_words = to_polish(candidate, cfg.mantissa_len)
        corruption = cfg.corruption()
        if not family.additive:
            # rational-trig systems only support placeholder corruption
            corruption = CorruptionConfig(
                unknown_coefficients=corruption.unknown_coefficients)
        corrupted = corrupt(candidate, corruption, rng)
        input_words = to_polish(corrupted, cfg.mantissa_len)
        return Sample(
            family=family.name,
            dim=family.dim,
            index=index,
            t_input=full[input_idx],
            u_input=pad_to_dim(noisy.values[input_idx], cfg.d_max),
            mask=dim_mask(family.dim, cfg.d_max),
            t_query=full[label_idx],
            u_label=pad_to_dim(noisy.values[label_idx], cfg.d_max),
            u_clean_end=pad_to_dim(traj.values[input_idx[-1]], cfg.d_max),
            symbol_input=vocab.encode(input_words),
            symbol_target=vocab.encode(target_words, sos=True, eos=True),
        )
    raise GenerationExhausted(
        f"no integrable instance of {family.name} in {cfg.max_retries} draws")


def generate_dataset(cfg: DatasetConfig, master_seed: int) -> list[Sample]:
    """Deterministic dataset: (cfg, master_seed) fixes every byte."""
    vocab = cfg.vocabulary()
    samples = []
    index = 0
    for fam_idx, name in enumerate(cfg.families):
        family = family_by_name(name)
        sampling = cfg.sampling()
        for inst in range(cfg.n_instances):
            params = sample_params(family, sampling,
                                   _instance_rng(master_seed, fam_idx, inst))
            expr = family.build(params)
            for ic in range(cfg.ics_per_instance):
                rng = _ic_rng(master_seed, fam_idx, inst, ic)
                samples.append(make_sample(family, cfg, vocab, rng,
                                           index=index, expr=expr))
                index += 1
    return samples


# --- container format -------------------------------------------------------
#
# header:  magic "ODFD" | u32 version | u32 hash length | config hash (ascii)
#          | u64 record count
# record:  u32 payload length | payload
# payload: u16 family length | family utf-8 | u8 dim | u8 d_max | u64 index
#          | arrays in fixed order, floats as little-endian f64 and token
#          ids as little-endian i32, each prefixed by a u32 element count

MAGIC = b"ODFD"
VERSION = 1


def _pack_f64(arr: np.ndarray) -> bytes:
    flat = np.ascontiguousarray(arr, dtype="<f8")
    return struct.pack("<I", flat.size) + flat.tobytes()


def _pack_i32(arr: np.ndarray) -> bytes:
    flat = np.ascontiguousarray(arr, dtype="<i4")
    return struct.pack("<I", flat.size) + flat.tobytes()


def _record_bytes(s: Sample) -> bytes:
    fam = s.family.encode()
    parts = [struct.pack("<H", len(fam)), fam,
             struct.pack("<BBQ", s.dim, s.d_max, s.index),
             _pack_f64(s.t_input), _pack_f64(s.u_input),
             _pack_f64(s.mask), _pack_f64(s.t_query), _pack_f64(s.u_label),
             _pack_f64(s.u_clean_end),
             _pack_i32(s.symbol_input), _pack_i32(s.symbol_target)]
    return b"".join(parts)


def write_dataset(path, samples, config_hash: str = "") -> None:
    with open(path, "wb") as fh:
        h = config_hash.encode()
        fh.write(MAGIC + struct.pack("<II", VERSION, len(h)) + h)
        fh.write(struct.pack("<Q", len(samples)))
        for s in samples:
            payload = _record_bytes(s)
            fh.write(struct.pack("<I", len(payload)))
            fh.write(payload)


class _Reader:
    def __init__(self, buf: bytes, index: int):
        self.buf = buf
        self.pos = 0
        self.index = index

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptRecord(self.index, "truncated payload")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype: str) -> np.ndarray:
        (n,) = self.unpack("<I")
        itemsize = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(n * itemsize), dtype=dtype).copy()


def read_dataset(path) -> tuple[list[Sample], str]:
    """Returns (samples, config hash); raises SchemaMismatch/CorruptRecord."""
    with open(path, "rb") as fh:
        head = fh.read(4)
        if head != MAGIC:
            raise SchemaMismatch(f"bad magic {head!r}")
        version, hash_len = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise SchemaMismatch(f"unsupported version {version}")
        config_hash = fh.read(hash_len).decode()
        (count,) = struct.unpack("<Q", fh.read(8))
        samples = []
        for i in range(count):
            raw = fh.read(4)
            if len(raw) < 4:
                raise CorruptRecord(i, "missing length prefix")
            (plen,) = struct.unpack("<I", raw)
            payload = fh.read(plen)
            if len(payload) < plen:
                raise CorruptRecord(i, "truncated record")
            samples.append(_parse_record(payload, i))
    return samples, config_hash


def _parse_record(payload: bytes, index: int) -> Sample:
    r = _Reader(payload, index)
    (fam_len,) = r.unpack("<H")
    family = r.take(fam_len).decode()
    dim, d_max, idx = r.unpack("<BBQ")
    t_input = r.array("<f8")
    u_input = r.array("<f8").reshape(t_input.size, d_max)
    mask = r.array("<f8")
    t_query = r.array("<f8")
    u_label = r.array("<f8").reshape(t_query.size, d_max)
    u_clean_end = r.array("<f8")
    symbol_input = r.array("<i4")
    symbol_target = r.array("<i4")
    if r.pos != len(payload):
        raise CorruptRecord(index, "trailing bytes")
    return Sample(family=family, dim=dim, index=idx, t_input=t_input,
                  u_input=u_input, mask=mask, t_query=t_query,
                  u_label=u_label, u_clean_end=u_clean_end,
                  symbol_input=symbol_input, symbol_target=symbol_target)


def write_jsonl(path, samples, config_hash: str = "") -> None:
    """Human-inspectable export with the same field names."""
    with open(path, "w") as fh:
        fh.write(json.dumps({"schema": "odefusion-dataset",
                             "version": VERSION,
                             "config_hash": config_hash}) + "\n")
        for s in samples:
            rec = {"family": s.family, "dim": s.dim, "index": s.index,
                   "t_input": s.t_input.tolist(),
                   "u_input": s.u_input.tolist(),
                   "mask": s.mask.tolist(),
                   "t_query": s.t_query.tolist(),
                   "u_label": s.u_label.tolist(),
                   "u_clean_end": s.u_clean_end.tolist(),
                   "symbol_input": s.symbol_input.tolist(),
                   "symbol_target": s.symbol_target.tolist()}
            fh.write(json.dumps(rec) + "\n")
