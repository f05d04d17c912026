"""Layered memory bank: construction, candidate matching, serialization.

Layer 1 holds the raw training windows.  Each further layer holds the
residuals left after subtracting the similarity-weighted aggregate of the
other entries (an entry never matches itself):

* layer 1 matches only entries whose periodic step lies within the
  configured circular tolerance (time-wise matching);
* layers >= 2 match every other entry, after subtracting each entry's own
  historical-residual mean from both its history and future sides
  (mean centering).

Construction is layer-major: layer l+1 residuals of all entries depend on
layer l residuals of all entries.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ModelConfig, Scaling
from .dataset import WindowSet
from .errors import BankFormatError, DataError, EmptyCandidateSetError
from .kernel import BATCH_CELL_BUDGET, batch_scores, pairwise_distances

BANK_MAGIC = b"TSNNBANK"
BANK_VERSION = 1
_HEADER = struct.Struct("<8sIQIIIIIddIddBI")

_SCALING_IDS = {
    Scaling.EXPONENTIAL: 0,
    Scaling.COMPLEMENT: 1,
    Scaling.INVERSE_SQUARE: 2,
    Scaling.SIGMOID: 3,
}
_SCALING_BY_ID = {v: k for k, v in _SCALING_IDS.items()}


def circular_distance(a, b, period: int):
    """Shortest distance between periodic steps on a cycle of ``period``."""
    forward = (np.asarray(a) - np.asarray(b)) % period
    return np.minimum(forward, period - forward)


@dataclass(frozen=True)
class CandidateSet:
    """Bank rows admissible for one instance at one layer."""

    positions: np.ndarray
    entry_ids: np.ndarray

    def __len__(self) -> int:
        return self.positions.size


@dataclass(frozen=True)
class BankEntry:
    """Per-training-window view: residual (x, y) pairs for every layer."""

    entry_id: int
    periodic_step: int
    layers: tuple[tuple[np.ndarray, np.ndarray], ...]


class MemoryBank:
    """Immutable per-sensor store of layered residual pairs."""

    def __init__(self, entry_ids, periodic_steps, x_layers, y_layers,
                 config: ModelConfig, sensor_id: int = 0):
        entry_ids = np.asarray(entry_ids, dtype=np.int64)
        periodic_steps = np.asarray(periodic_steps, dtype=np.int64)
        if np.unique(entry_ids).size != entry_ids.size:
            raise DataError("bank entry ids must be unique")
        if periodic_steps.size and (
            periodic_steps.min() < 0
            or periodic_steps.max() >= config.steps_per_period
        ):
            raise DataError("periodic steps must lie in [0, steps_per_period)")
        self.entry_ids = entry_ids
        self.periodic_steps = periodic_steps
        self.x_layers = x_layers  # (L, n, seq_len)
        self.y_layers = y_layers  # (L, n, pred_len)
        self.config = config
        self.sensor_id = sensor_id
        self._position_by_id = {int(e): i for i, e in enumerate(entry_ids)}

    @property
    def n_entries(self) -> int:
        return self.entry_ids.size

    @property
    def num_layers(self) -> int:
        return self.x_layers.shape[0]

    @property
    def residual_nbytes(self) -> int:
        return self.x_layers.nbytes + self.y_layers.nbytes

    def position_of(self, entry_id: int) -> int | None:
        return self._position_by_id.get(int(entry_id))

    def entry(self, position: int) -> BankEntry:
        layers = tuple(
            (self.x_layers[l, position], self.y_layers[l, position])
            for l in range(self.num_layers)
        )
        return BankEntry(
            entry_id=int(self.entry_ids[position]),
            periodic_step=int(self.periodic_steps[position]),
            layers=layers,
        )

    def entries(self):
        return (self.entry(i) for i in range(self.n_entries))


def mean_of(residual_x: np.ndarray) -> float:
    """Scalar mean of a historical residual; the offset used for centering."""
    residual_x = np.asarray(residual_x, dtype=np.float64)
    if residual_x.size == 0:
        raise ValueError("cannot take the mean of an empty residual")
    return float(residual_x.mean())


def residue_pools(periodic_steps: np.ndarray, period: int, tolerance: int):
    """Map periodic step -> positions whose step is within the circular
    tolerance.  Covers every residue present in ``periodic_steps``."""
    if 2 * tolerance + 1 >= period:
        everything = np.arange(periodic_steps.size, dtype=np.int64)
        return {int(s): everything for s in np.unique(periodic_steps)}
    by_residue: dict[int, np.ndarray] = {}
    order = np.argsort(periodic_steps, kind="stable")
    sorted_steps = periodic_steps[order]
    boundaries = np.searchsorted(sorted_steps, np.arange(period + 1))
    for r in range(period):
        members = order[boundaries[r] : boundaries[r + 1]]
        if members.size:
            by_residue[r] = np.sort(members)
    pools = {}
    for s in by_residue:
        parts = [
            by_residue[(s + off) % period]
            for off in range(-tolerance, tolerance + 1)
            if (s + off) % period in by_residue
        ]
        pools[s] = np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)
    return pools


def candidate_set(
    bank: MemoryBank,
    periodic_step: int,
    instance_id: int | None,
    layer: int,
) -> CandidateSet:
    """Admissible bank rows for an instance at ``layer`` (1-based).

    Layer 1 applies the circular periodic-step tolerance; later layers
    admit every entry.  ``instance_id`` names a training entry to exclude
    (pass None for test queries, which are not in the bank).
    """
    if layer < 1:
        raise ValueError(f"layer must be >= 1, got {layer}")
    cfg = bank.config
    if layer == 1:
        dist = circular_distance(bank.periodic_steps, periodic_step,
                                 cfg.steps_per_period)
        mask = dist <= cfg.tolerance
    else:
        mask = np.ones(bank.n_entries, dtype=bool)
    if instance_id is not None:
        pos = bank.position_of(instance_id)
        if pos is not None:
            mask = mask.copy()
            mask[pos] = False
    positions = np.flatnonzero(mask)
    return CandidateSet(positions=positions, entry_ids=bank.entry_ids[positions])


def check_layer1_coverage(periodic_steps: np.ndarray, period: int,
                          tolerance: int) -> None:
    """Every entry needs at least one *other* entry within tolerance."""
    pools = residue_pools(periodic_steps, period, tolerance)
    for s in np.unique(periodic_steps):
        # each member of residue s sits in its own pool, so a pool of one
        # leaves that member with nothing to match
        if pools[int(s)].size <= 1:
            raise EmptyCandidateSetError(
                f"periodic step {int(s)} has no candidates within tolerance "
                f"{tolerance}"
            )


def _group_by_residue(periodic_steps: np.ndarray) -> dict[int, np.ndarray]:
    groups: dict[int, np.ndarray] = {}
    for s in np.unique(periodic_steps):
        groups[int(s)] = np.flatnonzero(periodic_steps == s)
    return groups


def next_layer_residuals(
    x_l: np.ndarray,
    y_l: np.ndarray,
    periodic_steps: np.ndarray,
    config: ModelConfig,
    layer: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Leave-one-out residuals of every entry after one matching round.

    ``layer`` is the 1-based index of the *input* residuals.  Layer 1 uses
    time-wise candidate pools; later layers mean-center before matching.
    """
    n = x_l.shape[0]
    kcfg = config.kernel
    x_next = np.empty_like(x_l)
    y_next = np.empty_like(y_l)
    if layer == 1:
        pools = residue_pools(periodic_steps, config.steps_per_period,
                              config.tolerance)
        for s, members in _group_by_residue(periodic_steps).items():
            pool = pools[s]
            if pool.size <= 1:
                raise EmptyCandidateSetError(
                    f"periodic step {s} has no candidates within tolerance "
                    f"{config.tolerance}"
                )
            dist = pairwise_distances(x_l[members], x_l[pool])
            excluded = members[:, None] == pool[None, :]
            _, scores = batch_scores(dist, kcfg, excluded)
            x_next[members] = x_l[members] - scores @ x_l[pool]
            y_next[members] = y_l[members] - scores @ y_l[pool]
        return x_next, y_next

    offsets = x_l.mean(axis=1)
    cx = x_l - offsets[:, None]
    cy = y_l - offsets[:, None]
    block = max(1, BATCH_CELL_BUDGET // max(n, 1))
    columns = np.arange(n)
    for start in range(0, n, block):
        rows = np.arange(start, min(start + block, n))
        dist = pairwise_distances(cx[rows], cx)
        excluded = rows[:, None] == columns[None, :]
        _, scores = batch_scores(dist, kcfg, excluded)
        x_next[rows] = cx[rows] - scores @ cx
        y_next[rows] = cy[rows] - scores @ cy
    return x_next, y_next


def build_bank(
    windows: WindowSet,
    config: ModelConfig,
    sensor_id: int = 0,
) -> MemoryBank:
    """Construct the full layered bank from one sensor's training windows."""
    n = len(windows)
    if n < 2:
        raise DataError(f"bank needs at least 2 training windows, got {n}")
    if windows.seq_len != config.seq_len or windows.pred_len != config.pred_len:
        raise DataError(
            f"window shape ({windows.seq_len}, {windows.pred_len}) does not "
            f"match config ({config.seq_len}, {config.pred_len})"
        )
    if windows.steps_per_period != config.steps_per_period:
        raise DataError(
            "windows and config disagree on steps_per_period "
            f"({windows.steps_per_period} vs {config.steps_per_period})"
        )
    psteps = np.asarray(windows.periodic_steps, dtype=np.int64)
    check_layer1_coverage(psteps, config.steps_per_period, config.tolerance)

    L = config.num_layers
    x_layers = np.empty((L, n, config.seq_len), dtype=np.float64)
    y_layers = np.empty((L, n, config.pred_len), dtype=np.float64)
    x_layers[0] = windows.x
    y_layers[0] = windows.y
    for l in range(1, L):
        x_layers[l], y_layers[l] = next_layer_residuals(
            x_layers[l - 1], y_layers[l - 1], psteps, config, layer=l
        )
    return MemoryBank(
        entry_ids=np.asarray(windows.indices, dtype=np.int64),
        periodic_steps=psteps,
        x_layers=x_layers,
        y_layers=y_layers,
        config=config,
        sensor_id=sensor_id,
    )


# ---------------------------------------------------------------------------
# Serialization: one binary file per sensor, checksummed.
# ---------------------------------------------------------------------------


def save_bank(bank: MemoryBank, path: str | Path) -> None:
    """Write a bank to disk; the round trip through load_bank is bit-exact."""
    cfg = bank.config
    n, L = bank.n_entries, bank.num_layers
    width = L * (cfg.seq_len + cfg.pred_len)
    header = _HEADER.pack(
        BANK_MAGIC,
        BANK_VERSION,
        n,
        L,
        cfg.seq_len,
        cfg.pred_len,
        cfg.steps_per_period,
        cfg.tolerance,
        cfg.gamma,
        cfg.beta,
        _SCALING_IDS[cfg.scaling],
        cfg.epsilon,
        cfg.mu,
        int(cfg.minmax),
        bank.sensor_id,
    )
    rec_dtype = np.dtype([
        ("entry_id", "<i8"),
        ("periodic_step", "<u4"),
        ("residuals", "<f8", (width,)),
    ])
    records = np.empty(n, dtype=rec_dtype)
    records["entry_id"] = bank.entry_ids
    records["periodic_step"] = bank.periodic_steps
    stacked = np.concatenate([bank.x_layers, bank.y_layers], axis=2)
    records["residuals"] = stacked.transpose(1, 0, 2).reshape(n, width)
    body = header + records.tobytes()
    checksum = struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    Path(path).write_bytes(body + checksum)


def load_bank(path: str | Path) -> MemoryBank:
    """Read a bank written by save_bank, validating structure and checksum."""
    path = Path(path)
    if not path.exists():
        raise BankFormatError(f"bank file not found: {path}")
    blob = path.read_bytes()
    if len(blob) < _HEADER.size + 4:
        raise BankFormatError(f"{path}: truncated bank file")
    stored = struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored:
        raise BankFormatError(f"{path}: checksum mismatch")
    (magic, version, n, L, seq_len, pred_len, period, tolerance,
     gamma, beta, scaling_id, epsilon, mu, minmax, sensor_id) = _HEADER.unpack(
        blob[: _HEADER.size]
    )
    if magic != BANK_MAGIC:
        raise BankFormatError(f"{path}: not a bank file (bad magic)")
    if version != BANK_VERSION:
        raise BankFormatError(
            f"{path}: unsupported bank version {version} (expected "
            f"{BANK_VERSION})"
        )
    if scaling_id not in _SCALING_BY_ID:
        raise BankFormatError(f"{path}: unknown scaling id {scaling_id}")
    width = L * (seq_len + pred_len)
    rec_dtype = np.dtype([
        ("entry_id", "<i8"),
        ("periodic_step", "<u4"),
        ("residuals", "<f8", (width,)),
    ])
    expected = _HEADER.size + n * rec_dtype.itemsize + 4
    if len(blob) != expected:
        raise BankFormatError(
            f"{path}: truncated bank file ({len(blob)} bytes, expected "
            f"{expected})"
        )
    records = np.frombuffer(blob, dtype=rec_dtype, count=n,
                            offset=_HEADER.size)
    stacked = records["residuals"].reshape(n, L, seq_len + pred_len)
    stacked = np.ascontiguousarray(stacked.transpose(1, 0, 2))
    config = ModelConfig(
        seq_len=seq_len,
        pred_len=pred_len,
        num_layers=L,
        tolerance=tolerance,
        steps_per_period=period,
        gamma=gamma,
        beta=beta,
        scaling=_SCALING_BY_ID[scaling_id],
        epsilon=epsilon,
        mu=mu,
        minmax=bool(minmax),
    )
    return MemoryBank(
        entry_ids=records["entry_id"].astype(np.int64),
        periodic_steps=records["periodic_step"].astype(np.int64),
        x_layers=np.ascontiguousarray(stacked[:, :, :seq_len]),
        y_layers=np.ascontiguousarray(stacked[:, :, seq_len:]),
        config=config,
        sensor_id=sensor_id,
    )
