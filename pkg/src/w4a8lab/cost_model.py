"""Analytic cost model for pipelined GEMM with in-loop weight dequantization.

Per main-loop iteration of one thread block (block-level throughputs are
device throughputs divided by ``S * L``)::

    T_LD  = N_t * K_t / phi_BD(x)                   weight bytes only
    T_DQ  = alpha * N_t * K_t / phi_CUDA
    T_MMA = 2 * min(M_t, M) * N_t * K_t / phi_TC(y)

and for the whole GEMM at device level::

    T = ceil(M / M_t) * max(N*K / Phi_BD(x), alpha*N*K / Phi_CUDA + min(M_t, M) * 2*N*K / Phi_TC(y))

Bandwidth is given in bytes/s and converted to elements/s as ``bw * 8 / x``.
The epilogue is not costed.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

from .errors import ValidationError
from .gemm_ref import GemmShape, TileConfig

PROFILE_KEYS = ("mem_bw_bytes_per_s", "cuda_ops_per_s", "tc_int8_ops_per_s",
                "tc_fp16_ops_per_s", "num_sms", "max_blocks_per_sm")


class Regime(enum.Enum):
    MEMORY_BOUND = "MemoryBound"
    COMPUTE_BOUND = "ComputeBound"


@dataclass(frozen=True)
class HardwareProfile:
    name: str
    mem_bw_bytes_per_s: float
    cuda_ops_per_s: float
    tc_int8_ops_per_s: float
    tc_fp16_ops_per_s: float
    num_sms: int
    max_blocks_per_sm: int

    def __post_init__(self):
        for f in fields(self)[1:]:
            v = getattr(self, f.name)
            if not (math.isfinite(v) and v > 0):
                raise ValidationError(f"profile field {f.name} must be positive, got {v}")

    @property
    def blocks(self) -> int:
        return self.num_sms * self.max_blocks_per_sm

    def mem_elements_per_s(self, weight_bits: int) -> float:
        return self.mem_bw_bytes_per_s * 8 / weight_bits

    def tc_ops_per_s(self, act_bits: int) -> float:
        if act_bits == 8:
            return self.tc_int8_ops_per_s
        if act_bits == 16:
            return self.tc_fp16_ops_per_s
        raise ValidationError(f"activation bits must be 8 or 16, got {act_bits}")


def parse_profile(text: str, name: str = "profile") -> HardwareProfile:
    """Parse ``key = value`` lines; ``#`` starts a comment, ``name`` is optional."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (p.strip() for p in line.partition("="))
        if not sep:
            raise ValidationError(f"line {lineno}: expected key = value")
        if key != "name" and key not in PROFILE_KEYS:
            raise ValidationError(f"line {lineno}: unknown key {key!r}")
        values[key] = value
    missing = [k for k in PROFILE_KEYS if k not in values]
    if missing:
        raise ValidationError(f"profile missing keys: {', '.join(missing)}")
    try:
        return HardwareProfile(
            name=values.get("name", name),
            mem_bw_bytes_per_s=float(values["mem_bw_bytes_per_s"]),
            cuda_ops_per_s=float(values["cuda_ops_per_s"]),
            tc_int8_ops_per_s=float(values["tc_int8_ops_per_s"]),
            tc_fp16_ops_per_s=float(values["tc_fp16_ops_per_s"]),
            num_sms=int(values["num_sms"]),
            max_blocks_per_sm=int(values["max_blocks_per_sm"]),
        )
    except ValueError as exc:
        raise ValidationError(f"bad profile value: {exc}") from None


def load_profile(path) -> HardwareProfile:
    path = Path(path)
    return parse_profile(path.read_text(), name=path.stem)


def builtin_profile(name: str) -> HardwareProfile:
    """Load one of the profiles shipped in ``w4a8lab/profiles`` (e.g. ``"h100_sxm"``)."""
    res = resources.files("w4a8lab") / "profiles" / f"{name}.cfg"
    if not res.is_file():
        raise ValidationError(f"no built-in profile {name!r}")
    return parse_profile(res.read_text(), name=name)


@dataclass(frozen=True)
class CostQuery:
    shape: GemmShape
    tile: TileConfig
    weight_bits: int = 4
    act_bits: int = 8
    alpha: float = 0.0

    def __post_init__(self):
        if self.weight_bits not in (4, 8, 16):
            raise ValidationError(f"weight bits must be 4, 8 or 16, got {self.weight_bits}")
        if self.act_bits not in (8, 16):
            raise ValidationError(f"activation bits must be 8 or 16, got {self.act_bits}")
        if not (math.isfinite(self.alpha) and self.alpha >= 0):
            raise ValidationError(f"alpha must be non-negative, got {self.alpha}")

    @property
    def batch(self) -> int:
        return self.shape.m

    @property
    def effective_m(self) -> int:
        return min(self.tile.m_t, self.shape.m)

    def with_batch(self, m: int) -> "CostQuery":
        return CostQuery(GemmShape(m, self.shape.n, self.shape.k), self.tile,
                         self.weight_bits, self.act_bits, self.alpha)


@dataclass(frozen=True)
class CostBreakdown:
    """Device-level times for one row band of ``M_t`` plus the total."""

    batch: int
    t_ld: float
    t_dq: float
    t_mma: float
    row_bands: int
    total: float
    regime: Regime

    @property
    def binding_term(self) -> str:
        return "load" if self.regime is Regime.MEMORY_BOUND else "compute"

    def as_row(self) -> dict:
        return {"M": self.batch, "t_ld": self.t_ld, "t_dq": self.t_dq, "t_mma": self.t_mma,
                "total": self.total, "regime": self.regime.value}


def iter_load_time(q: CostQuery, p: HardwareProfile) -> float:
    phi = p.mem_elements_per_s(q.weight_bits) / p.blocks
    return q.tile.n_t * q.tile.k_t / phi


def iter_compute_time(q: CostQuery, p: HardwareProfile) -> tuple[float, float]:
    phi_cuda = p.cuda_ops_per_s / p.blocks
    phi_tc = p.tc_ops_per_s(q.act_bits) / p.blocks
    nk = q.tile.n_t * q.tile.k_t
    return q.alpha * nk / phi_cuda, 2 * q.effective_m * nk / phi_tc


def tile_time(q: CostQuery, p: HardwareProfile) -> float:
    """Single output tile with pipeline fill: ``T_LD + T_COMP + (k-1) max(T_LD, T_COMP)``."""
    t_ld = iter_load_time(q, p)
    t_comp = sum(iter_compute_time(q, p))
    k_iters = math.ceil(q.shape.k / q.tile.k_t)
    return t_ld + t_comp + (k_iters - 1) * max(t_ld, t_comp)


def total_time(q: CostQuery, p: HardwareProfile) -> CostBreakdown:
    nk = q.shape.n * q.shape.k
    t_ld = nk / p.mem_elements_per_s(q.weight_bits)
    t_dq = q.alpha * nk / p.cuda_ops_per_s
    t_mma = q.effective_m * 2 * nk / p.tc_ops_per_s(q.act_bits)
    bands = math.ceil(q.shape.m / q.tile.m_t)
    regime = Regime.MEMORY_BOUND if t_ld >= t_dq + t_mma else Regime.COMPUTE_BOUND
    return CostBreakdown(q.shape.m, t_ld, t_dq, t_mma, bands, bands * max(t_ld, t_dq + t_mma), regime)


def transition_batch(p: HardwareProfile, weight_bits: int, act_bits: int = 8) -> float:
    """Batch size where weight loading and MMA take equal time."""
    return p.tc_ops_per_s(act_bits) / (2 * p.mem_elements_per_s(weight_bits))


def alpha_threshold(p: HardwareProfile, weight_bits: int = 4, batch: int | None = None,
                    m_t: int | None = None, act_bits: int = 8) -> float:
    """Largest per-element dequantization cost that still overlaps.

    Without ``batch`` the memory-bound budget ``T_DQ <= T_LD`` is returned;
    with it, the compute-bound budget ``T_DQ <= T_MMA`` at that batch
    (``min(m_t, batch)`` rows when ``m_t`` is given).
    """
    if batch is None:
        return p.cuda_ops_per_s / p.mem_elements_per_s(weight_bits)
    m_eff = batch if m_t is None else min(m_t, batch)
    return p.cuda_ops_per_s * 2 * m_eff / p.tc_ops_per_s(act_bits)


def sweep(q: CostQuery, batches, p: HardwareProfile) -> list[CostBreakdown]:
    batches = list(batches)
    if not batches:
        raise ValidationError("batch range is empty")
    return [total_time(q.with_batch(m), p) for m in batches]


CSV_COLUMNS = ("M", "t_ld", "t_dq", "t_mma", "total", "regime")


def sweep_to_csv(rows: list[CostBreakdown]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.as_row().items()})
    return buf.getvalue()


def read_sweep_csv(text: str) -> list[dict]:
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        out.append({"M": int(row["M"]), "t_ld": float(row["t_ld"]), "t_dq": float(row["t_dq"]),
                    "t_mma": float(row["t_mma"]), "total": float(row["total"]),
                    "regime": Regime(row["regime"])})
    return out


def parse_range(text: str) -> range:
    """``"lo..hi"`` (inclusive) or ``"lo..hi:step"``."""
    body, _, step = text.partition(":")
    lo, sep, hi = body.partition("..")
    try:
        lo_i = int(lo)
        hi_i = int(hi) if sep else lo_i
        step_i = int(step) if step else 1
    except ValueError:
        raise ValidationError(f"batch range must look like lo..hi, got {text!r}") from None
    if lo_i < 1 or hi_i < lo_i or step_i < 1:
        raise ValidationError(f"invalid batch range {text!r}")
    return range(lo_i, hi_i + 1, step_i)
