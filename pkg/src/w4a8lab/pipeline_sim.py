"""Discrete-event simulation of two warp-specialized GEMM main loops.

Three hardware units are modelled as unit-capacity FIFO servers: the copy
engine (weight loads), the scalar cores (dequantization) and the tensor
cores (MMA).  Shared-memory stages are a counting semaphore.

ExCP
    Load WG -> Dequant WG -> MMA WG.  The Dequant WG also writes its result
    back to shared memory (``roundtrip_cost`` on the scalar unit) and pays
    ``sync_cost`` at a software barrier before the MMA WG may start.  A stage
    is freed once the MMA has consumed it.

ImFP
    One Load WG splits each tile into ``tasks_per_tile`` tasks on a shared
    FIFO; ``num_compute_wgs`` Compute WGs each take a task, dequantize it and
    immediately run its MMA.  No write-back, no barrier.  A stage is freed
    once every task of its tile has been dequantized into registers.

Processes are plain generators yielding :class:`_Timeout` or the request
objects of :class:`_Resource` / :class:`_Store`.
"""

from __future__ import annotations

import csv
import heapq
import io
import math
from collections import defaultdict, deque
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .errors import ValidationError

UNITS = ("copy", "scalar", "tensor")
WAIT_KINDS = ("barrier", "buffer", "unit")


# --- event engine -----------------------------------------------------------

class _Env:
    def __init__(self):
        self.now = 0.0
        self._queue = []
        self._seq = 0

    def schedule(self, delay, fn, value=None):
        heapq.heappush(self._queue, (self.now + delay, self._seq, fn, value))
        self._seq += 1

    def process(self, gen):
        self.schedule(0.0, lambda v: self._step(gen, v))

    def _step(self, gen, value):
        try:
            cmd = gen.send(value)
        except StopIteration:
            return
        cmd.bind(self, lambda v=None: self._step(gen, v))

    def run(self):
        while self._queue:
            t, _, fn, value = heapq.heappop(self._queue)
            self.now = t
            fn(value)


class _Timeout:
    def __init__(self, delay):
        self.delay = delay

    def bind(self, env, resume):
        env.schedule(self.delay, resume)


class _Resource:
    """Counting semaphore with FIFO hand-off."""

    def __init__(self, env, capacity=1):
        self.env = env
        self.free = capacity
        self.waiters = deque()

    def acquire(self):
        return _Request(self)

    def release(self):
        if self.waiters:
            self.env.schedule(0.0, self.waiters.popleft())
        else:
            self.free += 1


class _Request:
    def __init__(self, res):
        self.res = res

    def bind(self, env, resume):
        if self.res.free > 0 and not self.res.waiters:
            self.res.free -= 1
            env.schedule(0.0, resume)
        else:
            self.res.waiters.append(resume)


class _Store:
    """Unbounded FIFO queue; getters are served in arrival order."""

    def __init__(self, env):
        self.env = env
        self.items = deque()
        self.getters = deque()

    def put(self, item):
        if self.getters:
            self.env.schedule(0.0, self.getters.popleft(), item)
        else:
            self.items.append(item)

    def get(self):
        return _Get(self)


class _Get:
    def __init__(self, store):
        self.store = store

    def bind(self, env, resume):
        if self.store.items and not self.store.getters:
            env.schedule(0.0, resume, self.store.items.popleft())
        else:
            self.store.getters.append(resume)


# --- configuration and report ----------------------------------------------

@dataclass(frozen=True)
class SimConfig:
    k_iters: int
    t_ld: float
    t_dq: float
    t_mma: float
    num_compute_wgs: int = 2
    smem_stages: int = 3
    sync_cost: float = 0.0
    roundtrip_cost: float = 0.0
    tasks_per_tile: int = 2
    seed: int = 0
    jitter: float = 0.0

    def __post_init__(self):
        for name in ("t_ld", "t_dq", "t_mma", "sync_cost", "roundtrip_cost"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValidationError(f"{name} must be a non-negative duration, got {v}")
        if self.k_iters < 1:
            raise ValidationError("k_iters must be at least 1")
        if self.smem_stages < 1:
            raise ValidationError("smem_stages must be at least 1")
        if self.num_compute_wgs < 1 or self.tasks_per_tile < 1:
            raise ValidationError("num_compute_wgs and tasks_per_tile must be at least 1")
        if not 0 <= self.jitter < 1:
            raise ValidationError("jitter must lie in [0, 1)")

    @classmethod
    def from_cost(cls, query, profile, k_iters: int | None = None, **kw) -> "SimConfig":
        """Stage durations from the cost model's per-iteration times."""
        from .cost_model import iter_compute_time, iter_load_time
        t_dq, t_mma = iter_compute_time(query, profile)
        if k_iters is None:
            k_iters = math.ceil(query.shape.k / query.tile.k_t)
        return cls(k_iters=k_iters, t_ld=iter_load_time(query, profile), t_dq=t_dq, t_mma=t_mma, **kw)

    @classmethod
    def parse(cls, text: str) -> "SimConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = (p.strip() for p in line.partition("="))
            if not sep or key not in kinds:
                raise ValidationError(f"line {lineno}: unknown or malformed entry {raw!r}")
            try:
                values[key] = int(value) if kinds[key] == "int" else float(value)
            except ValueError:
                raise ValidationError(f"line {lineno}: bad value for {key}") from None
        missing = [k for k in ("k_iters", "t_ld", "t_dq", "t_mma") if k not in values]
        if missing:
            raise ValidationError(f"config missing keys: {', '.join(missing)}")
        return cls(**values)


@dataclass
class SimReport:
    pipeline: str
    makespan: float
    busy: dict
    trace: list
    timelines: dict
    waits: dict
    max_stages_occupied: int

    @property
    def bubble(self) -> dict:
        return {u: self.makespan - self.busy[u] for u in UNITS}

    @property
    def utilization(self) -> dict:
        if self.makespan == 0:
            return {u: 0.0 for u in UNITS}
        return {u: self.busy[u] / self.makespan for u in UNITS}

    def wait_totals(self) -> dict:
        out = dict.fromkeys(WAIT_KINDS, 0.0)
        for per_wg in self.waits.values():
            for kind, v in per_wg.items():
                out[kind] += v
        return out

    def as_dict(self, include_trace: bool = False) -> dict:
        d = {"pipeline": self.pipeline, "makespan": self.makespan, "busy": self.busy,
             "bubble": self.bubble, "utilization": self.utilization, "waits": self.waits,
             "wait_totals": self.wait_totals(), "max_stages_occupied": self.max_stages_occupied,
             "timelines": {wg: [list(t) for t in tl] for wg, tl in self.timelines.items()}}
        if include_trace:
            d["trace"] = [list(t) for t in self.trace]
        return d

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "unit", "wg", "event"])
        w.writerows(self.trace)
        return buf.getvalue()


class _Sim:
    """Shared bookkeeping for both pipelines."""

    def __init__(self, c: SimConfig):
        self.c = c
        self.env = _Env()
        self.units = {u: _Resource(self.env) for u in UNITS}
        self.stages = _Resource(self.env, c.smem_stages)
        self.busy = dict.fromkeys(UNITS, 0.0)
        self.trace = []
        self.timelines = defaultdict(list)
        self.waits = defaultdict(lambda: dict.fromkeys(WAIT_KINDS, 0.0))
        self.occupied = 0
        self.max_occupied = 0
        self.rng = np.random.default_rng(c.seed)

    def dur(self, base):
        if self.c.jitter and base > 0:
            return base * float(self.rng.uniform(1 - self.c.jitter, 1 + self.c.jitter))
        return base

    def wait(self, wg, kind, t0):
        if self.env.now > t0:
            self.waits[wg][kind] += self.env.now - t0
            self.timelines[wg].append((t0, self.env.now, f"wait_{kind}"))

    def use(self, wg, unit, duration, label):
        t0 = self.env.now
        yield self.units[unit].acquire()
        self.wait(wg, "unit", t0)
        start = self.env.now
        self.trace.append((start, unit, wg, f"start {label}"))
        yield _Timeout(duration)
        self.units[unit].release()
        self.busy[unit] += duration
        self.trace.append((self.env.now, unit, wg, f"end {label}"))
        self.timelines[wg].append((start, self.env.now, label))

    def take_stage(self, wg):
        t0 = self.env.now
        yield self.stages.acquire()
        self.wait(wg, "buffer", t0)
        self.occupied += 1
        self.max_occupied = max(self.max_occupied, self.occupied)

    def free_stage(self):
        self.occupied -= 1
        self.stages.release()

    def report(self, name) -> SimReport:
        self.env.run()
        makespan = self.env.now
        self.trace.sort(key=lambda r: (r[0], UNITS.index(r[1]), r[2]))
        return SimReport(name, makespan, dict(self.busy), self.trace, dict(self.timelines),
                         {wg: dict(v) for wg, v in self.waits.items()}, self.max_occupied)


def simulate_excp(c: SimConfig) -> SimReport:
    sim = _Sim(c)
    env = sim.env
    loaded, ready = _Store(env), _Store(env)

    def load_wg():
        for i in range(c.k_iters):
            yield from sim.take_stage("load")
            yield from sim.use("load", "copy", sim.dur(c.t_ld), f"load {i}")
            loaded.put(i)

    def dequant_wg():
        for _ in range(c.k_iters):
            t0 = env.now
            i = yield loaded.get()
            sim.wait("dequant", "buffer", t0)
            yield from sim.use("dequant", "scalar", sim.dur(c.t_dq), f"dequant {i}")
            if c.roundtrip_cost:
                yield from sim.use("dequant", "scalar", sim.dur(c.roundtrip_cost), f"writeback {i}")
            if c.sync_cost:
                t0 = env.now
                yield _Timeout(sim.dur(c.sync_cost))
                sim.waits["dequant"]["barrier"] += env.now - t0
                sim.timelines["dequant"].append((t0, env.now, f"barrier {i}"))
            ready.put(i)

    def mma_wg():
        for _ in range(c.k_iters):
            t0 = env.now
            i = yield ready.get()
            sim.wait("mma", "barrier", t0)
            yield from sim.use("mma", "tensor", sim.dur(c.t_mma), f"mma {i}")
            sim.free_stage()

    for proc in (load_wg, dequant_wg, mma_wg):
        env.process(proc())
    return sim.report("excp")


def simulate_imfp(c: SimConfig) -> SimReport:
    sim = _Sim(c)
    env = sim.env
    tasks = _Store(env)
    dequantized = defaultdict(int)
    n_tasks = c.tasks_per_tile

    def load_wg():
        for i in range(c.k_iters):
            yield from sim.take_stage("load")
            yield from sim.use("load", "copy", sim.dur(c.t_ld), f"load {i}")
            for j in range(n_tasks):
                tasks.put((i, j))
        for _ in range(c.num_compute_wgs):
            tasks.put(None)

    def compute_wg(w):
        name = f"compute{w}"
        while True:
            t0 = env.now
            task = yield tasks.get()
            if task is None:
                return
            sim.wait(name, "buffer", t0)
            i, j = task
            yield from sim.use(name, "scalar", sim.dur(c.t_dq / n_tasks), f"dequant {i}.{j}")
            dequantized[i] += 1
            if dequantized[i] == n_tasks:
                sim.free_stage()
            yield from sim.use(name, "tensor", sim.dur(c.t_mma / n_tasks), f"mma {i}.{j}")

    env.process(load_wg())
    for w in range(c.num_compute_wgs):
        env.process(compute_wg(w))
    return sim.report("imfp")


def ideal_makespan(c: SimConfig) -> float:
    """Three-stage pipeline with fill: ``t_ld + t_comp + (k-1) max(t_ld, t_comp)``.

    ``t_comp`` is ``t_dq + t_mma``, matching the single-tile cost formula.
    """
    t_comp = c.t_dq + c.t_mma
    return c.t_ld + t_comp + (c.k_iters - 1) * max(c.t_ld, t_comp)


def compare(c: SimConfig) -> dict:
    """Run both pipelines on one config and summarize the difference."""
    ex, im = simulate_excp(c), simulate_imfp(c)
    return {
        "config": asdict(c),
        "makespan": {"excp": ex.makespan, "imfp": im.makespan},
        "imfp_over_excp": im.makespan / ex.makespan if ex.makespan else 1.0,
        "speedup": ex.makespan / im.makespan if im.makespan else 1.0,
        "utilization": {"excp": ex.utilization, "imfp": im.utilization,
                        "delta": {u: im.utilization[u] - ex.utilization[u] for u in UNITS}},
        "bubble": {"excp": ex.bubble, "imfp": im.bubble},
        "wait_attribution": {"excp": ex.wait_totals(), "imfp": im.wait_totals()},
    }


def random_config(rng: np.random.Generator, **overrides) -> SimConfig:
    """A random config with positive barrier or write-back cost."""
    sync = float(rng.uniform(0, 0.5)) if rng.random() < 0.7 else 0.0
    rt = float(rng.uniform(0, 0.5)) if (sync == 0 or rng.random() < 0.5) else 0.0
    if sync == 0 and rt == 0:
        rt = float(rng.uniform(0.01, 0.5))
    c = SimConfig(
        k_iters=int(rng.integers(1, 41)),
        t_ld=float(rng.uniform(0, 2)), t_dq=float(rng.uniform(0, 2)), t_mma=float(rng.uniform(0, 2)),
        num_compute_wgs=int(rng.integers(2, 5)), smem_stages=int(rng.integers(1, 5)),
        sync_cost=sync, roundtrip_cost=rt, tasks_per_tile=int(rng.choice([1, 2, 4])),
    )
    return replace(c, **overrides) if overrides else c
