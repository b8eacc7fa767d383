"""Lock contention benchmarks and the ``cnalock-bench`` command line.

``kv``     threads apply a lookup/insert/remove mix to one AVL map guarded by
           the lock under test, with optional external work between ops.
``raw``    threads increment a shared counter under the lock.
``model``  deterministic saturated contention on the two-queue model
           (cna, cna-opt, mcs only); reproducible fairness numbers.

Absolute throughput is machine dependent (and GIL bound in CPython); the
fairness factor and the mutual-exclusion checks are the portable outputs.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import random
import sys
import threading
import time
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

from . import LOCK_KINDS, make_lock
from .avl import AvlMap
from .cna import FairnessPolicy, XorShift32
from .sim import fairness_factor, saturated_contention
from .topology import TopologyProvider, bind_thread

REPORT_FIELDS = ("lock", "threads", "duration_s", "total_ops", "ops_per_us", "fairness", "seed")
MODES = ("kv", "raw", "model")


class ConfigError(ValueError):
    pass


@dataclass
class BenchConfig:
    lock: str = "cna"
    threads: int = 4
    duration: float = 10.0
    key_range: int = 1024
    update_pct: float = 20.0
    external_work: int = 0
    seed: int = 0
    warmup: float = 0.0
    output_format: str = "json"
    pin: bool = False
    mode: str = "kv"
    ops_per_thread: Optional[int] = None
    handovers: int = 1 << 20
    policy: FairnessPolicy = field(default_factory=FairnessPolicy)
    topology: Optional[TopologyProvider] = None

    def validate(self) -> None:
        if self.lock not in LOCK_KINDS:
            raise ConfigError(f"unknown lock {self.lock!r}; choose from {', '.join(LOCK_KINDS)}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.ops_per_thread is None and not self.duration > 0:
            raise ConfigError("duration must be > 0")
        if self.ops_per_thread is not None and self.ops_per_thread < 1:
            raise ConfigError("ops per thread must be >= 1")
        if self.key_range < 2:
            raise ConfigError("key range must be >= 2")
        if not 0 <= self.update_pct <= 100:
            raise ConfigError("update percentage must be within [0, 100]")
        if self.external_work < 0 or self.warmup < 0:
            raise ConfigError("external work and warmup must be >= 0")
        if self.output_format not in ("json", "csv"):
            raise ConfigError("format must be json or csv")
        if self.mode == "model" and self.lock not in ("cna", "cna-opt", "mcs"):
            raise ConfigError("model mode supports cna, cna-opt and mcs")
        if self.mode == "model" and self.handovers < 1:
            raise ConfigError("handovers must be >= 1")


@dataclass
class BenchReport:
    lock: str
    threads: int
    duration_s: float
    total_ops: int
    ops_per_us: float
    per_thread: List[int]
    fairness: float
    seed: int
    mode: str = "kv"
    fairness_defined: bool = True
    counter: Optional[int] = None
    extra: Dict[str, object] = field(default_factory=dict)

    def row(self) -> Dict[str, object]:
        return {k: getattr(self, k) for k in REPORT_FIELDS}


def _fairness(counts: Sequence[int]) -> tuple[float, bool]:
    if len(counts) < 2 or sum(counts) == 0:
        return 1.0, False
    return fairness_factor(counts), True


def _sockets_for(config: BenchConfig) -> TopologyProvider:
    if config.topology is not None:
        return config.topology
    return TopologyProvider.from_env()


def _external_work(rng: XorShift32, iterations: int) -> int:
    acc = 0
    for _ in range(iterations):
        acc ^= rng.next()
    return acc


def _pin(index: int) -> None:
    cpus = sorted(os.sched_getaffinity(0))
    os.sched_setaffinity(0, {cpus[index % len(cpus)]})


def prefill(tree: AvlMap, key_range: int, seed: int) -> None:
    """Insert a random half of the key range."""
    rng = random.Random(seed)
    for key in rng.sample(range(key_range), key_range // 2):
        tree.insert(key, key)


def _run_threads(config: BenchConfig, body) -> tuple[List[int], float]:
    """Start ``config.threads`` workers; ``body(index)`` returns a one-op callable.

    Returns per-thread counts of measured operations and the measured wall time.
    """
    n = config.threads
    counts = [0] * n
    phase = [0]  # 0 warmup, 1 measuring, 2 stop
    start = threading.Barrier(n + 1)
    errors: List[BaseException] = []

    def worker(index: int) -> None:
        try:
            bind_thread(index)
            if config.pin:
                _pin(index)
            step = body(index)
            start.wait()
            if config.ops_per_thread is not None:
                for _ in range(config.ops_per_thread):
                    step()
                counts[index] = config.ops_per_thread
                return
            done = 0
            while phase[0] == 0:
                step()
            while phase[0] == 1:
                step()
                done += 1
            counts[index] = done
        except BaseException as exc:  # surfaced after join
            errors.append(exc)
            phase[0] = 2

    workers = [threading.Thread(target=worker, args=(i,), name=f"bench-{i}") for i in range(n)]
    for w in workers:
        w.start()
    start.wait()
    if config.ops_per_thread is not None:
        t0 = time.perf_counter()
        for w in workers:
            w.join()
        elapsed = time.perf_counter() - t0
    else:
        if config.warmup:
            time.sleep(config.warmup)
        t0 = time.perf_counter()
        phase[0] = 1
        time.sleep(config.duration)
        phase[0] = 2
        elapsed = time.perf_counter() - t0
        for w in workers:
            w.join()
    if errors:
        raise errors[0]
    return counts, elapsed


def _report(config: BenchConfig, counts: List[int], elapsed: float, **kw) -> BenchReport:
    total = sum(counts)
    fairness, defined = _fairness(counts)
    return BenchReport(
        lock=config.lock,
        threads=config.threads,
        duration_s=elapsed,
        total_ops=total,
        ops_per_us=total / (elapsed * 1e6) if elapsed > 0 else 0.0,
        per_thread=counts,
        fairness=fairness,
        seed=config.seed,
        mode=config.mode,
        fairness_defined=defined,
        **kw,
    )


def run_kv_bench(config: BenchConfig, tree: Optional[AvlMap] = None) -> BenchReport:
    """Key-value map benchmark: one AVL map, one lock, uniform keys and ops."""
    config.validate()
    lock = make_lock(config.lock, policy=config.policy, topology=_sockets_for(config))
    if tree is None:
        tree = AvlMap()
        prefill(tree, config.key_range, config.seed)
    insert_cut = config.update_pct / 2
    update_cut = config.update_pct
    key_range = config.key_range
    work = config.external_work
    results = {"insert": [0, 0], "remove": [0, 0], "lookup": [0, 0]}
    tallies = [dict((k, [0, 0]) for k in results) for _ in range(config.threads)]

    def body(index: int):
        ctx = lock.new_context(index)
        rng = random.Random(config.seed * 7919 + index)
        work_rng = XorShift32(config.seed ^ index)
        mine = tallies[index]

        def step() -> None:
            r = rng.random() * 100
            key = rng.randrange(key_range)
            lock.acquire(ctx)
            if r < insert_cut:
                op, ok = "insert", tree.insert(key, key)
            elif r < update_cut:
                op, ok = "remove", tree.remove(key)
            else:
                op, ok = "lookup", tree.lookup(key) is not None
            lock.release(ctx)
            mine[op][0 if ok else 1] += 1
            if work:
                _external_work(work_rng, work)

        return step

    counts, elapsed = _run_threads(config, body)
    for t in tallies:
        for op, (hit, miss) in t.items():
            results[op][0] += hit
            results[op][1] += miss
    return _report(config, counts, elapsed, extra={"ops": results, "final_size": len(tree)})


def run_raw_bench(config: BenchConfig) -> BenchReport:
    """Acquire/release loop whose critical section increments a shared counter."""
    config.validate()
    lock = make_lock(config.lock, policy=config.policy, topology=_sockets_for(config))
    shared = [0]
    work = config.external_work

    def body(index: int):
        ctx = lock.new_context(index)
        work_rng = XorShift32(config.seed ^ index)

        def step() -> None:
            lock.acquire(ctx)
            shared[0] += 1
            lock.release(ctx)
            if work:
                _external_work(work_rng, work)

        return step

    counts, elapsed = _run_threads(config, body)
    report = _report(config, counts, elapsed, counter=shared[0])
    if config.ops_per_thread is not None and shared[0] != report.total_ops:
        raise AssertionError(f"lost increments: counter {shared[0]} != {report.total_ops} ops")
    return report


def run_model_bench(config: BenchConfig) -> BenchReport:
    """Saturated equal-demand contention on the deterministic two-queue model."""
    config.validate()
    topo = _sockets_for(config)
    if topo.mode == "mock":
        sockets = [topo.current_numa_node(i) for i in range(config.threads)]
    else:
        sockets = [0] * config.threads
    t0 = time.perf_counter()
    result = saturated_contention(sockets, config.handovers, config.lock, config.policy, config.seed)
    elapsed = time.perf_counter() - t0
    return _report(
        config,
        result.counts,
        elapsed,
        extra={"sockets": sockets, "locality": result.locality, "flushes": result.flushes},
    )


def run_bench(config: BenchConfig) -> BenchReport:
    return {"kv": run_kv_bench, "raw": run_raw_bench, "model": run_model_bench}[config.mode](config)


def emit_report(report, fmt: str = "json") -> str:
    """Render one report (or a list of them) as JSON or CSV text."""
    reports = report if isinstance(report, (list, tuple)) else [report]
    if fmt == "json":
        objs = []
        for r in reports:
            obj = r.row()
            obj.update(per_thread=r.per_thread, mode=r.mode, fairness_defined=r.fairness_defined)
            if r.counter is not None:
                obj["counter"] = r.counter
            if r.extra:
                obj["extra"] = r.extra
            objs.append(obj)
        return json.dumps(objs[0] if len(objs) == 1 and not isinstance(report, (list, tuple)) else objs, sort_keys=True)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=REPORT_FIELDS, lineterminator="\n")
        writer.writeheader()
        for r in reports:
            writer.writerow(r.row())
        return buf.getvalue()
    raise ValueError(f"unknown format {fmt!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cnalock-bench", description=__doc__.split("\n\n")[0])
    p.add_argument("--lock", default="cna", help=f"comma-separated list from: {', '.join(LOCK_KINDS)}")
    p.add_argument("--threads", type=int, default=4)
    p.add_argument("--duration", type=float, default=10.0, help="measured seconds")
    p.add_argument("--key-range", type=int, default=1024)
    p.add_argument("--update-pct", type=float, default=20.0)
    p.add_argument("--external-work", type=int, default=0, help="PRNG iterations between operations")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--warmup", type=float, default=0.0)
    p.add_argument("--format", dest="output_format", choices=("json", "csv"), default="json")
    p.add_argument("--pin", action="store_true", help="pin worker i to CPU i (mod available)")
    p.add_argument("--mode", choices=MODES, default="kv")
    p.add_argument("--ops", dest="ops_per_thread", type=int, default=None,
                   help="fixed operations per thread instead of a timed run")
    p.add_argument("--handovers", type=int, default=1 << 20, help="model mode: handovers to simulate")
    return p


def main(argv: Optional[Sequence[str]] = None, environ: Optional[Mapping[str, str]] = None) -> int:
    args = build_parser().parse_args(argv)
    env = os.environ if environ is None else environ
    try:
        policy = FairnessPolicy.from_env(env)
        topology = TopologyProvider.from_env(env)
        reports = []
        for kind in [k.strip() for k in args.lock.split(",") if k.strip()]:
            opts = vars(args).copy()
            opts["lock"] = kind
            config = BenchConfig(policy=policy, topology=topology, **opts)
            config.validate()
            reports.append(config)
        if not reports:
            raise ConfigError("no lock selected")
    except ValueError as exc:
        print(f"cnalock-bench: error: {exc}", file=sys.stderr)
        return 2
    results = [run_bench(c) for c in reports]
    out = emit_report(results if len(results) > 1 else results[0], args.output_format)
    sys.stdout.write(out if out.endswith("\n") else out + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
