# %% [markdown]
# The AVL-map benchmark on real threads.  Under CPython the interpreter
# lock serializes everything, so throughput here says little about
# hardware; the fairness column and the lack of lost updates are the point.

# %%
from cnalock.bench import BenchConfig, emit_report, run_kv_bench, run_raw_bench
from cnalock.topology import TopologyProvider

topo = TopologyProvider("mock", {i: i % 2 for i in range(8)})

# %%
reports = []
for kind in ("mcs", "cna", "cna-opt", "tas", "ticket", "word-mcs", "word-cna"):
    cfg = BenchConfig(lock=kind, threads=4, duration=0.5, topology=topo, seed=7)
    reports.append(run_kv_bench(cfg))
print(emit_report(reports, "csv"))

# %% raw mode: the critical section is a bare counter increment
r = run_raw_bench(BenchConfig(lock="cna", threads=8, ops_per_thread=5000, mode="raw", topology=topo))
print(r.counter, r.total_ops, r.per_thread)

# %% the same thing from a shell:
#   CNA_MOCK_TOPOLOGY=t0:0,t1:1,t2:0,t3:1 cnalock-bench --lock mcs,cna --threads 4 --duration 1 --format csv
