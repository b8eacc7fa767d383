# %% [markdown]
# Exhaustive interleaving exploration for three threads, and the
# sequential oracle that every interleaving is checked against.

# %%
import collections

from cnalock.sim import SimConfig, arrival_timeline, enumerate_schedules, oracle_grant_order

config = SimConfig(sockets=(0, 1, 0), lock="cna", draws=(1,), mode="exhaustive")

# %%
orders = collections.Counter()
for trace in enumerate_schedules(config):
    expect = oracle_grant_order(arrival_timeline(trace), draws=config.draws)
    assert trace.grant_order == expect, (trace.schedule, trace.grant_order, expect)
    orders[tuple(trace.grant_order)] += 1
print(sum(orders.values()), "schedules")
for order, n in orders.most_common():
    print(order, n)

# %% [markdown]
# Thread 1 (socket 1) is overtaken only in schedules where it sat between
# the two socket-0 threads when the first holder released.

# %% a schedule is just a list of thread indices and can be saved and replayed
from cnalock.sim import format_schedule, parse_schedule, run_schedule

trace = next(iter(enumerate_schedules(config)))
text = format_schedule(trace.schedule)
print(text.strip())
assert run_schedule(config, parse_schedule(text)).to_jsonl() == trace.to_jsonl()
