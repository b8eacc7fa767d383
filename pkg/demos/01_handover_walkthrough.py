# %% [markdown]
# Stepping seven threads on two mock sockets through the CNA handover
# discipline, one milestone at a time.  Threads are numbered 0..6 here.

# %%
from cnalock.sim import SimConfig, Simulation, intra_socket_handover_ratio

sockets = (0, 1, 1, 0, 0, 1, 1)
config = SimConfig(sockets=sockets, acquisitions=(2, 1, 1, 1, 1, 1, 1), lock="cna", draws=(1,))
sim = Simulation(config)


def queues():
    """Main queue after the holder, and the secondary queue it carries."""
    holder = sim.occupant
    if holder is None:
        return "lock free"
    me = sim.contexts[holder]
    main, node = [], me.next
    while node is not None:
        main.append(node.owner)
        node = node.next
    sec = []
    if me.spin > 1:
        node = sim.lock.registry[me.spin]
        while node is not None:
            sec.append(node.owner)
            node = node.next
    return f"holder {holder} (socket {sockets[holder]})  main {main}  secondary {sec}"


# %%
sim.run_until(0, "grant")
for t in range(1, 6):
    sim.run_until(t, "link")
print(queues())

# %% thread 0 releases: 1 and 2 are on the other socket and get parked
sim.run_until(0, "grant_store")
sim.run_until(3, "grant")
print(queues())

# %% a same-socket successor just inherits the secondary queue
sim.run_until(3, "grant_store")
sim.run_until(4, "grant")
print(queues())

# %% thread 0 comes back, thread 6 shows up
sim.run_until(0, "link")
sim.run_until(6, "link")
print(queues())

# %% 5 is skipped in favour of 0
sim.run_until(4, "grant_store")
sim.run_until(0, "grant")
print(queues())

# %% nobody left on socket 0: the secondary queue is spliced back in front
while not sim.finished:
    sim.step(sim.enabled()[0])
print("grant order", sim.trace.grant_order)
print("socket-local handovers", intra_socket_handover_ratio(sim.trace))

# %%
for line in sim.trace.to_jsonl(public_only=True).splitlines()[:12]:
    print(line)
