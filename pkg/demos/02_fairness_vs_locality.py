# %% [markdown]
# How the fairness threshold trades locality for fairness.  Eight
# always-hungry threads, alternating sockets, run on the sequential
# two-queue model (no wall-clock noise, so the numbers are reproducible).

# %%
from cnalock import FairnessPolicy
from cnalock.sim import saturated_contention

sockets = [0, 1] * 4
handovers = 1 << 20

# %%
base = saturated_contention(sockets, handovers, "mcs")
print(f"{'mcs':>10}  fairness {base.fairness:.3f}  locality {base.locality:.3f}")

# %% smaller thresholds flush the secondary queue more often
for threshold in (0x0, 0xF, 0xFF, 0xFFF, 0xFFFF):
    r = saturated_contention(sockets, handovers, "cna", FairnessPolicy(threshold=threshold), seed=1)
    print(f"{threshold:#10x}  fairness {r.fairness:.3f}  locality {r.locality:.4f}  flushes {r.flushes}")

# %% with the default threshold, longer runs average more flush epochs
for k in (16, 20, 22):
    r = saturated_contention(sockets, 1 << k, "cna", seed=1)
    print(f"2**{k} handovers: fairness {r.fairness:.3f}")
