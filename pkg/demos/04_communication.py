"""
Counting bytes
==============

Every message crosses a channel that serialises it, so traffic is measured
rather than estimated. The closed-form table compares three strategies for
a 307-node deployment.
"""

from dataclasses import replace

from fedasta.config import DESK_TRAIN
from fedasta.data import synth_two_cluster
from fedasta.protocol import CommSetting, Federation, comm_setting_for, comm_table

print(comm_table(CommSetting()))

ds = synth_two_cluster(n_per_cluster=4, T=600, periods=2, seed=0)
cfg = replace(DESK_TRAIN, rounds=4, hidden=8, layers=1, k=2, periods=2, batches_per_round=20)
for strategy in ("joint", "two-stage"):
    fed = Federation(ds, replace(cfg, strategy=strategy))
    reps = fed.train()
    total = sum(r.up_bytes + r.down_bytes for r in reps)
    print(f"{strategy:<10} stages {[r.stage for r in reps]} total {total / 1024:.1f} KiB")

# the same formulas, fed with this configuration's sizes
print(comm_table(comm_setting_for(fed)))
