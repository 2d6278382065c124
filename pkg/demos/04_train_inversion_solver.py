"""Train the dual-branch inversion solver with the staged regime.

A smaller-than-default recipe so the demo finishes in about a minute;
the full desk-scale recipe lives in demos/05_compare_methods.py and the
acceptance suite.

Run:  python3 demos/04_train_inversion_solver.py
"""

import numpy as np

from invlab import (DatasetSpec, RandomSource, SolverConfig, StageSchedule,
                    build_pseudo_dataset, build_solver, generate, make_schedule,
                    train_base, train_solver)

seed = 7
schedule = make_schedule(20, "linear")
spec = DatasetSpec(kind="gaussian_mixture_2d", n_train=400, n_test=64,
                   n_classes=3, seed=seed)
train, test = generate(spec)

print("training backbone ...")
model = train_base(train, schedule, "class", epochs=30,
                   rng=RandomSource(seed, stream=11), hidden=96)

solver = build_solver(SolverConfig(latent_dim=2), RandomSource(seed).split(1),
                      schedule)

# Held-out self-supervision gap before training: how far the solver's noise
# is from the backbone's own answer one level up.
def heldout_gap():
    pseudo = build_pseudo_dataset(model, solver, test, 0.5, 0.5, 0.5, schedule)
    return float(np.mean((pseudo.eps_star - pseudo.eps_bar) ** 2))

print(f"held-out self gap before: {heldout_gap():.3e}")

stages = StageSchedule(timestep_configs=(1, 5, 10, 20),
                       epochs_per_config=(300, 300, 250, 200),
                       epoch_scale=0.04, batch_size=512)
solver, log = train_solver(model, solver, train, stages,
                           RandomSource(seed, stream=21))

print(f"held-out self gap after : {heldout_gap():.3e}")
print(f"solver grew from 5 to {solver.n_blocks} blocks; "
      f"{len(log.rows)} epoch rows logged")
print("last stage rows:")
for row in log.rows[-3:]:
    it, cf, rd, ep, kind, val = row
    print(f"  iter {it} config {cf} round {rd} epoch {ep} {kind}: {val:.3e}")
