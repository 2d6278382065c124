"""The headline desk-scale comparison: one-step baseline vs fixed-point
refinement vs the trained solver, on the standard mixture recipe.

This is the same recipe the acceptance suite runs (2000/298 split, epoch
factor 0.05); expect several minutes on a laptop core.  Figures and the
report CSV land in runs/demo_compare/.

Run:  python3 demos/05_compare_methods.py
"""

from pathlib import Path

from invlab import (DatasetSpec, RandomSource, SolverConfig, StageSchedule,
                    build_solver, compare_methods, generate, make_schedule,
                    train_base, train_solver)
from invlab.figures import write_bars_svg, write_scatter_svg

seed = 0
out = Path("runs/demo_compare")
out.mkdir(parents=True, exist_ok=True)

spec = DatasetSpec(kind="gaussian_mixture_2d", n_train=2000, n_test=298,
                   n_classes=3, seed=seed)
train, test = generate(spec)
schedule = make_schedule(50, "linear")

print("training backbone ...")
model = train_base(train, schedule, "class", epochs=60,
                   rng=RandomSource(seed, stream=11), hidden=128)
print(f"  final epoch loss {model.train_log[-1][1]:.4f}")

print("training solver (the long part) ...")
solver = build_solver(SolverConfig(latent_dim=2),
                      RandomSource(seed, stream=21).split(1), schedule)
solver, log = train_solver(model, solver, train, StageSchedule(),
                           RandomSource(seed, stream=21).split(2))

print("evaluating ...")
report = compare_methods(("ddim", "fixed_point", "deepinv"), model, solver,
                         test, seed=seed)
print(report.human_table())

(out / "eval_report.csv").write_text(report.to_csv(), encoding="utf-8")
write_bars_svg(out / "mse_by_method.svg", [r.method for r in report.rows],
               [r.mse for r in report.rows], "reconstruction mse (lower is better)")

from invlab import LatentState, Tensor, invert, reconstruct  # noqa: E402

recons = {}
for method in ("ddim", "deepinv"):
    traj = invert(method, model, LatentState(Tensor(test.latents[:150]), 0),
                  solver=solver)
    recons[method] = reconstruct(model, traj).array
write_scatter_svg(out / "reconstructions.svg",
                  {"original": test.latents[:150], **recons})
print(f"wrote {out}/eval_report.csv and figures")
