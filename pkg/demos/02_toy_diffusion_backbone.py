"""Train the toy epsilon-prediction backbone and sample from it.

Shows the forward process, the deterministic denoise step, and the
closed-form analytic denoiser used as a ground-truth oracle.

Run:  python3 demos/02_toy_diffusion_backbone.py
"""

import numpy as np

from invlab import (AnalyticDenoiser, DatasetSpec, LatentState, RandomSource,
                    Tensor, denoise_step, forward_noise, generate, make_schedule,
                    predict_noise, train_base)

schedule = make_schedule(50, "linear")
spec = DatasetSpec(kind="gaussian_mixture_2d", n_train=1000, n_test=200,
                   n_classes=3, seed=1)
train, test = generate(spec)

print("training backbone (a minute or so) ...")
rng = RandomSource(1, stream=11)
model = train_base(train, schedule, "class", epochs=40, rng=rng, hidden=128)
print(f"final epoch loss: {model.train_log[-1][1]:.4f}")

# Forward process: corrupt a clean point, then denoise all the way back.
z0 = LatentState(Tensor(train.latents[:8]), 0)
eps = rng.normal((8, 2))
state = forward_noise(schedule, z0, schedule.T, eps)
while state.t > 0:
    _, state = denoise_step(model, state)
recovered = state.array
print("mean |denoised - clean|:", float(np.mean(np.abs(recovered - z0.array))))

# The analytic denoiser returns the exact posterior noise for Gaussian data;
# on a single tight component the trained model should roughly agree.
analytic = AnalyticDenoiser(mu=[4.0, 0.0], var0=0.09, schedule=schedule)
probe = LatentState(Tensor(np.array([[3.5, 0.2], [4.2, -0.1]])), 10)
print("analytic eps:", predict_noise(analytic, probe).data[0])
print("model eps   :", predict_noise(model, probe).data[0])
