"""Walk through the numeric core: tensors, tapes, gradients, Adam.

Run:  python3 demos/01_autodiff_and_optimizer.py
"""

import numpy as np

import invlab.autodiff as ad
from invlab import OptimizerState, RandomSource, Tape, adam_step, backward, param
from invlab.autodiff import Tensor

rng = RandomSource(0)

# A taped forward pass records every primitive; backward replays the tape
# once in reverse and hands out gradients keyed by parameter.
w = param(rng.normal_array((3, 3)) * 0.5)
x = Tensor(rng.normal_array((4, 3)))

with Tape():
    hidden = ad.silu(ad.matmul(x, w))
    loss = ad.mean_squared(hidden)
    grads = backward(loss)

print("loss:", loss.item())
print("grad wrt w (first row):", grads.of(w)[0])

# Gradients agree with central finite differences.
step = 1e-4
probe = np.zeros_like(w.data)
w.data.flags.writeable = True
w.data[0, 0] += step
hi = ad.mean_squared(ad.silu(ad.matmul(x, w))).item()
w.data[0, 0] -= 2 * step
lo = ad.mean_squared(ad.silu(ad.matmul(x, w))).item()
w.data[0, 0] += step
w.data.flags.writeable = False
print("fd check  :", (hi - lo) / (2 * step), "vs", grads.of(w)[0, 0])

# Adam drives a toy least-squares problem to its solution.
target = Tensor(rng.normal_array((4, 3)))
state = OptimizerState([w], learning_rate=0.05)
for i in range(300):
    with Tape():
        pred = ad.matmul(x, w)
        loss = ad.mean_squared(ad.sub(pred, target))
        g = backward(loss)
    adam_step([w], [g.of(w)], state)
    if i % 100 == 0:
        print(f"step {i:3d}  loss {loss.item():.6f}")
print("final loss:", loss.item())
