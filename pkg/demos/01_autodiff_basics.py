"""Tour of the reverse-mode tensor core.

Builds a tiny computation, checks its gradient against finite
differences, and runs a few optimizer steps on a toy least-squares
problem. Everything downstream (the flow model, the alignment head)
is built from these same pieces.
"""

import numpy as np

from flowalign import AdamW, Tensor, check_gradients
from flowalign import tensor as tz


def main():
    rng = np.random.default_rng(0)

    print("== a tiny graph and its exact gradient")
    x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    w = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    y = tz.tanh(x @ w).sum()
    y.backward()
    print(f"loss = {float(y.data):.6f}")
    print(f"dL/dw[0, :] = {w.grad[0]}")

    print()
    print("== the same gradient, checked against central differences")
    err = check_gradients(lambda t: tz.tanh(x @ t).sum(), w)
    print(f"max relative error vs finite differences: {err:.2e}")

    print()
    print("== a least-squares fit with the AdamW optimizer")
    true_w = rng.normal(size=(4, 1))
    data = rng.normal(size=(64, 4))
    target = data @ true_w
    w_fit = Tensor(np.zeros((4, 1)), requires_grad=True)
    opt = AdamW({"w": w_fit}, lr=0.05, weight_decay=0.0)
    for step in range(150):
        r = Tensor(data) @ w_fit - Tensor(target)
        loss = (r * r).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % 50 == 0 or step == 149:
            print(f"step {step:3d}: loss = {float(loss.data):.6f}")
    print(f"recovered weights within {np.abs(w_fit.data - true_w).max():.4f} of the truth")


if __name__ == "__main__":
    main()
