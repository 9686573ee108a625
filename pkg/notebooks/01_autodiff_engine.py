"""
Reverse-mode differentiation on numpy arrays
=============================================

Every layer of the model is built from a small set of primitives, each
carrying its own vector-Jacobian product.  This walk-through builds a
two-layer network by hand, backpropagates through it and compares the
result with central finite differences.
"""

import numpy as np

from mkpnet import tensorgrad as tg
from mkpnet.tensorgrad import Tensor

rng = np.random.default_rng(0)

# A batch of 4 inputs, a hidden tanh layer and a 3-way softmax head.
x = Tensor(rng.normal(size=(4, 5)))
W1 = Tensor(rng.normal(0, 0.5, size=(5, 6)), requires_grad=True, name="W1")
W2 = Tensor(rng.normal(0, 0.5, size=(6, 3)), requires_grad=True, name="W2")
y = np.array([0, 2, 1, 2])


def loss_fn(_=None):
    return tg.cross_entropy(tg.matmul(tg.tanh(tg.matmul(x, W1)), W2), y)


loss = loss_fn()
tg.backward(loss)
print("loss", round(loss.item(), 5))
print("dL/dW2 row 0", np.round(W2.grad[0], 5))

# Gradients are checked in double precision; float32 central differences
# are too coarse for a 1e-3 relative tolerance.
with tg.precision(np.float64):
    W1d = Tensor(W1.data, requires_grad=True)
    W2d = Tensor(W2.data, requires_grad=True)
    xd = Tensor(x.data)
    f = lambda ws: tg.cross_entropy(tg.matmul(tg.tanh(tg.matmul(xd, ws[0])), ws[1]), y)
    print("max relative error vs finite differences", tg.grad_check(f, [W1d, W2d]))

# Primitives refuse non-finite input and mismatched shapes straight away.
try:
    tg.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
except tg.ShapeError as exc:
    print("ShapeError:", exc)

# Adam keeps a step count per parameter slot, so updating disjoint parameter
# sets in either order gives the same bits.
state = tg.OptimState(lr=1e-2)
for _ in range(3):
    tg.backward(loss_fn())
    tg.optimizer_step({"W1": W1, "W2": W2}, state)
print("loss after three Adam steps", round(loss_fn().item(), 5))
