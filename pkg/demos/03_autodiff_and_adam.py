"""
The autodiff engine behind the graders and the GCN
===================================================

``gradekit.diffcore`` is a small reverse-mode engine over numpy arrays. It
has exactly the operations the two networks need, a finite-difference
checker and an Adam optimizer.
"""
import numpy as np

from gradekit import diffcore as dc

# Gradients of a small expression, checked against central differences.
rng = np.random.default_rng(0)
with dc.f64_mode():
    x = dc.Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    w = dc.Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    b = dc.Tensor(np.zeros(2), requires_grad=True)

    def loss():
        return dc.mean(dc.tanh(dc.linear(x, w, b)))

    err = dc.check_gradients(loss, [x, w, b])
print(f"worst relative gradient error (float64): {err:.1e}")

# Fit a logistic regression with Adam on two Gaussian blobs.
pts = np.concatenate([rng.normal(-1, 0.7, (50, 2)), rng.normal(1, 0.7, (50, 2))])
y = np.repeat([0, 1], 50)
wt = dc.Tensor(np.zeros((1, 2)), requires_grad=True)
bias = dc.Tensor(np.zeros(1), requires_grad=True)
opt = dc.Adam({"w": wt, "b": bias}, lr=0.05)
for step in range(200):
    opt.zero_grad()
    z = dc.reshape(dc.linear(dc.Tensor(pts), wt, bias), (100,))
    l = dc.bce_with_logits(z, y)
    dc.backward(l)
    opt.step()
    if step % 50 == 0:
        print(f"step {step:3d}  loss {float(l.data):.4f}")
acc = np.mean(((pts @ wt.data.T)[:, 0] + bias.data[0] > 0) == y)
print(f"training accuracy {acc:.2f}")

# Parameters travel in a small named-tensor format that round-trips bit for bit.
blob = dc.dumps_tensors({"w": wt.data, "b": bias.data})
back = dc.loads_tensors(blob)
print("round trip exact:", back["w"].tobytes() == wt.data.tobytes(), "digest", dc.digest(back)[:12])
