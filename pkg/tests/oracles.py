"""Independent reference implementations used only by the tests.

Nothing here imports the package's simulation or layer kernels; gates are
expanded into full 2**n x 2**n matrices with Kronecker products, and
convolutions are evaluated with explicit loops.
"""

import numpy as np

I2 = np.eye(2)


def rotation(kind, theta):
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    if kind == "RY":
        return np.array([[c, -s], [s, c]], dtype=complex)
    if kind == "RX":
        return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)
    if kind == "RZ":
        return np.diag([np.exp(-1j * theta / 2), np.exp(1j * theta / 2)])
    raise ValueError(kind)


def single_qubit_operator(m, qubit, n):
    # little-endian: qubit 0 is the rightmost Kronecker factor
    op = np.eye(1)
    for q in reversed(range(n)):
        op = np.kron(op, m if q == qubit else I2)
    return op


def two_qubit_operator(kind, a, b, n):
    dim = 1 << n
    op = np.zeros((dim, dim), dtype=complex)
    for k in range(dim):
        ba, bb = (k >> a) & 1, (k >> b) & 1
        if kind == "CNOT":
            op[k ^ (ba << b), k] = 1
        elif kind == "CZ":
            op[k, k] = -1 if ba and bb else 1
        else:
            raise ValueError(kind)
    return op


def gate_operator(kind, targets, angle, n):
    if len(targets) == 1:
        return single_qubit_operator(rotation(kind, angle), targets[0], n)
    return two_qubit_operator(kind, targets[0], targets[1], n)


def circuit_state(gates, angles):
    """Final statevector of Ry encoding followed by ``gates`` (kind, targets, angle)."""
    n = len(angles)
    state = np.zeros(1 << n, dtype=complex)
    state[0] = 1
    u = np.eye(1 << n, dtype=complex)
    for q, theta in enumerate(angles):
        u = single_qubit_operator(rotation("RY", theta), q, n) @ u
    for kind, targets, angle in gates:
        u = gate_operator(kind, targets, angle, n) @ u
    return u @ state


def z_expectations(state, n):
    probs = np.abs(state) ** 2
    idx = np.arange(1 << n)
    return np.array([probs[((idx >> q) & 1) == 0].sum() - probs[((idx >> q) & 1) == 1].sum() for q in range(n)])


def conv2d_naive(x, W, b, stride=1, pad=(0, 0, 0, 0)):
    """NHWC cross-correlation with explicit loops."""
    top, bottom, left, right = pad
    x = np.pad(x, ((0, 0), (top, bottom), (left, right), (0, 0)))
    n, h, w, c = x.shape
    k, _, _, f = W.shape
    ho, wo = (h - k) // stride + 1, (w - k) // stride + 1
    out = np.zeros((n, ho, wo, f))
    for i in range(n):
        for r in range(ho):
            for s in range(wo):
                patch = x[i, r * stride : r * stride + k, s * stride : s * stride + k, :]
                for o in range(f):
                    out[i, r, s, o] = np.sum(patch * W[:, :, :, o]) + b[o]
    return out


def adam_reference(theta, grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook Adam applied to a sequence of gradients, scalar by scalar."""
    theta = np.array(theta, dtype=float)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        theta = theta - lr * mhat / (np.sqrt(vhat) + eps)
    return theta
