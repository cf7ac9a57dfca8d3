"""Central finite-difference checks for whole models.

A coordinate whose +-h perturbation changes a ReLU sign or a max-pool
winner sits on a kink, where the derivative is undefined; such
coordinates are skipped and counted.
"""

import numpy as np

from quanvision.nn import Conv2D, Dense, Dropout, Flatten, MaxPool2D, Model, ModelSpec, Softmax, backward
from quanvision.nn.layers import _pool_views
from quanvision.nn.model import _forward

STEP = 1e-5
FLOOR = 1e-6


def _pattern(model, x, seed):
    _, caches = _forward(model, x, True, np.random.default_rng(seed))
    parts = []
    for layer, cache in zip(model.spec.layers, caches):
        if isinstance(layer, (Conv2D, Dense)):
            parts.append((cache[1] > 0).ravel())
        elif isinstance(layer, MaxPool2D):
            inp, out, size = cache
            views = _pool_views(inp, size, out.shape[1], out.shape[2])
            parts.append(np.stack(views).argmax(axis=0).ravel())
    return parts


def _same(a, b):
    return all(np.array_equal(u, v) for u, v in zip(a, b))


def _loss(model, x, y, cw, sw, seed):
    return backward(model, x, y, cw, sw, rng=np.random.default_rng(seed))[0]


def check_model(model, x, y, class_weights=None, sample_weights=None, seed=0, max_coords=None, rng=None):
    """Worst relative error over (sampled) parameters, and the number of skipped kinks."""
    _, grads = backward(model, x, y, class_weights, sample_weights, rng=np.random.default_rng(seed))
    base = _pattern(model, x, seed)
    worst, skipped = 0.0, 0
    for p, g in zip(model.params, grads):
        for name, arr in p.items():
            coords = list(np.ndindex(arr.shape))
            if max_coords is not None and len(coords) > max_coords:
                picks = (rng or np.random.default_rng(0)).choice(len(coords), max_coords, replace=False)
                coords = [coords[i] for i in picks]
            for idx in coords:
                old = arr[idx]
                arr[idx] = old + STEP
                plus, pat_plus = _loss(model, x, y, class_weights, sample_weights, seed), _pattern(model, x, seed)
                arr[idx] = old - STEP
                minus, pat_minus = _loss(model, x, y, class_weights, sample_weights, seed), _pattern(model, x, seed)
                arr[idx] = old
                if not (_same(base, pat_plus) and _same(base, pat_minus)):
                    skipped += 1
                    continue
                numeric = (plus - minus) / (2 * STEP)
                analytic = g[name][idx]
                err = abs(numeric - analytic) / max(abs(numeric), abs(analytic), FLOOR)
                worst = max(worst, err)
    return worst, skipped


def random_model(rng):
    """A small random stack exercising every layer type, plus matching data."""
    h = int(rng.integers(5, 9))
    c = int(rng.integers(1, 4))
    padding = str(rng.choice(["valid", "same"]))
    stride = int(rng.integers(1, 3))
    activation = "relu" if rng.random() < 0.7 else None
    conv = Conv2D(int(rng.integers(2, 5)), int(rng.integers(2, 4)), stride, padding, activation)
    layers = [conv]
    shape = conv.output_shape((h, h, c))
    if min(shape[:2]) >= 2:
        layers.append(MaxPool2D(2))
    layers += [
        Flatten(),
        Dense(int(rng.integers(3, 7)), "relu"),
        Dropout(float(rng.choice([0.0, 0.3]))),
        Dense(2),
        Softmax(),
    ]
    spec = ModelSpec(tuple(layers), (h, h, c), int(rng.integers(1000)))
    model = Model.init(spec)
    for p in model.params:
        if "b" in p:
            p["b"] = rng.normal(0, 0.1, p["b"].shape)
    n = int(rng.integers(2, 5))
    x = rng.standard_normal((n, h, h, c))
    y = rng.integers(0, 2, n)
    cw = tuple(rng.uniform(0.5, 2.0, 2)) if rng.random() < 0.5 else None
    sw = rng.uniform(0.5, 2.0, n) if rng.random() < 0.5 else None
    return model, x, y, cw, sw
