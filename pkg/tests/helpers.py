import numpy as np

from further.nn import log_softmax, softmax


def numeric_grad(f, x, h=1e-5):
    """Central differences of the scalar f() with respect to the array x (perturbed in place)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + h
        up = f()
        flat[k] = old - h
        down = f()
        flat[k] = old
        gflat[k] = (up - down) / (2 * h)
    return g


def rel_error(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-8)
    return float(np.abs(a - b).max(initial=0.0) / scale)


def enumerate_soft_value(a, s_enc, z, p_opp):
    """Loop over every (own action, opponent action) pair in plain floats."""
    obs = np.concatenate([s_enc, z])
    logits = a.policy.predict(obs[None])[0]
    pi, logpi = softmax(logits), log_softmax(logits)
    rows = np.array([np.concatenate([obs, np.eye(len(p_opp))[aj]]) for aj in range(len(p_opp))])
    q1, q2 = a.targets[0].predict(rows), a.targets[1].predict(rows)
    total = 0.0
    for ai in range(len(pi)):
        inner = 0.0
        for aj in range(len(p_opp)):
            inner = inner + float(p_opp[aj]) * min(float(q1[aj, ai]), float(q2[aj, ai]))
        total = total + float(pi[ai]) * inner
    ent = 0.0
    for ai in range(len(pi)):
        ent = ent - float(pi[ai]) * float(logpi[ai])
    return total + a.entropy * ent


def relu_margin(net, x):
    """Smallest |pre-activation| over the hidden layers; central differences are only valid away from 0."""
    h, out = np.asarray(x, dtype=float), np.inf
    for k, (W, b) in enumerate(zip(net.W[:-1], net.b[:-1])):
        h = h @ W + b
        out = min(out, float(np.abs(h).min()))
        h = np.maximum(h, 0.0)
    return out
