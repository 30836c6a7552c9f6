"""Independent reference implementations used as test oracles.

Everything here is written with plain Python loops over mpmath numbers at 50
significant digits, without touching the package's tensor code.
"""
import mpmath as mp

mp.mp.dps = 50


def _m(x):
    return mp.mpf(float(x))


def log_softmax_row(row):
    row = [_m(v) for v in row]
    top = max(row)
    lse = top + mp.log(mp.fsum(mp.exp(v - top) for v in row))
    return [v - lse for v in row]


def softmax_row(row):
    return [mp.exp(v) for v in log_softmax_row(row)]


def cross_entropy(logits, labels):
    total = mp.fsum(-log_softmax_row(row)[int(y)] for row, y in zip(logits, labels))
    return total / len(labels)


def kl(student, teacher, tau=1.0, teacher_first=False):
    out = []
    for s, t in zip(student, teacher):
        ls = log_softmax_row([_m(v) / _m(tau) for v in s])
        lt = log_softmax_row([_m(v) / _m(tau) for v in t])
        if teacher_first:
            out.append(mp.fsum(mp.exp(b) * (b - a) for a, b in zip(ls, lt)))
        else:
            out.append(mp.fsum(mp.exp(a) * (a - b) for a, b in zip(ls, lt)))
    return mp.fsum(out) / len(out)


def norm(v):
    return mp.sqrt(mp.fsum(_m(x) ** 2 for x in v))


def unit(v, eps=1e-12):
    n = mp.sqrt(mp.fsum(_m(x) ** 2 for x in v) + _m(eps))
    return [_m(x) / n for x in v]


def feak(student_cls, teacher_cls, mapping):
    """student_cls: list over layers of [B][H]; mapping: 1-based dict."""
    batch = len(student_cls[0])
    total = mp.mpf(0)
    for b in range(batch):
        for i, hs in enumerate(student_cls, start=1):
            ht = teacher_cls[mapping[i] - 1]
            us, ut = unit(hs[b]), unit(ht[b])
            total += mp.sqrt(mp.fsum((x - y) ** 2 for x, y in zip(us, ut)))
    return total / batch


def fsp(h1, h2, divisor="dim"):
    h = len(h1)
    d = _m(h) if divisor == "dim" else mp.sqrt(mp.fsum(_m(x) ** 2 for x in h1) + _m(1e-12))
    return [[_m(a) * _m(b) / d for b in h2] for a in h1]


def relk(student_cls, teacher_cls, mapping, divisor="dim"):
    ls = len(student_cls)
    batch = len(student_cls[0])
    total = mp.mpf(0)
    for b in range(batch):
        for i in range(1, ls):
            gs = fsp(student_cls[i - 1][b], student_cls[i][b], divisor)
            gt = fsp(teacher_cls[mapping[i] - 1][b], teacher_cls[mapping[i + 1] - 1][b], divisor)
            h = len(gs)
            total += mp.fsum((gs[r][c] - gt[r][c]) ** 2 for r in range(h) for c in range(h)) / (h * h)
    return total / batch


def combine_soft(losses, action):
    return mp.fsum(_m(a) * _m(l) for a, l in zip(action, losses))


def combine_hard(losses, action, threshold):
    return mp.fsum(_m(l) for a, l in zip(action, losses) if a >= threshold)


def td_target(r, t, q_next, gamma):
    return _m(gamma) ** t * _m(r) + _m(q_next)


def estimated_reward(q_t, q_next, t, gamma):
    return (_m(q_t) - _m(q_next)) / _m(gamma) ** t


def cosine(a, b):
    return mp.fsum(_m(x) * _m(y) for x, y in zip(a, b)) / (norm(a) * norm(b))


def exploration_soft(a, prev, scale):
    return _m(scale) * (1 - mp.fsum(cosine(a, p) for p in prev) / len(prev))


def exploration_hard(g, prev, scale):
    same = sum(1 for p in prev if list(map(int, p)) == list(map(int, g)))
    return _m(scale) * (1 - mp.mpf(same) / len(prev))


def mlp_forward(x, layers, hidden="relu"):
    """layers: list of (W [in][out], b [out]) nested lists; ReLU between layers."""
    h = [_m(v) for v in x]
    for i, (w, b) in enumerate(layers):
        out = [mp.fsum(h[r] * _m(w[r][c]) for r in range(len(h))) + _m(b[c]) for c in range(len(b))]
        if i < len(layers) - 1:
            out = [max(v, mp.mpf(0)) for v in out]
        h = out
    return h


def sigmoid(x):
    return 1 / (1 + mp.exp(-_m(x)))


def rel_close(a, b, tol):
    a, b = _m(a), _m(b)
    return abs(a - b) <= tol * max(abs(a), abs(b), mp.mpf(1e-300)) or abs(a - b) <= tol * 1e-12


def numgrad(f, x, eps=1e-5):
    """Central finite differences of scalar ``f`` w.r.t. float64 array ``x`` (modified in place)."""
    import numpy as np

    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        fp = f()
        x[i] = old - eps
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g
