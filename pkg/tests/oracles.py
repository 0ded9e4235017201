"""Slow, loop-based reference implementations used only by the tests.

Nothing here imports the package's numerical code, so agreement between the
two is evidence rather than tautology.
"""
import math


def assignments(x, v):
    out = []
    for xm in x:
        a = [-sum((xi - vi) ** 2 for xi, vi in zip(xm, vk)) for vk in v]
        top = max(a)
        e = [math.exp(ai - top) for ai in a]
        z = sum(e)
        out.append([ei / z for ei in e])
    return out


def conditionals(psi, s, priors):
    d_count, k_count = len(priors), len(psi[0])
    phi = [[0.0] * k_count for _ in range(d_count)]
    counts = [0] * d_count
    for row, d in zip(psi, s):
        counts[d] += 1
        for k in range(k_count):
            phi[d][k] += row[k]
    for d in range(d_count):
        for k in range(k_count):
            phi[d][k] /= counts[d]
    cond = [[0.0] * k_count for _ in range(d_count)]
    for k in range(k_count):
        z = sum(phi[r][k] * priors[r] for r in range(d_count))
        for d in range(d_count):
            cond[d][k] = phi[d][k] * priors[d] / z if z > 0 else priors[d]
    return phi, cond


def entropy(cond):
    j = 0.0
    for row in cond:
        for p in row:
            if p > 0:
                j -= p * math.log(p)
    return j


def reconstruction(x, psi, v):
    total = 0.0
    for xm, row in zip(x, psi):
        for n in range(len(xm)):
            xhat = sum(row[k] * v[k][n] for k in range(len(v)))
            total += (xm[n] - xhat) ** 2
    return total / len(x)


def classification(psi, y, theta):
    total = 0.0
    for row, ym in zip(psi, y):
        logits = [sum(t * p for t, p in zip(theta_c, row)) for theta_c in theta]
        top = max(logits)
        lse = top + math.log(sum(math.exp(u - top) for u in logits))
        total -= logits[ym] - lse
    return total / len(psi)


def empirical_priors(s):
    present = sorted(set(s))
    return present, [sum(1 for d in s if d == p) / len(s) for p in present]


def all_losses(x, s, y, v, theta, aj, ae, al, lam):
    psi = assignments(x, v)
    present, priors = empirical_priors(s)
    dense = [present.index(d) for d in s]
    _, cond = conditionals(psi, dense, priors)
    j = entropy(cond)
    e = reconstruction(x, psi, v)
    ell = classification(psi, y, theta)
    reg = sum(t * t for row in theta for t in row)
    return j, e, ell, reg, -aj * j + ae * e + al * ell + lam * reg


def auc_pairs(scores, labels):
    """Enumerate every positive/negative pair."""
    pos = [sc for sc, lab in zip(scores, labels) if lab == 1]
    neg = [sc for sc, lab in zip(scores, labels) if lab == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            total += 1.0 if p > q else 0.5 if p == q else 0.0
    return total / (len(pos) * len(neg))
