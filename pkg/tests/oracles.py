"""Brute-force reference implementations used to cross-check the package.

Everything here is written with plain Python loops over lists and shares no
code with ``dmsae``.
"""
from __future__ import annotations

import math


def nan(x) -> bool:
    return x is None or (isinstance(x, float) and math.isnan(x))


def single_loss(forecast, y, t, v, lam, p, k):
    """``forecast[(origin, step)]`` -> value; ``y`` list of actuals (None = missing).

    Returns ``None`` when fewer than ``v / 2`` targets are evaluable.
    """
    total, count = 0.0, 0
    for tau in range(t - v + 1, t + 1):
        if tau < 0 or nan(y[tau]):
            continue
        f = forecast.get((tau - k, k))
        if nan(f):
            continue
        total += lam ** (t - tau) * abs(f - y[tau]) ** p
        count += 1
    return total if 2 * count >= v else None


def multi_loss(forecast, y, t, v, lam, p, k):
    total, count = 0.0, 0
    for tau in range(t - v + 1, t + 1):
        if tau < 0 or nan(y[tau]):
            continue
        inner, seen = 0.0, False
        for s in range(1, k + 1):
            f = forecast.get((tau - s, s))
            if nan(f):
                continue
            inner += abs(f - y[tau]) ** p
            seen = True
        if seen:
            total += lam ** (t - tau) * inner
            count += 1
    return total if 2 * count >= v else None


def holding_weight(signals):
    k = len(signals)
    ups = sum(1 for s in signals if not nan(s) and s > 0)
    downs = sum(1 for s in signals if not nan(s) and s < 0)
    return 0.5 + (ups - downs) / (2.0 * k)


def cas_weights(signals, kstar):
    k = len(signals)
    ups = sum(1 for s in signals if not nan(s) and s > 0)
    return 0.5 + ups / (2.0 * k), ups / kstar


def pnl(weights, prices, weights_vix=None, prices_vix=None):
    out = [None]
    for t in range(1, len(prices)):
        value = weights[t - 1] * (prices[t] - prices[t - 1]) / prices[t - 1]
        if weights_vix is not None:
            value += weights_vix[t - 1] * (prices_vix[t] - prices_vix[t - 1]) / prices_vix[t - 1]
        out.append(value)
    return out


def anr(values):
    return 252.0 * math.fsum(values) / len(values)


def sharpe(values):
    n = len(values)
    m = math.fsum(values) / n
    var = math.fsum((x - m) ** 2 for x in values) / (n - 1)
    return math.sqrt(252.0) * m / math.sqrt(var)


def max_drawdown(values):
    """Deepest peak-to-trough fall of the wealth curve starting at 1."""
    wealth, peak, worst = 1.0, 1.0, 0.0
    for x in values:
        wealth *= 1.0 + x
        peak = max(peak, wealth)
        worst = min(worst, wealth / peak - 1.0)
    return worst


def max_drawdown_literal(values):
    """The same peak formula applied to ``1 + pi`` day by day."""
    peak, worst = -math.inf, 0.0
    for x in values:
        level = 1.0 + x
        peak = max(peak, level)
        worst = min(worst, level / peak - 1.0)
    return worst


def mean(values):
    return math.fsum(values) / len(values)


def autocov(y, lag):
    n = len(y)
    m = mean(y)
    return math.fsum((y[i] - m) * (y[i + lag] - m) for i in range(n - lag)) / n


def solve(A, b):
    """Gaussian elimination with partial pivoting on lists."""
    n = len(b)
    M = [list(map(float, row)) + [float(bi)] for row, bi in zip(A, b)]
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(M[r][col]))
        M[col], M[piv] = M[piv], M[col]
        for r in range(col + 1, n):
            f = M[r][col] / M[col][col]
            for c in range(col, n + 1):
                M[r][c] -= f * M[col][c]
    x = [0.0] * n
    for r in range(n - 1, -1, -1):
        x[r] = (M[r][n] - sum(M[r][c] * x[c] for c in range(r + 1, n))) / M[r][r]
    return x


def yule_walker(y, p):
    """(alpha, phi) from the biased autocovariances."""
    g = [autocov(y, j) for j in range(p + 1)]
    R = [[g[abs(i - j)] for j in range(p)] for i in range(p)]
    phi = solve(R, g[1:])
    return mean(y) * (1.0 - sum(phi)), phi


def ols(X, y):
    """Intercept + coefficients via the normal equations."""
    Z = [[1.0, *row] for row in X]
    q = len(Z[0])
    A = [[math.fsum(z[i] * z[j] for z in Z) for j in range(q)] for i in range(q)]
    b = [math.fsum(z[i] * yi for z, yi in zip(Z, y)) for i in range(q)]
    return solve(A, b)


def ar_forecast(alpha, phi, history, steps):
    hist = list(history)
    out = None
    for _ in range(steps):
        out = alpha + sum(c * hist[-1 - j] for j, c in enumerate(phi))
        hist.append(out)
    return out


def rel_err(a, b, floor=1e-12):
    return abs(a - b) / max(abs(b), floor)
