"""Parametric trajectory laws over the data fraction D in (0, 1].

Each law evaluates batches of parameter vectors at batches of D values and
exposes an analytic Jacobian for least-squares fitting, plus a data-driven
initial-guess heuristic used for seeded multi-start optimization.
"""

from __future__ import annotations

import numpy as np

_EXP_CLIP = 60.0
_TINY = 1e-12


def _clip_exp(q: np.ndarray) -> np.ndarray:
    return np.exp(np.clip(q, -_EXP_CLIP, _EXP_CLIP))


def _varpro_search(
    d_grid,
    averaging,
    targets,
    basis_fn,
    coarse,
    steps,
    positive_rows=(),
    n_refine=3,
):
    """Variable projection: grid the nonlinear parameters, solve the linear
    coefficients exactly, then refine locally around each config's best.

    ``basis_fn(nl)`` returns the (n_lin, M) basis rows for one nonlinear
    tuple; window means of the model are linear in the coefficients, so the
    inner least squares is exact.  ``steps`` describes per-dimension local
    perturbations: ("mul", factor) or ("add", delta).  Rows listed in
    ``positive_rows`` must come out positive for a candidate to count.
    Returns (coefs (n_lin, n), nl (n, k)).
    """
    n = targets.shape[0]
    k = len(steps)
    best_rss = np.full(n, np.inf)
    first = basis_fn(coarse[0])
    best_coef = np.zeros((first.shape[0], n))
    best_nl = np.tile(np.asarray(coarse[0], dtype=np.float64), (n, 1))

    def evaluate(nl):
        nonlocal best_rss, best_coef, best_nl
        design = averaging @ basis_fn(nl).T
        coef = np.linalg.pinv(design) @ targets.T
        resid = design @ coef - targets.T
        rss = (resid * resid).sum(axis=0)
        for row in positive_rows:
            rss = np.where(coef[row] > _TINY, rss, np.inf)
        better = rss < best_rss
        if better.any():
            best_rss[better] = rss[better]
            best_coef[:, better] = coef[:, better]
            best_nl[better] = np.asarray(nl, dtype=np.float64)

    for nl in coarse:
        evaluate(nl)
    moves = [m for m in np.ndindex(*(3,) * k) if any(d != 1 for d in m)]
    for r in range(n_refine):
        shrink = 0.55 ** r
        candidates = set()
        for i in range(n):
            for move in moves:
                nl = best_nl[i].copy()
                for dim, d in enumerate(move):
                    direction = d - 1  # {-1, 0, +1}
                    if direction == 0:
                        continue
                    kind, size = steps[dim]
                    if kind == "mul":
                        nl[dim] *= size ** (direction * shrink)
                    else:
                        nl[dim] += direction * size * shrink
                candidates.add(tuple(nl))
        for nl in sorted(candidates):
            evaluate(nl)
    return best_coef, best_nl


class InversePowerLaw:
    """f(D) = E + A / D^alpha."""

    name = "inverse_power"
    param_names = ("E", "A", "alpha")
    n_params = 3
    lower = np.array([-np.inf, -np.inf, 0.01])
    upper = np.array([np.inf, np.inf, 5.0])
    # reduced (variable-projection) view: nonlinear alpha, linear (E, A)
    reduced_dim = 1
    reduced_lower = np.array([0.01])
    reduced_upper = np.array([5.0])
    reduced_positive = ()

    def reduced_basis(self, nl, d_grid):
        alpha = nl[:, 0:1]
        out = np.empty((nl.shape[0], 2, d_grid.size))
        out[:, 0, :] = 1.0
        out[:, 1, :] = d_grid[None, :] ** (-alpha)
        return out

    def reduced_assemble(self, coef, nl):
        return np.stack([coef[:, 0], coef[:, 1], nl[:, 0]], axis=1)

    def reduced_extract(self, params):
        return params[:, 2:3]

    def evaluate(self, params, D):
        E, A, alpha = params[..., 0:1], params[..., 1:2], params[..., 2:3]
        return E + A * D[None, :] ** (-alpha)

    def jacobian(self, params, D):
        A, alpha = params[..., 1], params[..., 2]
        pow_term = D[None, :] ** (-alpha[:, None])
        jac = np.empty(params.shape[:1] + (D.size, 3))
        jac[..., 0] = 1.0
        jac[..., 1] = pow_term
        jac[..., 2] = -A[:, None] * np.log(D)[None, :] * pow_term
        return jac

    def varpro_init(self, d_grid, averaging, targets):
        """Grid alpha, solve (E, A) exactly; refine around each config's best."""
        ones = np.ones_like(d_grid)
        coef, nl = _varpro_search(
            d_grid, averaging, targets,
            lambda p: np.stack([ones, d_grid ** (-p[0])]),
            coarse=[(a,) for a in np.geomspace(self.lower[2], self.upper[2], 160)],
            steps=[("mul", 1.35)],
        )
        return np.stack([coef[0], coef[1], nl[:, 0]], axis=1)

    def initial_params(self, d_pts, targets, rng, n_starts):
        n = targets.shape[0]
        first, last = targets[:, 0], targets[:, -1]
        scale = np.maximum(np.abs(targets).max(axis=1) * 0.05, 1e-4)
        out = np.empty((n_starts, n, 3))
        for s in range(n_starts):
            if s == 0:
                alpha = np.full(n, 0.7)
                jit_e = np.zeros(n)
                jit_a = np.ones(n)
            else:
                alpha = np.exp(rng.uniform(np.log(0.05), np.log(3.0), size=n))
                jit_e = rng.normal(0.0, 1.0, size=n)
                jit_a = np.exp(rng.normal(0.0, 0.5, size=n))
            denom = d_pts[0] ** (-alpha) - d_pts[-1] ** (-alpha)
            A = np.where(np.abs(denom) > _TINY, (first - last) / np.where(np.abs(denom) > _TINY, denom, 1.0), 0.0)
            A = A * jit_a
            E = last - A * d_pts[-1] ** (-alpha) + jit_e * scale
            out[s, :, 0] = E
            out[s, :, 1] = A
            out[s, :, 2] = alpha
        return out


class VaporPressureLaw:
    """f(D) = exp(A + B / D + Cv * log D)."""

    name = "vapor_pressure"
    param_names = ("A", "B", "Cv")
    n_params = 3
    lower = np.array([-60.0, -60.0, -20.0])
    upper = np.array([60.0, 60.0, 20.0])
    reduced_dim = 0  # no parameter is linear in value space

    def _exponent(self, params, D):
        A, B, Cv = params[..., 0:1], params[..., 1:2], params[..., 2:3]
        return A + B / D[None, :] + Cv * np.log(D)[None, :]

    def evaluate(self, params, D):
        return _clip_exp(self._exponent(params, D))

    def jacobian(self, params, D):
        f = self.evaluate(params, D)
        jac = np.empty(params.shape[:1] + (D.size, 3))
        jac[..., 0] = f
        jac[..., 1] = f / D[None, :]
        jac[..., 2] = f * np.log(D)[None, :]
        return jac

    def initial_params(self, d_pts, targets, rng, n_starts):
        n = targets.shape[0]
        # log f is linear in the parameters; least squares on positive targets
        X = np.stack([np.ones_like(d_pts), 1.0 / d_pts, np.log(d_pts)], axis=1)
        pinv = np.linalg.pinv(X)
        safe = np.maximum(targets, 1e-8)
        base = (pinv @ np.log(safe).T).T  # (n, 3)
        bad = ~(targets > 0).all(axis=1)
        base[bad] = np.array([0.0, 0.1, 0.0])
        out = np.empty((n_starts, n, 3))
        for s in range(n_starts):
            jitter = 0.0 if s == 0 else rng.normal(0.0, 0.3, size=(n, 3))
            out[s] = np.clip(base + jitter, self.lower, self.upper)
        return out


class LogPowerLaw:
    """f(D) = A / (1 + (D / exp(B))^alpha)."""

    name = "log_power"
    param_names = ("A", "B", "alpha")
    n_params = 3
    lower = np.array([-np.inf, -20.0, 0.01])
    upper = np.array([np.inf, 20.0, 5.0])
    # reduced view: nonlinear (B, alpha), linear A
    reduced_dim = 2
    reduced_lower = np.array([-20.0, 0.01])
    reduced_upper = np.array([20.0, 5.0])
    reduced_positive = ()

    def reduced_basis(self, nl, d_grid):
        B, alpha = nl[:, 0:1], nl[:, 1:2]
        u = _clip_exp(alpha * (np.log(d_grid)[None, :] - B))
        return (1.0 / (1.0 + u))[:, None, :]

    def reduced_assemble(self, coef, nl):
        return np.stack([coef[:, 0], nl[:, 0], nl[:, 1]], axis=1)

    def reduced_extract(self, params):
        return params[:, 1:3]

    def evaluate(self, params, D):
        A, B, alpha = params[..., 0:1], params[..., 1:2], params[..., 2:3]
        u = _clip_exp(alpha * (np.log(D)[None, :] - B))
        return A / (1.0 + u)

    def jacobian(self, params, D):
        A, B, alpha = params[..., 0], params[..., 1], params[..., 2]
        u = _clip_exp(alpha[:, None] * (np.log(D)[None, :] - B[:, None]))
        denom = (1.0 + u) ** 2
        jac = np.empty(params.shape[:1] + (D.size, 3))
        jac[..., 0] = 1.0 / (1.0 + u)
        jac[..., 1] = A[:, None] * alpha[:, None] * u / denom
        jac[..., 2] = -A[:, None] * (np.log(D)[None, :] - B[:, None]) * u / denom
        return jac

    def varpro_init(self, d_grid, averaging, targets):
        """Grid (B, alpha), solve A exactly; refine around each config's best."""
        log_d = np.log(d_grid)
        coarse = [
            (b, a)
            for b in np.linspace(np.log(d_grid[0]) - 2.0, 1.0, 16)
            for a in np.geomspace(self.lower[2], self.upper[2], 24)
        ]
        coef, nl = _varpro_search(
            d_grid, averaging, targets,
            lambda p: (1.0 / (1.0 + _clip_exp(p[1] * (log_d - p[0]))))[None, :],
            coarse=coarse,
            steps=[("add", 0.4), ("mul", 1.35)],
        )
        return np.stack([coef[0], nl[:, 0], nl[:, 1]], axis=1)

    def initial_params(self, d_pts, targets, rng, n_starts):
        n = targets.shape[0]
        out = np.empty((n_starts, n, 3))
        for s in range(n_starts):
            if s == 0:
                alpha = np.full(n, 1.0)
                B = np.full(n, np.log(np.median(d_pts)))
                A = targets[:, 0] * (1.0 + np.exp(alpha * (np.log(d_pts[0]) - B)))
            else:
                alpha = np.exp(rng.uniform(np.log(0.1), np.log(3.0), size=n))
                B = rng.uniform(np.log(d_pts[0] * 0.3), 0.5, size=n)
                A = targets[:, 0] * (1.0 + np.exp(np.clip(alpha * (np.log(d_pts[0]) - B), -30, 30)))
                A *= np.exp(rng.normal(0.0, 0.3, size=n))
            out[s, :, 0] = A
            out[s, :, 1] = np.clip(B, self.lower[1], self.upper[1])
            out[s, :, 2] = alpha
        return out


class ExponentialLaw:
    """f(D) = E - exp(-A * D^alpha + B)."""

    name = "exponential"
    param_names = ("E", "A", "alpha", "B")
    n_params = 4
    lower = np.array([-np.inf, -1e6, 0.01, -60.0])
    upper = np.array([np.inf, 1e6, 5.0, 60.0])
    # reduced view: nonlinear (A, alpha), linear (E, exp(B)) with exp(B) > 0
    reduced_dim = 2
    reduced_lower = np.array([-1e6, 0.01])
    reduced_upper = np.array([1e6, 5.0])
    reduced_positive = (1,)

    def reduced_basis(self, nl, d_grid):
        A, alpha = nl[:, 0:1], nl[:, 1:2]
        out = np.empty((nl.shape[0], 2, d_grid.size))
        out[:, 0, :] = 1.0
        out[:, 1, :] = -_clip_exp(-A * d_grid[None, :] ** alpha)
        return out

    def reduced_assemble(self, coef, nl):
        c = np.maximum(coef[:, 1], _TINY)
        return np.stack([coef[:, 0], nl[:, 0], nl[:, 1], np.log(c)], axis=1)

    def reduced_extract(self, params):
        return params[:, 1:3]

    def evaluate(self, params, D):
        E, A, alpha, B = (params[..., i : i + 1] for i in range(4))
        return E - _clip_exp(-A * D[None, :] ** alpha + B)

    def jacobian(self, params, D):
        A, alpha, B = params[..., 1], params[..., 2], params[..., 3]
        d_pow = D[None, :] ** alpha[:, None]
        g = _clip_exp(-A[:, None] * d_pow + B[:, None])
        jac = np.empty(params.shape[:1] + (D.size, 4))
        jac[..., 0] = 1.0
        jac[..., 1] = g * d_pow
        jac[..., 2] = g * A[:, None] * d_pow * np.log(D)[None, :]
        jac[..., 3] = -g
        return jac

    def varpro_init(self, d_grid, averaging, targets):
        """Initialize by gridding (E, alpha) per config.

        Given E and alpha, log(E - f) is approximately linear in (B, -A)
        at the window level, so A and B come from a tiny least squares; the
        winner per config is judged by the exact value-space residual.
        """
        n, n_win = targets.shape
        ymax = targets.max(axis=1)
        span = np.maximum(targets.max(axis=1) - targets.min(axis=1), 1e-6)
        best_rss = np.full(n, np.inf)
        best = np.tile(np.array([0.0, 1.0, 1.0, 0.0]), (n, 1))
        best[:, 0] = ymax + span

        def evaluate(margins, alphas):
            nonlocal best_rss, best
            E = ymax + span * margins
            u_bar = averaging @ (d_grid[:, None] ** alphas[None, :])  # (F, n)
            z = np.log(np.maximum(E[:, None] - targets, 1e-300))     # (n, F)
            # per config: z ~= B - A * u_bar  (window-level approximation)
            u = u_bar.T                                              # (n, F)
            su, sz = u.mean(axis=1), z.mean(axis=1)
            cov = ((u - su[:, None]) * (z - sz[:, None])).mean(axis=1)
            var = ((u - su[:, None]) ** 2).mean(axis=1)
            A = -cov / np.maximum(var, _TINY)
            B = sz + A * su
            params = np.stack([E, A, alphas, B], axis=1)
            vals = self.evaluate(params, d_grid)
            resid = vals @ averaging.T - targets
            rss = (resid * resid).sum(axis=1)
            better = np.isfinite(rss) & (rss < best_rss)
            best_rss[better] = rss[better]
            best[better] = params[better]

        margin_grid = np.geomspace(1e-3, 30.0, 24)
        alpha_grid = np.geomspace(self.lower[2], self.upper[2], 16)
        for margin in margin_grid:
            for alpha in alpha_grid:
                evaluate(np.full(n, margin), np.full(n, alpha))
        for r in range(6):
            shrink = 0.55 ** r
            cur_margin = (best[:, 0] - ymax) / span
            cur_alpha = best[:, 2]
            for dm in (-1, 0, 1):
                for da in (-1, 0, 1):
                    if dm == 0 and da == 0:
                        continue
                    evaluate(
                        cur_margin * 1.6 ** (dm * shrink),
                        np.clip(cur_alpha * 1.35 ** (da * shrink), self.lower[2], self.upper[2]),
                    )
        return best

    def initial_params(self, d_pts, targets, rng, n_starts):
        n = targets.shape[0]
        spread = np.maximum(targets.max(axis=1) - targets.min(axis=1), 1e-4)
        out = np.empty((n_starts, n, 4))
        for s in range(n_starts):
            alpha = np.full(n, 1.0) if s == 0 else np.exp(rng.uniform(np.log(0.2), np.log(3.0), size=n))
            margin = spread * (0.5 if s == 0 else rng.uniform(0.1, 2.0, size=n))
            E = targets.max(axis=1) + margin
            # log(E - f) = -A * d^alpha + B is linear given alpha
            z = np.log(np.maximum(E[:, None] - targets, 1e-10))
            A_fit = np.empty(n)
            B_fit = np.empty(n)
            for i in range(n):
                X = np.stack([d_pts ** alpha[i], np.ones_like(d_pts)], axis=1)
                coef, *_ = np.linalg.lstsq(X, z[i], rcond=None)
                A_fit[i], B_fit[i] = -coef[0], coef[1]
            out[s, :, 0] = E
            out[s, :, 1] = np.clip(A_fit, self.lower[1], self.upper[1])
            out[s, :, 2] = alpha
            out[s, :, 3] = np.clip(B_fit, self.lower[3], self.upper[3])
        return out


class WeightedCombinationLaw:
    """Convex combination of the four base laws, weights fitted jointly.

    Raw weights live on [1e-4, 1e4] and are normalized to the simplex inside
    the evaluation, so the fitted weights are scale-free.
    """

    name = "weighted_combination"
    n_params = 4 + 3 + 3 + 3 + 4
    reduced_dim = 0

    def __init__(self):
        self.members = (InversePowerLaw(), VaporPressureLaw(), LogPowerLaw(), ExponentialLaw())
        self.param_names = tuple(f"w_{m.name}" for m in self.members) + tuple(
            f"{m.name}.{p}" for m in self.members for p in m.param_names
        )
        self.lower = np.concatenate([[1e-4] * 4] + [m.lower for m in self.members])
        self.upper = np.concatenate([[1e4] * 4] + [m.upper for m in self.members])

    def _split(self, params):
        raw = params[..., :4]
        offs = 4
        member_params = []
        for m in self.members:
            member_params.append(params[..., offs : offs + m.n_params])
            offs += m.n_params
        return raw, member_params

    def weights(self, params):
        raw, _ = self._split(params)
        return raw / raw.sum(axis=-1, keepdims=True)

    def evaluate(self, params, D):
        raw, member_params = self._split(params)
        pi = raw / raw.sum(axis=-1, keepdims=True)
        vals = [m.evaluate(p, D) for m, p in zip(self.members, member_params)]
        out = np.zeros(params.shape[:1] + (D.size,))
        for j, v in enumerate(vals):
            out += pi[..., j : j + 1] * v
        return out

    def jacobian(self, params, D):
        raw, member_params = self._split(params)
        total = raw.sum(axis=-1, keepdims=True)
        pi = raw / total
        vals = [m.evaluate(p, D) for m, p in zip(self.members, member_params)]
        f = np.zeros(params.shape[:1] + (D.size,))
        for j, v in enumerate(vals):
            f += pi[..., j : j + 1] * v
        jac = np.empty(params.shape[:1] + (D.size, self.n_params))
        for j, v in enumerate(vals):
            jac[..., j] = (v - f) / total
        offs = 4
        for j, m in enumerate(self.members):
            jac[..., offs : offs + m.n_params] = (
                pi[..., j : j + 1, None] * m.jacobian(member_params[j], D)
            )
            offs += m.n_params
        return jac

    def initial_params(self, d_pts, targets, rng, n_starts):
        n = targets.shape[0]
        out = np.empty((n_starts, n, self.n_params))
        member_inits = [m.initial_params(d_pts, targets, rng, n_starts) for m in self.members]
        for s in range(n_starts):
            raw = np.ones((n, 4)) if s == 0 else rng.uniform(0.25, 4.0, size=(n, 4))
            out[s, :, :4] = raw
            offs = 4
            for j, m in enumerate(self.members):
                out[s, :, offs : offs + m.n_params] = member_inits[j][s]
                offs += m.n_params
        return out


LAWS = {
    law.name: law
    for law in (
        InversePowerLaw(),
        VaporPressureLaw(),
        LogPowerLaw(),
        ExponentialLaw(),
        WeightedCombinationLaw(),
    )
}


def get_law(name: str):
    try:
        return LAWS[name]
    except KeyError:
        raise KeyError(f"unknown law {name!r}; known: {sorted(LAWS)}") from None
