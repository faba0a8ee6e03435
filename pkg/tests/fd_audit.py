"""Central-difference audit of every analytic derivative used by the kernels."""
import numpy as np

from corrspec.clt import (Linear, cross_a, prim_diag, prim_mean_diag_mrr_rmm,
                          prim_mean_diag_rr_rm, prim_pair, prim_pair_m)
from corrspec.contour import build_contour


def contour_points(ctx, k, rng):
    C = build_contour(ctx.support, num_nodes=512)
    return rng.choice(C.z, size=k, replace=False)


def _primitives(ctx):
    out = {"diag_rr_rm": lambda s: prim_mean_diag_rr_rm(ctx, s),
           "diag_mrr_rmm": lambda s: prim_mean_diag_mrr_rmm(ctx, s)}
    for key in ctx.tensors:
        if key.startswith("Gt"):
            out[f"pair_m:{key}"] = lambda s, key=key: prim_pair_m(ctx, s, key)
        else:
            out[f"pair:{key}"] = lambda s, key=key: prim_pair(ctx, s, key)
    for key in ctx.C:
        if key.startswith("G") and not isinstance(ctx.structure, Linear):
            continue
        out[f"diag:{key}"] = lambda s, key=key: prim_diag(ctx, s, key)
        out[f"diag_m:{key}"] = lambda s, key=key: prim_diag(ctx, s, key, with_m=True)
    out["m"] = lambda s: (s.m, s.dm)
    out["d"] = lambda s: (s.d, s.dd)
    return out


def _rel(fd, an):
    fd, an = np.asarray(fd), np.asarray(an)
    return float(np.max(np.abs(fd - an)) / max(1.0, float(np.max(np.abs(an)))))


def audit(ctx, ctx_h, z, h=1e-5) -> dict:
    """Worst relative error per derivative over the points ``z``."""
    worst = {}
    for name, f in _primitives(ctx).items():
        for z0 in z:
            _, an = f(ctx.nodes(np.array([z0])))
            vp, _ = f(ctx.nodes(np.array([z0 + h])))
            vm, _ = f(ctx.nodes(np.array([z0 - h])))
            worst[name] = max(worst.get(name, 0.0), _rel((vp - vm) / (2 * h), an))
    # cross terms a(z1, z2): pair each point with a partner on the other context
    pts = list(z)
    for z1, z2 in zip(pts, pts[1:] + pts[:1]):
        S = lambda a, b: cross_a(ctx, ctx_h, ctx.nodes(np.array([a])), ctx_h.nodes(np.array([b])))
        _, a1, a2, a12 = (v[0, 0] for v in S(z1, z2))
        A = lambda a, b: S(a, b)[0][0, 0]
        fd1 = (A(z1 + h, z2) - A(z1 - h, z2)) / (2 * h)
        fd2 = (A(z1, z2 + h) - A(z1, z2 - h)) / (2 * h)
        fd12 = (A(z1 + h, z2 + h) - A(z1 + h, z2 - h) - A(z1 - h, z2 + h) + A(z1 - h, z2 - h)) / (4 * h * h)
        for name, fd, an in (("a1", fd1, a1), ("a2", fd2, a2), ("a12", fd12, a12)):
            worst[f"cross:{name}"] = max(worst.get(f"cross:{name}", 0.0), _rel(fd, an))
    return worst
