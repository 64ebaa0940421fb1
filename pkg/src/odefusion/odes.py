"""Catalog of chaotic/multiscale ODE families and instance sampling.

Fifteen families: twelve 3D systems, two 4D systems (double pendulum and
the 4-variable cyclic Lorenz 96), and the 5-variable Lorenz 96.  Each
family builds a SystemExpr in additive-term normal form from its named
parameters; instances perturb every named parameter uniformly within a
relative half-width lam of its base value and draw the initial condition
from a hypercube.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .symbolic import (SystemExpr, add, add_terms, const, cos, div, mul, neg,
                       pow_, sin, sub, var)


@dataclass(frozen=True)
class SamplingConfig:
    lam: float = 0.10       # relative half-width of coefficient interval
    ic_box: float = 2.0     # initial conditions uniform in [-ic_box, ic_box]^d

    def __post_init__(self):
        if not 0.0 <= self.lam < 1.0:
            raise ValueError("lam must be in [0, 1) to preserve signs")
        if self.ic_box <= 0:
            raise ValueError("ic_box must be positive")


@dataclass(frozen=True)
class OdeFamily:
    name: str
    dim: int
    params: tuple[tuple[str, float], ...]
    build: Callable[[dict], SystemExpr] = field(repr=False)
    # double pendulum's rational-trigonometric right-hand side is not a
    # sum of terms; term add/delete corruption does not apply to it
    additive: bool = True


def _thomas(p):
    b = p["b"]
    comps = tuple(
        add_terms([sin(var((i + 1) % 3)), mul(const(-b), var(i))])
        for i in range(3))
    return SystemExpr(3, comps)


def _lorenz3d(p):
    s, beta, rho = p["sigma"], p["beta"], p["rho"]
    c0 = add_terms([mul(const(s), var(1)), mul(const(-s), var(0))])
    c1 = add_terms([mul(const(rho), var(0)), neg(mul(var(0), var(2))),
                    neg(var(1))])
    c2 = add_terms([mul(var(0), var(1)), mul(const(-beta), var(2))])
    return SystemExpr(3, (c0, c1, c2))


def _aizawa(p):
    a, b, c, d, f = p["a"], p["b"], p["c"], p["d"], p["f"]
    c0 = add_terms([mul(var(2), var(0)), mul(const(-b), var(0)),
                    mul(const(-d), var(1))])
    c1 = add_terms([mul(const(d), var(0)), mul(var(2), var(1)),
                    mul(const(-b), var(1))])
    c2 = add_terms([const(c), mul(const(a), var(2)),
                    mul(const(-1.0 / 3.0), pow_(var(2), const(3.0))),
                    neg(pow_(var(0), const(2.0))),
                    mul(const(f), mul(var(2), pow_(var(0), const(3.0))))])
    return SystemExpr(3, (c0, c1, c2))


def _chen_lee(p):
    a, d = p["a"], p["d"]
    c0 = add_terms([mul(const(a), var(0)), neg(mul(var(1), var(2)))])
    c1 = add_terms([mul(const(-10.0), var(1)), mul(var(0), var(2))])
    c2 = add_terms([mul(const(d), var(2)),
                    mul(const(1.0 / 3.0), mul(var(0), var(1)))])
    return SystemExpr(3, (c0, c1, c2))


def _dadras(p):
    a, b, c, d, e = p["a"], p["b"], p["c"], p["d"], p["e"]
    c0 = add_terms([mul(const(0.5), var(1)), mul(const(-a), var(0)),
                    mul(const(b), mul(var(1), var(2)))])
    c1 = add_terms([mul(const(c), var(1)),
                    mul(const(-0.5), mul(var(0), var(2))),
                    mul(const(0.5), var(2))])
    c2 = add_terms([mul(const(d), mul(var(0), var(1))),
                    mul(const(-e), var(2))])
    return SystemExpr(3, (c0, c1, c2))


def _rossler(p):
    a, b, c = p["a"], p["b"], p["c"]
    c0 = add_terms([neg(var(1)), neg(var(2))])
    c1 = add_terms([var(0), mul(const(a), var(1))])
    c2 = add_terms([const(b), mul(var(0), var(2)), mul(const(-c), var(2))])
    return SystemExpr(3, (c0, c1, c2))


def _halvorsen(p):
    a = p["a"]
    idx = [(0, 1, 2), (1, 2, 0), (2, 0, 1)]
    comps = tuple(
        add_terms([mul(const(a), var(i)), neg(var(j)), neg(var(k)),
                   mul(const(-0.25), pow_(var(j), const(2.0)))])
        for i, j, k in idx)
    return SystemExpr(3, comps)


def _rabinovich_fabrikant(p):
    alpha, gamma = p["alpha"], p["gamma"]
    c0 = add_terms([mul(var(1), var(2)), neg(var(1)),
                    mul(pow_(var(0), const(2.0)), var(1)),
                    mul(const(gamma), var(0))])
    c1 = add_terms([mul(const(3.0), mul(var(0), var(2))), var(0),
                    neg(pow_(var(0), const(3.0))),
                    mul(const(gamma), var(1))])
    c2 = add_terms([mul(const(-2.0 * alpha), var(2)),
                    mul(const(-2.0), mul(var(0), mul(var(1), var(2))))])
    return SystemExpr(3, (c0, c1, c2))


def _sprott_b(p):
    a, b, c = p["a"], p["b"], p["c"]
    c0 = mul(const(a), mul(var(1), var(2)))
    c1 = add_terms([var(0), mul(const(-b), var(1))])
    c2 = add_terms([const(c), neg(mul(var(0), var(1)))])
    return SystemExpr(3, (c0, c1, c2))


def _sprott_linz_f(p):
    a = p["a"]
    c0 = add(var(1), var(2))
    c1 = add_terms([neg(var(0)), mul(const(a), var(1))])
    c2 = add_terms([pow_(var(0), const(2.0)), neg(var(2))])
    return SystemExpr(3, (c0, c1, c2))


def _four_wing(p):
    a, b, c = p["a"], p["b"], p["c"]
    c0 = add_terms([mul(const(a), var(0)), mul(var(1), var(2))])
    c1 = add_terms([mul(const(b), var(0)), mul(const(c), var(1)),
                    neg(mul(var(0), var(2)))])
    c2 = add_terms([neg(var(2)), neg(mul(var(0), var(1)))])
    return SystemExpr(3, (c0, c1, c2))


def _duffing(p):
    alpha, beta, gamma = p["alpha"], p["beta"], p["gamma"]
    delta, omega = p["delta"], p["omega"]
    # autonomous 3D form: u1 plays the role of time
    c0 = const(1.0)
    c1 = var(2)
    c2 = add_terms([mul(const(-delta), var(2)), mul(const(-alpha), var(1)),
                    mul(const(-beta), pow_(var(1), const(3.0))),
                    mul(const(gamma), cos(mul(const(omega), var(0))))])
    return SystemExpr(3, (c0, c1, c2))


def _lorenz96(n):
    def build(p):
        f = p["F"]
        comps = []
        for i in range(n):
            ip1, im1, im2 = (i + 1) % n, (i - 1) % n, (i - 2) % n
            comps.append(add_terms([
                mul(var(ip1), var(im1)),
                neg(mul(var(im2), var(im1))),
                neg(var(i)),
                const(f)]))
        return SystemExpr(n, tuple(comps))
    return build


def _double_pendulum(p):
    g, l = p["g"], p["l"]
    gl = g / l
    delta = sub(var(0), var(1))            # u1 - u2
    denom = sub(const(3.0), cos(mul(const(2.0), delta)))
    num3 = add_terms([
        mul(const(-3.0 * gl), sin(var(0))),
        mul(const(-gl), sin(sub(var(0), mul(const(2.0), var(1))))),
        mul(const(-2.0),
            mul(sin(delta),
                add(pow_(var(3), const(2.0)),
                    mul(pow_(var(2), const(2.0)), cos(delta)))))])
    num4 = mul(sin(delta),
               add_terms([mul(const(4.0), pow_(var(2), const(2.0))),
                          mul(const(4.0 * gl), cos(var(0))),
                          mul(pow_(var(3), const(2.0)), cos(delta))]))
    return SystemExpr(4, (var(2), var(3), div(num3, denom), div(num4, denom)))


_FAMILIES: list[OdeFamily] = [
    OdeFamily("thomas", 3, (("b", 0.17),), _thomas),
    OdeFamily("lorenz3d", 3,
              (("sigma", 10.0), ("beta", 8.0 / 3.0), ("rho", 28.0)),
              _lorenz3d),
    OdeFamily("aizawa", 3,
              (("a", 0.95), ("b", 0.7), ("c", 0.6), ("d", 3.5), ("f", 0.1)),
              _aizawa),
    OdeFamily("chen_lee", 3, (("a", 5.0), ("d", -0.38)), _chen_lee),
    OdeFamily("dadras", 3,
              (("a", 1.25), ("b", 1.15), ("c", 0.75), ("d", 0.8), ("e", 4.0)),
              _dadras),
    OdeFamily("rossler", 3, (("a", 0.1), ("b", 0.1), ("c", 14.0)), _rossler),
    OdeFamily("halvorsen", 3, (("a", -0.35),), _halvorsen),
    OdeFamily("rabinovich_fabrikant", 3,
              (("alpha", 0.98), ("gamma", 0.1)), _rabinovich_fabrikant),
    OdeFamily("sprott_b", 3, (("a", 0.4), ("b", 1.2), ("c", 1.0)), _sprott_b),
    OdeFamily("sprott_linz_f", 3, (("a", 0.5),), _sprott_linz_f),
    OdeFamily("four_wing", 3, (("a", 0.2), ("b", 0.01), ("c", -0.4)),
              _four_wing),
    OdeFamily("duffing", 3,
              (("alpha", 1.0), ("beta", 5.0), ("gamma", 8.0),
               ("delta", 0.02), ("omega", 0.5)),
              _duffing),
    OdeFamily("lorenz96_4", 4, (("F", 8.0),), _lorenz96(4)),
    OdeFamily("double_pendulum", 4, (("g", 9.81), ("l", 1.0)),
              _double_pendulum, additive=False),
    OdeFamily("lorenz96_5", 5, (("F", 8.0),), _lorenz96(5)),
]


def catalog() -> list[OdeFamily]:
    return list(_FAMILIES)


def family_by_name(name: str) -> OdeFamily:
    for fam in _FAMILIES:
        if fam.name == name:
            return fam
    raise KeyError(f"unknown ODE family {name!r}")


def sample_params(family: OdeFamily, cfg: SamplingConfig,
                  rng: np.random.Generator) -> dict:
    """Each coefficient uniform in [F - lam*F, F + lam*F]."""
    return {name: base * (1.0 + cfg.lam * float(rng.uniform(-1.0, 1.0)))
            for name, base in family.params}


def sample_instance(family: OdeFamily, cfg: SamplingConfig,
                    rng: np.random.Generator
                    ) -> tuple[SystemExpr, np.ndarray]:
    params = sample_params(family, cfg, rng)
    u0 = rng.uniform(-cfg.ic_box, cfg.ic_box, size=family.dim)
    return family.build(params), u0
