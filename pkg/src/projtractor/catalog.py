"""Built-in geometries and their known Killing tensors."""

from __future__ import annotations

from .config import GeometryConfig, validate, with_upsilon

_CONFORMAL = {
    "sphere2": "4/(1+x^2+y^2)^2",
    "hyperbolic2": "4/(1-x^2-y^2)^2",
    "liouville": "(1+x^2)+(1+y^4)",
    "perturbed2": "1+0.3*x^2*y",
}


def _flat(n: int) -> dict:
    zero = [[["0"] * n for _ in range(n)] for _ in range(n)]
    eye = [["1" if i == j else "0" for j in range(n)] for i in range(n)]
    rot = ["-y", "x"] + ["0"] * (n - 2)
    return {
        "name": f"flat{n}",
        "dimension": n,
        "connection": zero,
        "killing": [
            {"rank": 1, "components": rot, "label": "rotation"},
            {"rank": 1, "components": ["1"] + ["0"] * (n - 1), "label": "translation"},
            {"rank": 2, "components": eye, "label": "metric"},
        ],
    }


def _conformal(name: str, factor: str, half_width: float) -> dict:
    metric = [[factor, "0"], ["0", factor]]
    killing = [{"rank": 2, "components": metric, "lift": True, "label": "metric"}]
    if name in ("sphere2", "hyperbolic2"):
        rot = [f"-y*({factor})", f"x*({factor})"]
        killing.insert(0, {"rank": 1, "components": rot, "lift": True, "label": "rotation"})
    if name == "liouville":
        f, g = "(1+x^2)", "(1+y^4)"
        hat = [[f"({factor})*{g}", "0"], ["0", f"-({factor})*{f}"]]
        killing.append({"rank": 2, "components": hat, "lift": True, "label": "liouville-quadratic"})
    return {
        "name": name,
        "dimension": 2,
        "metric": metric,
        "box": {"lower": [-half_width] * 2, "upper": [half_width] * 2},
        "killing": killing,
    }


def _build() -> dict[str, GeometryConfig]:
    raw = [_flat(2), _flat(3)]
    for name, factor in _CONFORMAL.items():
        # the Poincare disk chart stays well inside the unit circle
        raw.append(_conformal(name, factor, 0.6 if name == "hyperbolic2" else 0.8))
    base = [validate(r) for r in raw]
    out = {c.name: c for c in base}
    for c in base:
        ups = ["0", "x"] + ["0"] * (c.n - 2)
        changed = with_upsilon(c, ups)
        out[changed.name] = changed
    return out


CATALOG: dict[str, GeometryConfig] = _build()
BASE_GEOMETRIES = ("flat2", "flat3", "sphere2", "hyperbolic2", "liouville", "perturbed2")


def geometry(name: str) -> GeometryConfig:
    """Catalog entry ``name`` (``<base>-changed`` for the projectively changed variant)."""
    from .errors import ConfigError

    try:
        return CATALOG[name]
    except KeyError:
        raise ConfigError(f"unknown geometry {name!r}; known: {', '.join(sorted(CATALOG))}") from None
