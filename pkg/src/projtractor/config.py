"""
Geometry configuration: schema, validation and TOML loading.

A configuration file looks like::

    name = "warped"
    dimension = 2
    coordinates = ["x", "y"]          # optional, defaults to x, y, z, ...
    metric = [["1 + x^2", "0"], ["0", "1"]]
    # or: connection = [...]          # nested [a][b][c] = Gamma_ab^c
    upsilon = ["0", "x"]              # optional projective change
    jet_order = 6                     # optional
    box = { lower = [-0.8, -0.8], upper = [0.8, 0.8] }

    [[killing]]
    rank = 2
    components = [["1 + x^2", "0"], ["0", "1"]]
    lift = true                       # multiply by det(g)^(-r/(n+1))
    label = "metric"

Numbers are accepted wherever an expression string is.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli

from .errors import ConfigError, ExprNameError, ExprSyntaxError, ProjTractorError
from .expr import default_names, eval_expr, parse
from .geometry import AffineStructure
from .jets import DEFAULT_ORDER
from .killing import KillingCandidate

DEFAULT_BOX = (-0.8, 0.8)
_KEYS = {"name", "dimension", "coordinates", "metric", "connection", "upsilon", "jet_order", "box", "killing"}
_SYMMETRY_TOL = 1e-12


@dataclass(frozen=True)
class GeometryConfig:
    """A validated geometry on a single chart.

    Exactly one of ``metric`` (``n x n`` strings) and ``connection``
    (``n x n x n`` strings, ``[a][b][c] = Gamma_ab^c``) is set.
    """

    name: str
    n: int
    names: tuple[str, ...]
    metric: tuple | None = None
    connection: tuple | None = None
    upsilon: tuple | None = None
    box: tuple[tuple[float, ...], tuple[float, ...]] = ()
    jet_order: int = DEFAULT_ORDER
    killing: tuple[KillingCandidate, ...] = field(default=())

    def structure(self, jet_order: int | None = None) -> AffineStructure:
        return AffineStructure(
            n=self.n,
            gamma=_lists(self.connection),
            metric=_lists(self.metric),
            name=self.name,
            names=self.names,
            upsilons=() if self.upsilon is None else (tuple(self.upsilon),),
            box=self.box,
            order=self.jet_order if jet_order is None else jet_order,
        )

    def candidates(self, rank: int | None = None) -> list[KillingCandidate]:
        return [c for c in self.killing if rank is None or c.rank == rank]


def _lists(t):
    if t is None:
        return None
    if isinstance(t, tuple):
        return [_lists(x) for x in t]
    return t


def _as_text(value, where: str) -> str:
    if isinstance(value, bool):
        raise ConfigError(f"{where}: expected an expression, got a boolean")
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        return value
    raise ConfigError(f"{where}: expected an expression, got {type(value).__name__}")


def _nested_text(value, depth: int, n: int, where: str):
    if depth == 0:
        return _as_text(value, where)
    if not isinstance(value, (list, tuple)) or len(value) != n:
        raise ConfigError(f"{where}: expected a list of {n} entries")
    return tuple(_nested_text(v, depth - 1, n, f"{where}[{i}]") for i, v in enumerate(value))


def _parse_all(tree, depth: int, names, where: str):
    if depth == 0:
        try:
            return parse(tree, names)
        except (ExprSyntaxError, ExprNameError) as exc:
            raise ConfigError(f"{where}: {exc}") from exc
    return [_parse_all(t, depth - 1, names, f"{where}[{i}]") for i, t in enumerate(tree)]


def _sample_values(exprs, depth: int, points: np.ndarray, where: str) -> np.ndarray:
    if depth == 0:
        try:
            return np.array([float(eval_expr(exprs, p)) for p in points])
        except ProjTractorError as exc:
            raise ConfigError(f"{where}: {exc}") from exc
    return np.stack([_sample_values(e, depth - 1, points, where) for e in exprs])


def _check_symmetric(values: np.ndarray, axes: tuple[int, int], what: str) -> None:
    # values has the component axes first and the sample axis last
    dev = float(np.max(np.abs(values - np.swapaxes(values, *axes)), initial=0.0))
    if not np.isfinite(dev) or dev > _SYMMETRY_TOL * max(1.0, float(np.max(np.abs(values), initial=0.0))):
        raise ConfigError(f"{what} is not symmetric (deviation {dev:.3g} at sample points)")


def validate(raw: dict) -> GeometryConfig:
    """Check a parsed mapping against the schema and build a :class:`GeometryConfig`."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a table")
    unknown = set(raw) - _KEYS
    if unknown:
        raise ConfigError(f"unknown keys: {sorted(unknown)}")
    for key in ("name", "dimension"):
        if key not in raw:
            raise ConfigError(f"missing field {key!r}")
    name = raw["name"]
    if not isinstance(name, str) or not name:
        raise ConfigError("name must be a non-empty string")
    n = raw["dimension"]
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise ConfigError("dimension must be a positive integer")
    names = tuple(raw.get("coordinates") or default_names(n))
    if len(names) != n or len(set(names)) != n or not all(isinstance(s, str) and s.isidentifier() for s in names):
        raise ConfigError(f"coordinates must be {n} distinct identifiers")
    has_metric, has_conn = "metric" in raw, "connection" in raw
    if has_metric == has_conn:
        raise ConfigError("give exactly one of 'metric' and 'connection'")

    box = raw.get("box", {"lower": [DEFAULT_BOX[0]] * n, "upper": [DEFAULT_BOX[1]] * n})
    try:
        lower = tuple(float(v) for v in box["lower"])
        upper = tuple(float(v) for v in box["upper"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError("box needs numeric 'lower' and 'upper' lists") from exc
    if len(lower) != n or len(upper) != n or not all(a < b for a, b in zip(lower, upper)):
        raise ConfigError("box bounds must have n entries with lower < upper")

    order = raw.get("jet_order", DEFAULT_ORDER)
    if not isinstance(order, int) or isinstance(order, bool) or order < 2:
        raise ConfigError("jet_order must be an integer >= 2")

    rng = np.random.default_rng(0)
    samples = rng.uniform(lower, upper, size=(5, n))
    metric = connection = None
    if has_metric:
        metric = _nested_text(raw["metric"], 2, n, "metric")
        vals = _sample_values(_parse_all(metric, 2, names, "metric"), 2, samples, "metric")
        _check_symmetric(vals, (0, 1), "metric")
    else:
        connection = _nested_text(raw["connection"], 3, n, "connection")
        vals = _sample_values(_parse_all(connection, 3, names, "connection"), 3, samples, "connection")
        _check_symmetric(vals, (0, 1), "connection (lower indices)")
    upsilon = None
    if "upsilon" in raw:
        upsilon = _nested_text(raw["upsilon"], 1, n, "upsilon")
        _parse_all(upsilon, 1, names, "upsilon")

    killing = []
    for i, entry in enumerate(raw.get("killing", [])):
        where = f"killing[{i}]"
        if not isinstance(entry, dict) or "rank" not in entry or "components" not in entry:
            raise ConfigError(f"{where}: needs 'rank' and 'components'")
        r = entry["rank"]
        if not isinstance(r, int) or isinstance(r, bool) or r < 1:
            raise ConfigError(f"{where}: rank must be a positive integer")
        comps = _nested_text(entry["components"], r, n, f"{where}.components")
        vals = _sample_values(_parse_all(comps, r, names, f"{where}.components"), r, samples, where)
        for a, b in itertools.combinations(range(r), 2):
            _check_symmetric(vals, (a, b), f"{where}.components")
        lift = bool(entry.get("lift", False))
        if lift and not has_metric:
            raise ConfigError(f"{where}: 'lift' needs a metric")
        killing.append(KillingCandidate(r, _lists(comps), lift, str(entry.get("label", f"killing-{i}"))))

    return GeometryConfig(
        name=name,
        n=n,
        names=names,
        metric=metric,
        connection=connection,
        upsilon=upsilon,
        box=(lower, upper),
        jet_order=order,
        killing=tuple(killing),
    )


def load_config(source) -> GeometryConfig:
    """A built-in catalog name or the path of a TOML file.

    Raises
    ------
    ConfigError
        Unreadable file, TOML syntax error or schema violation.
    """
    from .catalog import CATALOG

    if isinstance(source, str) and source in CATALOG:
        return CATALOG[source]
    path = Path(source)
    if isinstance(source, str) and not path.exists() and path.suffix != ".toml" and "/" not in source:
        raise ConfigError(f"unknown geometry {source!r}; built-in: {', '.join(CATALOG)}")
    try:
        text = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror or exc}") from exc
    try:
        raw = tomli.loads(text.decode("utf-8"))
    except (tomli.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return validate(raw)


def with_upsilon(cfg: GeometryConfig, upsilon, suffix: str = "changed") -> GeometryConfig:
    """The same geometry after a projective change by the one-form ``upsilon``."""
    if cfg.upsilon is not None:
        raise ConfigError(f"{cfg.name} already carries a projective change")
    ups = _nested_text(list(upsilon), 1, cfg.n, "upsilon")
    _parse_all(ups, 1, cfg.names, "upsilon")
    return GeometryConfig(
        name=f"{cfg.name}-{suffix}",
        n=cfg.n,
        names=cfg.names,
        metric=cfg.metric,
        connection=cfg.connection,
        upsilon=ups,
        box=cfg.box,
        jet_order=cfg.jet_order,
        killing=cfg.killing,
    )
