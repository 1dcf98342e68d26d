"""Test-space generators, file formats and report tables."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
from scipy.sparse.csgraph import shortest_path

from .embedding import Certificate, CoordinateMeta, Embedding, audit_embedding
from .errors import (BadSpec, InvariantError, MetricAxiomError, ParseError, SchemaError, ShapeMismatch,
                     SpaceIOError)
from .metric import FiniteMetricSpace, validate_metric

PRNG_ID = "numpy.random.PCG64"
GRID = 1e-6
KINDS = ("lp_sample", "graph_metric", "l1_config", "counterexample", "csv", "json")
REPORT_COLUMNS = ("kind", "n", "seed", "lambda_target", "distortion", "coords", "max_coord_lip", "min_margin")


@dataclass(frozen=True)
class SpaceSpec:
    """Recipe for a test space.

    ``lp_sample``: ``n`` points in R^dim under the p-norm, uniform in
    ``[0, scale)^dim`` (``layout="random"``) or ``{+-scale e_i}``
    (``layout="cross"``).  ``graph_metric``: shortest paths on a random
    spanning tree plus Erdos-Renyi edges with probability ``edge_prob``.
    ``l1_config``: ``0, +-e0`` and ``+-e_i, +-e0 +- e_i`` for ``i <= dim``.
    ``counterexample``: the pigeonhole space for ``p_max``.
    ``csv``/``json``: read from ``path``.
    """

    kind: str
    n: int = 10
    p: float = 2.0
    dim: int = 3
    seed: int = 0
    scale: float = 1.0
    layout: str = "random"
    edge_prob: float | None = None
    p_max: int = 4
    path: str | None = None

    def validate(self) -> "SpaceSpec":
        if self.kind not in KINDS:
            raise BadSpec(f"unknown kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        if self.kind in ("lp_sample", "graph_metric") and self.n < 1:
            raise BadSpec("n must be >= 1")
        if self.kind in ("lp_sample", "l1_config") and not self.p >= 1:
            raise BadSpec("p must be >= 1")
        if self.kind in ("lp_sample", "l1_config") and self.dim < 1:
            raise BadSpec("dim must be >= 1")
        if self.kind == "lp_sample" and self.layout not in ("random", "cross"):
            raise BadSpec(f"unknown layout {self.layout!r}")
        if self.kind == "lp_sample" and self.layout == "cross" and self.n % 2:
            raise BadSpec("cross layout needs an even n")
        if not self.scale > 0:
            raise BadSpec("scale must be positive")
        if self.edge_prob is not None and not 0 <= self.edge_prob <= 1:
            raise BadSpec("edge_prob must lie in [0, 1]")
        if self.kind == "counterexample" and self.p_max < 1:
            raise BadSpec("p_max must be >= 1")
        if self.kind in ("csv", "json") and not self.path:
            raise BadSpec(f"kind {self.kind!r} needs a path")
        return self

    def to_json(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_json(cls, obj: dict) -> "SpaceSpec":
        known = {f.name for f in fields(cls)}
        extra = set(obj) - known
        if extra:
            raise BadSpec(f"unknown spec fields: {sorted(extra)}")
        if "kind" not in obj:
            raise BadSpec("spec needs a kind")
        return cls(**obj).validate()


def _quantize(x: np.ndarray) -> np.ndarray:
    return np.round(np.asarray(x, dtype=float) / GRID) * GRID


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _lp_sample(spec: SpaceSpec) -> FiniteMetricSpace:
    if spec.layout == "cross":
        k = spec.n // 2
        eye = np.eye(k) * spec.scale
        pts = np.empty((2 * k, k))
        pts[0::2], pts[1::2] = eye, -eye
        labels = [f"{s}e{i}" for i in range(k) for s in "+-"]
        return FiniteMetricSpace.from_points(pts, p=spec.p, labels=labels)
    pts = _quantize(_rng(spec.seed).random((spec.n, spec.dim)) * spec.scale)
    return FiniteMetricSpace.from_points(pts, p=spec.p)


def _graph_metric(spec: SpaceSpec) -> FiniteMetricSpace:
    n = spec.n
    rng = _rng(spec.seed)
    prob = spec.edge_prob if spec.edge_prob is not None else min(1.0, 3.0 / max(n, 1))
    # integer weights in grid units keep the closure exactly symmetric
    units = np.maximum(np.round(rng.uniform(0.1, 1.0, size=(n, n)) * spec.scale / GRID), 1.0)
    W = np.zeros((n, n))
    for i in range(1, n):
        j = int(rng.integers(0, i))
        W[i, j] = units[i, j]
    extra = np.tril(rng.random((n, n)) < prob, -1) & (W == 0)
    W[extra] = units[extra]
    W = W + W.T
    return validate_metric(shortest_path(W, method="D", directed=False) * GRID)


def _l1_config(spec: SpaceSpec) -> FiniteMetricSpace:
    k = spec.dim
    e = np.eye(k + 1) * spec.scale
    pts, labels = [np.zeros(k + 1), e[0], -e[0]], ["0", "+e0", "-e0"]
    for i in range(1, k + 1):
        for s0, v0 in (("", 0.0), ("+e0", 1.0), ("-e0", -1.0)):
            for si, vi in (("+", 1.0), ("-", -1.0)):
                pts.append(v0 * e[0] + vi * e[i])
                labels.append(f"{s0}{si}e{i}")
    return FiniteMetricSpace.from_points(np.array(pts), p=spec.p, labels=labels)


def generate(spec: SpaceSpec) -> FiniteMetricSpace:
    """Deterministic space for a spec; same spec, same bits."""
    spec.validate()
    if spec.kind == "lp_sample":
        return _lp_sample(spec)
    if spec.kind == "graph_metric":
        return _graph_metric(spec)
    if spec.kind == "l1_config":
        return _l1_config(spec)
    if spec.kind == "counterexample":
        from .cone import counterexample_space
        return counterexample_space(spec.p_max)
    return load_space(spec.path)


def standard_corpus(seed: int = 0) -> list[SpaceSpec]:
    """100 random point samples (n <= 60) and 20 graph metrics (n <= 100)."""
    rng = _rng(seed)
    out = []
    for i in range(100):
        n = int(rng.integers(2, 61))
        dim = int(rng.integers(1, 7))
        p = (1.0, 2.0, math.inf)[i % 3]
        out.append(SpaceSpec("lp_sample", n=n, p=p, dim=dim, seed=seed * 1000 + i))
    for i in range(20):
        n = int(rng.integers(20, 101))
        out.append(SpaceSpec("graph_metric", n=n, seed=seed * 1000 + 500 + i))
    return out


def lp_corpus(p: float, count: int = 30, seed: int = 0, n_max: int = 40, dim_max: int = 6) -> list[SpaceSpec]:
    rng = _rng(seed + 7)
    return [SpaceSpec("lp_sample", n=int(rng.integers(2, n_max + 1)), p=p,
                      dim=int(rng.integers(1, dim_max + 1)), seed=seed * 1000 + 800 + i)
            for i in range(count)]


# -- spaces on disk -------------------------------------------------------------


def _read_text(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise SpaceIOError(f"cannot read {path}: {exc}") from exc


def _write_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_text(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise SpaceIOError(f"cannot write {path}: {exc}") from exc


def _num(v: float) -> str:
    return repr(float(v))


def space_to_csv(space: FiniteMetricSpace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([space.n])
    for i, row in enumerate(space.dist):
        cells = [_num(v) for v in row]
        if space.labels is not None:
            cells.append(space.labels[i])
        w.writerow(cells)
    return buf.getvalue()


def space_from_csv(text: str) -> FiniteMetricSpace:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ParseError("empty file", 1, 1)
    try:
        n = int(rows[0][0].strip()) if len(rows[0]) == 1 else None
    except ValueError:
        n = None
    if n is None or n < 0:
        raise ParseError("line 1 must hold the point count", 1, 1)
    body = [r for r in rows[1:]]
    while body and not any(c.strip() for c in body[-1]):
        body.pop()
    if len(body) != n:
        raise ParseError(f"expected {n} matrix rows, found {len(body)}", min(len(body) + 2, len(rows) + 1), 1)
    M = np.empty((n, n))
    labels: list[str] = []
    for i, row in enumerate(body):
        line = i + 2
        if len(row) not in (n, n + 1):
            raise ParseError(f"expected {n} values (plus an optional label), found {len(row)}", line, 1)
        for j in range(n):
            try:
                M[i, j] = float(row[j])
            except ValueError:
                raise ParseError(f"not a number: {row[j]!r}", line, j + 1) from None
        if len(row) == n + 1:
            labels.append(row[n].strip())
    if labels and len(labels) != n:
        raise ParseError("labels must be given on every row or on none", 2, n + 1)
    return validate_metric(M, labels=labels or None)


def _schema(cond: bool, msg: str, path: str) -> None:
    if not cond:
        raise SchemaError(msg, path)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _number_matrix(obj, path: str, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    _schema(isinstance(obj, list), "expected a list", path)
    if rows is not None:
        _schema(len(obj) == rows, f"expected {rows} rows, found {len(obj)}", path)
    for i, row in enumerate(obj):
        _schema(isinstance(row, list), "expected a list", f"{path}[{i}]")
        if cols is not None:
            _schema(len(row) == cols, f"expected {cols} entries, found {len(row)}", f"{path}[{i}]")
        for j, v in enumerate(row):
            _schema(_is_num(v), "expected a number", f"{path}[{i}][{j}]")
    widths = {len(r) for r in obj}
    _schema(len(widths) <= 1, "rows have different lengths", path)
    return np.array(obj, dtype=float).reshape(len(obj), widths.pop() if widths else 0)


def _parse_json(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, exc.colno) from None


def space_to_json(space: FiniteMetricSpace) -> str:
    if space.has_coords:
        obj: dict[str, Any] = {"p": space.p, "points": space.coords.tolist()}
    else:
        obj = {"matrix": space.dist.tolist()}
    if space.labels is not None:
        obj["labels"] = list(space.labels)
    return json.dumps(obj, allow_nan=True) + "\n"


def space_from_json(text: str) -> FiniteMetricSpace:
    obj = _parse_json(text)
    _schema(isinstance(obj, dict), "expected an object", "$")
    labels = obj.get("labels")
    if labels is not None:
        _schema(isinstance(labels, list) and all(isinstance(s, str) for s in labels),
                "expected a list of strings", "$.labels")
    if "points" in obj:
        p = obj.get("p", 2.0)
        _schema(_is_num(p) or p in ("inf", "Infinity"), "expected a number", "$.p")
        p = math.inf if p in ("inf", "Infinity") else float(p)
        pts = _number_matrix(obj["points"], "$.points")
        if labels is not None:
            _schema(len(labels) == len(pts), "one label per point", "$.labels")
        return FiniteMetricSpace.from_points(pts, p=p, labels=labels)
    _schema("matrix" in obj, "expected 'points' or 'matrix'", "$")
    M = _number_matrix(obj["matrix"], "$.matrix")
    return validate_metric(M, labels=labels)


def save_space(space: FiniteMetricSpace, path) -> None:
    text = space_to_json(space) if str(path).endswith(".json") else space_to_csv(space)
    _write_text(path, text)


def load_space(path) -> FiniteMetricSpace:
    """Read a CSV matrix or a JSON file; the metric axioms are re-checked."""
    text = _read_text(path)
    try:
        if str(path).endswith(".json"):
            return space_from_json(text)
        return space_from_csv(text)
    except MetricAxiomError as exc:
        raise InvariantError(f"{path}: {exc}") from exc


# -- embeddings on disk --------------------------------------------------------------


def embedding_to_json(emb: Embedding, cert: Certificate | None = None) -> dict:
    n = emb.n
    w = emb.witness
    wit = []
    if w is not None:
        xs, ys = np.nonzero(np.triu(np.ones((n, n), dtype=bool), 1))
        wit = [[int(x), int(y), int(w[x, y])] for x, y in zip(xs, ys)]
    out: dict[str, Any] = {
        "lambda": emb.lam,
        "n": n,
        "kind": emb.kind,
        "coords": emb.matrix.tolist(),
        "meta": [m.to_json() for m in emb.meta],
        "cert": {"witness": wit},
        "order": list(emb.order),
        "eps": list(emb.eps),
        "decay": emb.decay,
    }
    if cert is not None:
        out["cert"]["min_lower_margin"] = cert.min_lower_margin
        out["cert"]["max_coord_lip"] = cert.max_coord_lip
        out["cert"]["distortion"] = cert.distortion
    if emb.cone:
        out["cone"] = True
    return out


def save_embedding(emb: Embedding, path, space: FiniteMetricSpace | None = None, mode: str | None = None) -> None:
    """Write the embedding; with ``space`` the audit's margins go into ``cert``."""
    cert = None
    if space is not None:
        res = audit_embedding(space, emb, emb.lam, mode or ("good" if emb.witness is not None else "plain"))
        cert = res if res.ok else None
    _write_text(path, json.dumps(embedding_to_json(emb, cert)) + "\n")


def embedding_from_json(obj, space: FiniteMetricSpace | None = None) -> Embedding:
    _schema(isinstance(obj, dict), "expected an object", "$")
    for key in ("lambda", "n", "coords", "meta"):
        _schema(key in obj, f"missing key {key!r}", f"$.{key}")
    _schema(_is_num(obj["lambda"]), "expected a number", "$.lambda")
    _schema(isinstance(obj["n"], int) and obj["n"] >= 0, "expected a nonnegative integer", "$.n")
    n = obj["n"]
    M = _number_matrix(obj["coords"], "$.coords", cols=n)
    if M.shape[0] == 0:
        M = M.reshape(0, n)
    meta_in = obj["meta"]
    _schema(isinstance(meta_in, list) and len(meta_in) == M.shape[0], "one meta entry per coordinate", "$.meta")
    meta = []
    for i, m in enumerate(meta_in):
        path = f"$.meta[{i}]"
        _schema(isinstance(m, dict), "expected an object", path)
        for key in ("block", "c", "scale", "U", "V"):
            _schema(key in m, f"missing key {key!r}", f"{path}.{key}")
        _schema(isinstance(m["block"], int), "expected an integer", f"{path}.block")
        for key in ("c", "scale"):
            _schema(_is_num(m[key]), "expected a number", f"{path}.{key}")
        for key in ("U", "V"):
            _schema(isinstance(m[key], list) and all(isinstance(v, int) and 0 <= v < n for v in m[key]),
                    f"expected point indices below {n}", f"{path}.{key}")
        meta.append(CoordinateMeta(m["block"], float(m["c"]), float(m["scale"]), tuple(m["U"]),
                                   tuple(m["V"]), float(m.get("eps", 0.0)), bool(m.get("swapped", False))))
    witness = None
    cert = obj.get("cert", {})
    _schema(isinstance(cert, dict), "expected an object", "$.cert")
    wit = cert.get("witness", [])
    _schema(isinstance(wit, list), "expected a list", "$.cert.witness")
    if wit:
        witness = np.full((n, n), -1, dtype=np.int64)
        for i, t in enumerate(wit):
            _schema(isinstance(t, list) and len(t) == 3 and all(isinstance(v, int) for v in t)
                    and 0 <= t[0] < n and 0 <= t[1] < n and 0 <= t[2] < M.shape[0],
                    "expected [x, y, coordinate]", f"$.cert.witness[{i}]")
            witness[t[0], t[1]] = witness[t[1], t[0]] = t[2]
    order = obj.get("order", [])
    eps = obj.get("eps", [])
    _schema(isinstance(order, list) and all(isinstance(v, int) for v in order), "expected integers", "$.order")
    _schema(isinstance(eps, list) and all(_is_num(v) for v in eps), "expected numbers", "$.eps")
    if space is not None and space.n != n:
        raise ShapeMismatch(f"embedding has {n} points but the space has {space.n}")
    return Embedding(float(obj["lambda"]), n, M, tuple(meta), witness, tuple(order), tuple(float(e) for e in eps),
                     cone=bool(obj.get("cone", False)), decay=float(obj.get("decay", 1.0)),
                     kind=str(obj.get("kind", "good")))


def load_embedding(path, space: FiniteMetricSpace | None = None) -> Embedding:
    return embedding_from_json(_parse_json(_read_text(path)), space)


# -- reports --------------------------------------------------------------------


def report_row(spec: SpaceSpec, space: FiniteMetricSpace, lam: float, emb: Embedding,
               cert: Certificate) -> dict:
    margin = cert.min_lower_margin
    if cert.mode == "strict":
        margin = min(margin, cert.min_upper_margin)
    return {"kind": spec.kind, "n": space.n, "seed": spec.seed, "lambda_target": lam,
            "distortion": cert.distortion, "coords": emb.dim, "max_coord_lip": cert.max_coord_lip,
            "min_margin": margin}


def report_to_csv(rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (_num(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def save_report(rows: Sequence[dict], path) -> None:
    if str(path).endswith(".json"):
        _write_text(path, json.dumps(list(rows), indent=1) + "\n")
    else:
        _write_text(path, report_to_csv(rows))
