"""Command-line front end: build, audit, gallery, report, counterexample.

Exit codes: 0 success, 1 construction error or failed audit, 2 I/O or
format error, 3 invalid configuration.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import gallery
from .cone import build_cone_embedding, counterexample_space, pigeonhole_audit
from .embedding import BuildConfig, audit_embedding, build_good_embedding, resolve_provider, strictify
from .errors import (BadSpec, ConstructionError, EmbedError, HypothesisViolated, InvariantError, ParseError,
                     SchemaError, ShapeMismatch, SpaceIOError)
from .metric import FiniteMetricSpace
from .partitions import PROVIDER_LAMBDA

EXIT_OK, EXIT_FAIL, EXIT_IO, EXIT_CONFIG = 0, 1, 2, 3
PROVIDER_CHOICES = ("auto", "fine", "annuli", "lp", "cone-annuli", "cone-lp")
CONE_PROVIDERS = ("cone-annuli", "cone-lp")


class ConfigError(Exception):
    pass


def parse_lambda(text: str) -> float:
    """A decimal, ``sqrt(x)``, or ``a^(1/b)``."""
    t = text.strip().replace(" ", "")
    m = re.fullmatch(r"sqrt\(([^)]+)\)", t)
    if m:
        return math.sqrt(float(m.group(1)))
    m = re.fullmatch(r"([0-9.]+)\^\(1/([0-9.]+)\)", t)
    if m:
        return float(m.group(1)) ** (1.0 / float(m.group(2)))
    try:
        return float(t)
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot read lambda from {text!r}") from None


@dataclass(frozen=True)
class RunConfig:
    lam: float
    provider: str = "auto"
    order: str = "farthest-first"
    eps_ratio: float | None = None
    cone: bool = False
    mode: str = "good"

    def check(self, space: FiniteMetricSpace) -> str:
        """Validate against the space and return the concrete provider."""
        lam = self.lam
        if not lam > 1:
            raise ConfigError(f"lambda must exceed 1 (no space has property pi(1)); got {lam!r}")
        cone = self.cone or self.provider in CONE_PROVIDERS
        if not cone and lam > 2:
            raise ConfigError(f"lambda {lam!r} > 2 needs --cone")
        if cone and lam > 3:
            raise ConfigError(f"cone builds need lambda <= 3, got {lam!r}")
        if self.eps_ratio is not None and not 0 < self.eps_ratio < 1:
            raise ConfigError("--eps-decay must lie in (0, 1)")
        if not cone and self.provider in CONE_PROVIDERS:
            raise ConfigError(f"provider {self.provider!r} needs --cone")
        provider = resolve_provider(space, lam, self.provider, cone=cone)
        if provider in ("lp", "cone-lp") and not space.has_coords:
            raise ConfigError(f"provider {provider!r} needs a coordinate-backed space")
        want = PROVIDER_LAMBDA[provider](space)
        if want is not None and not math.isclose(lam, want, rel_tol=1e-12):
            raise ConfigError(f"provider {provider!r} certifies lambda = {want!r}, not {lam!r}")
        return provider

    def build_config(self) -> BuildConfig:
        return BuildConfig(order=self.order, eps_ratio=self.eps_ratio)


def build(space: FiniteMetricSpace, rc: RunConfig):
    """Build and audit; returns (embedding, audit result)."""
    provider = rc.check(space)
    cone = rc.cone or provider in CONE_PROVIDERS
    if cone:
        emb = build_cone_embedding(space, rc.lam, provider, rc.build_config())
        mode = "strict" if rc.mode == "strict" else "good"
    else:
        emb = build_good_embedding(space, rc.lam, provider, rc.build_config())
        mode = rc.mode
        if mode == "strict":
            emb = strictify(emb)
    return emb, audit_embedding(space, emb, rc.lam, mode)


def _emit(obj: dict) -> None:
    print(json.dumps(obj, sort_keys=True))


def _workers() -> int:
    cap = os.environ.get("C0EMBED_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return n


def _certificate_json(res) -> dict:
    out = res.summary()
    if res.ok:
        out["witness_pairs"] = int((res.witness >= 0).sum()) // 2
    return out


# -- commands -------------------------------------------------------------------------


def cmd_build(args) -> int:
    space = gallery.load_space(args.input)
    rc = RunConfig(args.lam, args.provider, args.order, args.eps_decay, args.cone, args.mode)
    emb, res = build(space, rc)
    if args.output:
        gallery.save_embedding(emb, args.output, space, mode=res.mode if res.ok else None)
        cert_path = args.cert or str(Path(args.output).with_suffix("")) + ".cert.json"
        gallery._write_text(cert_path, json.dumps(_certificate_json(res), sort_keys=True) + "\n")
    _emit(res.summary())
    return EXIT_OK if res.ok else EXIT_FAIL


def cmd_audit(args) -> int:
    space = gallery.load_space(args.space)
    if args.mode == "pigeonhole":
        if args.embedding:
            table = gallery.load_embedding(args.embedding, space).matrix
        else:
            raise ConfigError("pigeonhole mode needs --embedding")
        verdict = pigeonhole_audit(space, table, args.p_max, args.n0)
        _emit(verdict.to_json())
        return EXIT_FAIL
    emb = gallery.load_embedding(args.embedding, space)
    lam = args.lam if args.lam is not None else emb.lam
    res = audit_embedding(space, emb, lam, args.mode)
    _emit(res.summary())
    return EXIT_OK if res.ok else EXIT_FAIL


def cmd_gallery(args) -> int:
    spec = gallery.SpaceSpec(args.kind, n=args.n, p=args.p, dim=args.dim, seed=args.seed, scale=args.scale,
                             layout=args.layout, edge_prob=args.edge_prob, p_max=args.p_max).validate()
    space = gallery.generate(spec)
    gallery.save_space(space, args.output)
    _emit({"kind": spec.kind, "n": space.n, "seed": spec.seed, "prng": gallery.PRNG_ID,
           "output": str(args.output)})
    return EXIT_OK


REPORT_TARGETS = {"2": 2.0, "sqrt2": math.sqrt(2.0), "3": 3.0, "sqrt5": math.sqrt(5.0)}


def _corpus(name: str, seed: int) -> list[gallery.SpaceSpec]:
    if name == "standard":
        return gallery.standard_corpus(seed)
    if name == "l2":
        return gallery.lp_corpus(2.0, seed=seed)
    if name == "l1":
        return gallery.lp_corpus(1.0, seed=seed)
    if name == "small":
        return gallery.lp_corpus(2.0, count=6, seed=seed, n_max=12) + [
            gallery.SpaceSpec("graph_metric", n=15, seed=seed), gallery.SpaceSpec("l1_config", dim=2, p=1.0)]
    path = Path(name)
    obj = json.loads(gallery._read_text(path))
    if not isinstance(obj, list):
        raise SchemaError("expected a list of space specs", "$")
    return [gallery.SpaceSpec.from_json(o) for o in obj]


def _applicable(space: FiniteMetricSpace, lam: float) -> RunConfig | None:
    p2 = space.has_coords and space.p == 2.0
    if lam == 2.0:
        return RunConfig(2.0, "annuli", mode="strict")
    if lam == math.sqrt(2.0):
        return RunConfig(lam, "lp", mode="strict") if p2 else None
    if lam == 3.0:
        return RunConfig(3.0, "cone-annuli", cone=True, mode="strict")
    if lam == math.sqrt(5.0):
        return RunConfig(lam, "cone-lp", cone=True, mode="strict") if p2 else None
    return RunConfig(lam, "fine", cone=lam > 2, mode="strict")


def report_rows(specs, targets, out_dir: Path | None = None) -> list[dict]:
    def one(item):
        i, spec = item
        space = gallery.generate(spec)
        rows = []
        for lam in targets:
            rc = _applicable(space, lam)
            if rc is None or space.n < 2:
                continue
            emb, res = build(space, rc)
            if not res.ok:
                raise ConstructionError(f"spec {i}: audit failed at lambda {lam!r}: {res}")
            rows.append(gallery.report_row(spec, space, lam, emb, res))
            if out_dir is not None:
                gallery.save_embedding(emb, out_dir / f"emb_{i:03d}_{lam:.6f}.json", space, mode=res.mode)
        return rows

    with ThreadPoolExecutor(max_workers=_workers()) as ex:
        chunks = list(ex.map(one, enumerate(specs)))
    return [r for rows in chunks for r in rows]


def cmd_report(args) -> int:
    specs = _corpus(args.corpus, args.seed)
    if args.lam:
        targets = [parse_lambda(t) if t not in REPORT_TARGETS else REPORT_TARGETS[t] for t in args.lam]
    else:
        targets = list(REPORT_TARGETS.values())
    if any(not t > 1 for t in targets):
        raise ConfigError("every lambda target must exceed 1")
    out_dir = Path(args.embeddings) if args.embeddings else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    rows = report_rows(specs, targets, out_dir)
    out = args.output
    if args.format == "json" and not str(out).endswith(".json"):
        out = str(out) + ".json"
    gallery.save_report(rows, out)
    _emit({"rows": len(rows), "output": str(out),
           "max_distortion": {repr(t): max((r["distortion"] for r in rows if r["lambda_target"] == t), default=None)
                              for t in targets}})
    return EXIT_OK


def cmd_counterexample(args) -> int:
    space = counterexample_space(args.p_max)
    if args.output:
        gallery.save_space(space, args.output)
    eps = args.eps
    rc_fine = RunConfig(1.0 + eps, "fine", mode="strict")
    emb, res = build(space, rc_fine)
    if not res.ok:
        _emit(res.summary())
        return EXIT_FAIL
    if args.embedding:
        gallery.save_embedding(emb, args.embedding, space, mode="strict")
    cone = build_cone_embedding(space, 3.0, "cone-annuli")
    verdict = pigeonhole_audit(space, cone.matrix, args.p_max)
    _emit({"n": space.n, "fine": res.summary(), "cone3_pigeonhole": verdict.to_json()})
    return EXIT_OK


# -- wiring -----------------------------------------------------------------------------


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="c0embed", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build", help="embed a space and audit the result")
    b.add_argument("--input", required=True, help="space file (.csv matrix or .json)")
    b.add_argument("--lambda", dest="lam", type=parse_lambda, required=True)
    b.add_argument("--provider", choices=PROVIDER_CHOICES, default="auto")
    b.add_argument("--order", choices=("farthest-first", "input"), default="farthest-first")
    b.add_argument("--eps-decay", type=float, default=None, help="eps ratio per block (default: from the space)")
    b.add_argument("--mode", choices=("good", "strict"), default="good")
    b.add_argument("--cone", action="store_true", help="nonnegative coordinates (lambda up to 3)")
    b.add_argument("--output", help="embedding JSON path")
    b.add_argument("--cert", help="certificate path (default: next to the output)")
    b.set_defaults(func=cmd_build)

    a = sub.add_parser("audit", help="check an embedding against a space")
    a.add_argument("--space", required=True)
    a.add_argument("--embedding")
    a.add_argument("--lambda", dest="lam", type=parse_lambda, default=None)
    a.add_argument("--mode", choices=("good", "strict", "plain", "pigeonhole"), default="good")
    a.add_argument("--p-max", type=int, default=None)
    a.add_argument("--n0", type=int, default=None)
    a.set_defaults(func=cmd_audit)

    g = sub.add_parser("gallery", help="generate a test space")
    g.add_argument("--kind", choices=gallery.KINDS[:4], required=True)
    g.add_argument("--n", type=int, default=10)
    g.add_argument("--p", type=float, default=2.0)
    g.add_argument("--dim", type=int, default=3)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--scale", type=float, default=1.0)
    g.add_argument("--layout", choices=("random", "cross"), default="random")
    g.add_argument("--edge-prob", type=float, default=None)
    g.add_argument("--p-max", type=int, default=4)
    g.add_argument("--output", required=True)
    g.set_defaults(func=cmd_gallery)

    r = sub.add_parser("report", help="build a corpus at several lambda targets and tabulate distortions")
    r.add_argument("--corpus", default="small", help="standard, l1, l2, small, or a JSON list of specs")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--lambda", dest="lam", action="append",
                   help="target (repeatable): 2, sqrt2, 3, sqrt5 or any value > 1")
    r.add_argument("--format", choices=("csv", "json"), default="csv")
    r.add_argument("--embeddings", help="directory for the embedding files")
    r.add_argument("--output", required=True)
    r.set_defaults(func=cmd_report)

    c = sub.add_parser("counterexample", help="the space with no 2-embedding into nonnegative sequences")
    c.add_argument("--p-max", type=int, default=4)
    c.add_argument("--eps", type=float, default=0.2)
    c.add_argument("--output", help="write the space here")
    c.add_argument("--embedding", help="write the (1 + eps)-embedding here")
    c.set_defaults(func=cmd_counterexample)
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, BadSpec) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SpaceIOError, ParseError, SchemaError, ShapeMismatch, InvariantError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConstructionError, HypothesisViolated) as exc:
        print(f"construction error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_FAIL
    except EmbedError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_FAIL
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
