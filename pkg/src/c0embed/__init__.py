"""Coordinate-wise low-distortion embeddings of finite metric spaces into the sup norm."""

from .metric import Ball, FiniteMetricSpace, PairSet, validate_metric
from .partitions import (
    annuli_partition,
    delta_blocks,
    fine_partition,
    lemma46_partition,
    lp_partition,
    min_partition_size,
    refine_by_range,
)
from .embedding import (
    BuildConfig,
    Certificate,
    Embedding,
    Violation,
    audit_embedding,
    build_good_embedding,
    bump_coordinate,
    kuratowski_baseline,
    strictify,
)
from .cone import (
    build_cone_embedding,
    cone_annuli_partition,
    cone_coordinate,
    cone_lp_partition,
    control_function,
    counterexample_space,
    lemma615_partition,
    pigeonhole_audit,
)

__version__ = "0.1.0"

__all__ = [
    "Ball",
    "FiniteMetricSpace",
    "PairSet",
    "validate_metric",
    "annuli_partition",
    "delta_blocks",
    "fine_partition",
    "lemma46_partition",
    "lp_partition",
    "min_partition_size",
    "refine_by_range",
    "BuildConfig",
    "Certificate",
    "Embedding",
    "Violation",
    "audit_embedding",
    "build_good_embedding",
    "bump_coordinate",
    "kuratowski_baseline",
    "strictify",
    "build_cone_embedding",
    "cone_annuli_partition",
    "cone_coordinate",
    "cone_lp_partition",
    "control_function",
    "counterexample_space",
    "lemma615_partition",
    "pigeonhole_audit",
]
