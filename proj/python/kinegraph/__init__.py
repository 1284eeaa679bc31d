"""Python bindings for the kinegraph core."""

import json

from . import _core
from ._core import (
    KinegraphError,
    bone_std_matrix,
    brute_force_select,
    canonical_round_trip,
    decay_weights,
    diffuse_iterative,
    ensemble,
    laplacian_ratio,
    multi_hop_exact,
    parse_ntu,
    parse_ntu_text,
    preprocess,
    select_bones,
)

__all__ = [
    "KinegraphError",
    "bone_std_matrix",
    "brute_force_select",
    "build_graphs",
    "canonical_round_trip",
    "decay_weights",
    "diffuse_iterative",
    "eigen_relation",
    "ensemble",
    "laplacian_ratio",
    "micro_train",
    "multi_hop_exact",
    "parameter_count",
    "parse_ntu",
    "parse_ntu_text",
    "preprocess",
    "select_bones",
]


def build_graphs(embeddings_path):
    """Return (gpr, templates) documents built from an embeddings file."""
    gpr, templates = _core.build_graphs_json(str(embeddings_path))
    return json.loads(gpr), json.loads(templates)


def eigen_relation(abar, beta=0.5, truncation=200):
    return json.loads(_core.eigen_relation_json(abar, beta, truncation))


def parameter_count(config=None):
    return _core.parameter_count(json.dumps(config or {}))


def micro_train(config_path, seed=0, steps=None):
    return json.loads(_core.micro_train_json(str(config_path), seed, steps))
