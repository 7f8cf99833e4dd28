"""Synonym-averaged text-embedding classifier over precomputed vectors."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DegenerateEmbeddingError, ParseError, ValidationError

# nuImages class names and the synonyms taken from the annotator instructions.
NUIMAGES_SYNONYMS = {
    "car": ["car"],
    "truck": ["truck", "pick-up", "lorry", "semi-tractor"],
    "construction_vehicle": ["construction_vehicle", "crane"],
    "bus": ["bus", "bendy_bus", "rigid_bus"],
    "trailer": ["trailer"],
    "emergency": ["emergency", "ambulance", "police_car", "police_motorcycle"],
    "motorcycle": ["motorcycle"],
    "bicycle": ["bicycle"],
    "adult": ["adult", "person"],
    "child": ["child"],
    "police_officer": ["police_officer"],
    "construction_worker": ["construction_worker"],
    "personal_mobility": ["personal_mobility", "skateboard", "segway", "scooter"],
    "stroller": ["stroller"],
    "pushable_pullable": ["pushable_pullable", "wheel_barrow", "garbage_bin", "cart"],
    "barrier": ["barrier", "K-rail", "fence", "bollard", "guard_rail"],
    "traffic_cone": ["traffic_cone"],
    "debris": ["debris", "trash_bag"],
}

DEGENERATE_NORM = 1e-9


def normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def embeddings_from_dict(data: Mapping) -> dict:
    if not isinstance(data, Mapping):
        raise ValidationError("embeddings file must be a JSON object of token -> vector")
    out = {}
    dim = None
    for token, values in data.items():
        v = np.asarray(values, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise ValidationError(f"embedding for {token!r} is not a flat vector", [token])
        if dim is None:
            dim = v.size
        elif v.size != dim:
            raise ValidationError(
                f"embedding for {token!r} has dimension {v.size}, expected {dim}", [token]
            )
        if not np.all(np.isfinite(v)):
            raise ValidationError(f"embedding for {token!r} has non-finite entries", [token])
        norm = np.linalg.norm(v)
        if norm == 0:
            raise ValidationError(f"embedding for {token!r} is the zero vector", [token])
        out[token] = v / norm
    return out


def load_embeddings(path) -> dict:
    """Read a JSON ``{token: [floats]}`` file; vectors come back unit-norm."""
    text = Path(path).read_text()
    if not text.strip():
        return {}
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: malformed JSON at offset {e.pos}: {e.msg}", e.pos) from None
    return embeddings_from_dict(data)


def load_synonyms(path) -> dict:
    data = json.loads(Path(path).read_text())
    return synonym_table(data)


def synonym_table(data: Mapping) -> dict:
    """Validate a class -> synonyms map, putting the class name first if absent."""
    table = {}
    for name, syns in data.items():
        syns = list(syns)
        if name not in syns:
            syns.insert(0, name)
        table[name] = syns
    return table


def class_embedding(name: str, synonyms: Mapping[str, Sequence[str]], emb: Mapping) -> np.ndarray:
    words = synonyms.get(name, [name])
    missing = [w for w in words if w not in emb]
    if missing:
        raise KeyError(f"no embedding for synonym(s) {missing} of class {name!r}")
    mean = np.mean([normalize(emb[w]) for w in words], axis=0)
    norm = np.linalg.norm(mean)
    if norm < DEGENERATE_NORM:
        raise DegenerateEmbeddingError(f"synonym embeddings of {name!r} cancel out")
    return mean / norm


def build_classifier(class_names: Sequence[str], synonyms: Mapping, emb: Mapping) -> np.ndarray:
    """Stack class embeddings into a ``C x D`` matrix in ``class_names`` order."""
    return np.stack([class_embedding(n, synonyms, emb) for n in class_names])


def classify(features, classifier: np.ndarray, temperature: float = 1.0):
    """Sigmoid of cosine similarity / temperature.

    Returns ``(scores, labels, top_scores)`` with ``scores`` of shape ``R x C``.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    f = np.atleast_2d(np.asarray(features, dtype=np.float64))
    m = np.asarray(classifier, dtype=np.float64)
    if f.shape[1] != m.shape[1]:
        raise ValueError(f"feature dimension {f.shape[1]} != classifier dimension {m.shape[1]}")
    norms = np.linalg.norm(f, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("region features must be non-zero")
    logits = (f / norms) @ m.T / temperature
    scores = 1.0 / (1.0 + np.exp(-logits))
    labels = scores.argmax(axis=1)
    return scores, labels, scores[np.arange(len(f)), labels]
