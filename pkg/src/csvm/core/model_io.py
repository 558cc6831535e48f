"""
Self-describing text format for trained classifiers.

    csvm-model v1
    [kernel]
    kind = rbf
    gamma = 0.5
    [intercept]
    beta = -0.25
    [standardization]
    mode = zscore
    mean = 0.1 2.3
    scale = 1.0 0.7
    [features]
    age
    income
    [support]
    <coefficient> <x_1> ... <x_d>      one row per support point, I then J
    [anchors]
    z = 1 0 1
    [meta]
    key = value

Floats are written with repr() so a load reproduces them exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Standardization
from .kernel import KernelKind, KernelSpec, cross_kernel

logger = logging.getLogger(__name__)

MODEL_HEADER = "csvm-model v1"
_SECTIONS = ("kernel", "intercept", "standardization", "features", "support", "anchors", "meta")


@dataclass(frozen=True, eq=False)
class SavedModel:
    spec: KernelSpec
    coef: np.ndarray
    beta: float
    support: np.ndarray
    standardization: Standardization | None = None
    z: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int8))
    feature_names: tuple[str, ...] = ()
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        coef = np.asarray(self.coef, dtype=float).ravel()
        support = np.asarray(self.support, dtype=float)
        if support.ndim != 2 or support.shape[0] != coef.size:
            raise ValueError(f"{coef.size} coefficients for support matrix of shape {support.shape}")
        if self.standardization is not None and self.standardization.mean.size != support.shape[1]:
            raise ValueError("Standardization and support points disagree on the dimension")
        if self.feature_names and len(self.feature_names) != support.shape[1]:
            raise ValueError(f"{len(self.feature_names)} feature names for dimension {support.shape[1]}")
        object.__setattr__(self, "coef", coef)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "z", np.asarray(self.z, dtype=np.int8).ravel())

    @property
    def dimension(self) -> int:
        return self.support.shape[1]

    @property
    def categorical(self) -> tuple[str, ...]:
        """Columns one-hot encoded at training, as recorded under [meta]."""
        return tuple(c.strip() for c in self.metadata.get("categorical", "").split(",") if c.strip())

    def decision_function(self, X_raw) -> np.ndarray:
        """Scores for raw (unstandardized) feature rows."""
        X = np.asarray(X_raw, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.shape[1] != self.dimension:
            raise ValueError(f"Dimension mismatch: model expects {self.dimension} features, data has {X.shape[1]}")
        if self.standardization is not None:
            X = self.standardization.apply(X)
        return cross_kernel(self.spec, X, self.support) @ self.coef + self.beta

    def predict(self, X_raw) -> np.ndarray:
        """Sign of the score; exact zeros go to the positive class."""
        return np.where(self.decision_function(X_raw) >= 0, 1, -1)


# === Writing ================================================================

def _floats(values) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(values).ravel())


def format_model(model: SavedModel) -> str:
    lines = [MODEL_HEADER, "[kernel]", f"kind = {model.spec.kind.value}"]
    if model.spec.gamma is not None:
        lines.append(f"gamma = {float(model.spec.gamma)!r}")
    lines += ["[intercept]", f"beta = {float(model.beta)!r}", "[standardization]"]
    if model.standardization is None:
        lines.append("mode = none")
    else:
        lines += [
            "mode = zscore",
            f"mean = {_floats(model.standardization.mean)}",
            f"scale = {_floats(model.standardization.scale)}",
        ]
    lines.append("[features]")
    lines.extend(model.feature_names)
    lines.append("[support]")
    for c, row in zip(model.coef, model.support):
        lines.append(f"{float(c)!r} {_floats(row)}")
    lines += ["[anchors]", f"z = {' '.join(str(int(v)) for v in model.z)}".rstrip(), "[meta]"]
    for key, value in model.metadata.items():
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def save_model(model: SavedModel, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_model(model), encoding="utf-8")
    logger.info("Wrote model (%d support points, dimension %d) to %s", model.coef.size, model.dimension, path)
    return path


# === Reading ================================================================

def _split_sections(text: str, source: str) -> dict[str, list[str]]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != MODEL_HEADER:
        raise ValueError(f"{source}: expected header {MODEL_HEADER!r}")
    sections: dict[str, list[str]] = {}
    current = None
    for number, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            if current not in _SECTIONS:
                raise ValueError(f"{source}, line {number}: unknown section [{current}]")
            sections[current] = []
        elif current is None:
            raise ValueError(f"{source}, line {number}: content before the first section")
        else:
            sections[current].append(line)
    return sections


def _key_values(lines: list[str], section: str, source: str) -> dict[str, str]:
    values = {}
    for line in lines:
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{source}: malformed line {line!r} in [{section}]")
        values[key.strip()] = value.strip()
    return values


def _parse_floats(text: str, what: str, source: str) -> np.ndarray:
    try:
        return np.array([float(tok) for tok in text.split()], dtype=float)
    except ValueError:
        raise ValueError(f"{source}: non-numeric value in {what}") from None


def parse_model(text: str, source: str = "<model>") -> SavedModel:
    sections = _split_sections(text, source)
    for required in ("kernel", "intercept", "standardization", "support"):
        if required not in sections:
            raise ValueError(f"{source}: missing section [{required}]")

    kernel = _key_values(sections["kernel"], "kernel", source)
    try:
        kind = KernelKind(kernel["kind"])
    except (KeyError, ValueError):
        raise ValueError(f"{source}: [kernel] needs kind = linear or rbf") from None
    gamma = float(kernel["gamma"]) if "gamma" in kernel else None
    spec = KernelSpec(kind, gamma)

    intercept = _key_values(sections["intercept"], "intercept", source)
    if "beta" not in intercept:
        raise ValueError(f"{source}: [intercept] needs beta")
    beta = float(intercept["beta"])

    std = _key_values(sections["standardization"], "standardization", source)
    mode = std.get("mode")
    if mode == "zscore":
        if "mean" not in std or "scale" not in std:
            raise ValueError(f"{source}: standardization parameters missing (mean and scale required)")
        standardization = Standardization(
            mean=_parse_floats(std["mean"], "mean", source),
            scale=_parse_floats(std["scale"], "scale", source),
        )
    elif mode == "none":
        standardization = None
    else:
        raise ValueError(f"{source}: [standardization] mode must be zscore or none, got {mode!r}")

    rows = [_parse_floats(line, "support", source) for line in sections["support"]]
    if not rows:
        raise ValueError(f"{source}: [support] is empty")
    widths = {row.size for row in rows}
    if len(widths) != 1:
        raise ValueError(f"{source}: support rows have differing lengths {sorted(widths)}")
    table = np.vstack(rows)

    z = np.zeros(0, dtype=np.int8)
    if sections.get("anchors"):
        anchors = _key_values(sections["anchors"], "anchors", source)
        z = _parse_floats(anchors.get("z", ""), "anchors", source).astype(np.int8)

    metadata = _key_values(sections.get("meta", []), "meta", source)
    return SavedModel(
        spec=spec,
        coef=table[:, 0],
        beta=beta,
        support=table[:, 1:],
        standardization=standardization,
        z=z,
        feature_names=tuple(sections.get("features", [])),
        metadata=metadata,
    )


def load_model(path) -> SavedModel:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Model file not found: {path}")
    return parse_model(path.read_text(encoding="utf-8"), source=str(path))
