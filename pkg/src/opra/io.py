"""File formats: dataset CSV, policy JSON, distortion tables and run manifests."""
from __future__ import annotations

import csv
import hashlib
import json
import os
from datetime import datetime, timezone
from typing import Optional, Sequence

import numpy as np

from .core import LoggedDataset
from .policy import Policy, policy_from_dict
from .risk import PiecewiseLinearDistortion


class FormatError(ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


def _float_text(v: float) -> str:
    # repr round-trips every double exactly
    return repr(float(v))


def write_dataset_csv(dataset: LoggedDataset, path) -> None:
    d = dataset.context_dim
    header = [f"f{j}" for j in range(d)] + ["action", "reward"]
    if dataset.propensities is not None:
        header.append("propensity")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(dataset.n):
            row = [_float_text(v) for v in dataset.contexts[i]]
            row += [str(int(dataset.actions[i])), _float_text(dataset.rewards[i])]
            if dataset.propensities is not None:
                row.append(_float_text(dataset.propensities[i]))
            writer.writerow(row)


def _read_rows(path):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError("empty file", 1) from None
        rows = [(reader.line_num, r) for r in reader if r]
    return [h.strip() for h in header], rows


def _feature_columns(header: Sequence[str], exclude: Sequence[str]) -> list:
    cols = [h for h in header if h not in exclude]
    feats = sorted((h for h in cols if h.startswith("f") and h[1:].isdigit()), key=lambda h: int(h[1:]))
    if not feats:
        raise FormatError("no feature columns f0..f{d-1}", 1)
    if feats != [f"f{j}" for j in range(len(feats))]:
        raise FormatError("feature columns must be f0..f{d-1} without gaps", 1)
    return feats


def read_dataset_csv(path, reward_bound: float = 1.0, n_actions: Optional[int] = None) -> LoggedDataset:
    """Read the dataset CSV; ``n_actions`` defaults to the largest action plus one."""
    header, rows = _read_rows(path)
    for col in ("action", "reward"):
        if col not in header:
            raise FormatError(f"missing column {col!r}", 1)
    feats = _feature_columns(header, ("action", "reward", "propensity"))
    pos = {h: j for j, h in enumerate(header)}
    has_prop = "propensity" in pos
    x, a, r, p = [], [], [], []
    for line, row in rows:
        if len(row) != len(header):
            raise FormatError(f"expected {len(header)} fields, got {len(row)}", line)
        try:
            x.append([float(row[pos[f]]) for f in feats])
            action = float(row[pos["action"]])
            if action != int(action):
                raise ValueError("action must be an integer")
            a.append(int(action))
            r.append(float(row[pos["reward"]]))
            if has_prop:
                p.append(float(row[pos["propensity"]]))
        except ValueError as exc:
            raise FormatError(str(exc), line) from None
    if not rows:
        raise FormatError("no data rows", 2)
    k = n_actions if n_actions is not None else max(a) + 1
    try:
        return LoggedDataset(np.array(x), np.array(a), np.array(r), reward_bound, k, np.array(p) if has_prop else None)
    except ValueError as exc:
        raise FormatError(str(exc)) from None


def read_classification_csv(path, label: str = "label") -> tuple[np.ndarray, np.ndarray]:
    """Feature columns ``f0..`` plus an integer label column."""
    header, rows = _read_rows(path)
    if label not in header:
        raise FormatError(f"missing label column {label!r}", 1)
    feats = _feature_columns(header, (label,))
    pos = {h: j for j, h in enumerate(header)}
    x, y = [], []
    for line, row in rows:
        if len(row) != len(header):
            raise FormatError(f"expected {len(header)} fields, got {len(row)}", line)
        try:
            x.append([float(row[pos[f]]) for f in feats])
            v = float(row[pos[label]])
            if v != int(v) or v < 0:
                raise ValueError("labels must be nonnegative integers")
            y.append(int(v))
        except ValueError as exc:
            raise FormatError(str(exc), line) from None
    if not rows:
        raise FormatError("no data rows", 2)
    return np.array(x), np.array(y, dtype=np.int64)


def write_classification_csv(features: np.ndarray, labels: np.ndarray, path, label: str = "label") -> None:
    features = np.atleast_2d(features)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"f{j}" for j in range(features.shape[1])] + [label])
        for xi, yi in zip(features, labels):
            writer.writerow([_float_text(v) for v in xi] + [str(int(yi))])


def dumps_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def write_policy_json(policy: Policy, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_json(policy.to_dict()))


def read_policy_json(path) -> Policy:
    try:
        with open(path, encoding="utf-8") as fh:
            spec = json.load(fh)
        return policy_from_dict(spec)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise FormatError(f"malformed policy file {os.fspath(path)!r}: {exc}") from None


def read_distortion_csv(path) -> PiecewiseLinearDistortion:
    """Two columns ``s,g`` of knots, with or without a header row."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    xs, ys = [], []
    for line, row in enumerate(rows, start=1):
        try:
            s, g = float(row[0]), float(row[1])
        except (ValueError, IndexError):
            if line == 1:
                continue
            raise FormatError("expected two numeric columns", line) from None
        xs.append(s)
        ys.append(g)
    return PiecewiseLinearDistortion(xs, ys)


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def build_manifest(command: str, config: dict, seed, inputs: Sequence, outputs: Sequence) -> dict:
    from . import __version__

    return {
        "command": command,
        "config": config,
        "seed": seed,
        "version": __version__,
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "inputs": {os.fspath(p): file_digest(p) for p in inputs},
        "outputs": {os.fspath(p): file_digest(p) for p in outputs},
    }


def write_manifest(manifest: dict, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_json(manifest))
