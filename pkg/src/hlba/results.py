"""Flat CSV/JSON persistence for chains, clouds, traces and evidence.

Every CSV written here starts with one ``# `` comment line holding a JSON
manifest (configuration and seed) so a file is self-describing on its own.
Draw files have one row per draw with a fixed column order: group means,
the lower triangle of Sigma (row-major), then the auxiliary scales.
"""

from __future__ import annotations

import csv
import json
import subprocess
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__


def manifest_line(manifest: dict) -> str:
    return "# " + json.dumps(manifest, sort_keys=True, separators=(",", ":")) + "\n"


def read_manifest(path) -> dict | None:
    with Path(path).open() as fh:
        first = fh.readline()
    return json.loads(first[2:]) if first.startswith("# ") else None


def group_column_names(names) -> list[str]:
    d = len(names)
    rows, cols = np.tril_indices(d)
    return ([f"mu[{n}]" for n in names] + [f"sigma[{names[r]},{names[c]}]" for r, c in zip(rows, cols)]
            + [f"a[{n}]" for n in names])


def group_matrix(mu, sigma, a) -> np.ndarray:
    d = mu.shape[-1]
    rows, cols = np.tril_indices(d)
    return np.concatenate([mu, sigma[:, rows, cols], a], axis=1)


def split_group_matrix(values, d: int):
    rows, cols = np.tril_indices(d)
    k = len(rows)
    mu = values[:, :d]
    sigma = np.zeros((len(values), d, d))
    sigma[:, rows, cols] = values[:, d:d + k]
    sigma[:, cols, rows] = values[:, d:d + k]
    a = values[:, d + k:d + k + d]
    return mu, sigma, a


def _fmt(x) -> str:
    return repr(float(x))


def write_table(path, header, rows, manifest: dict | None = None) -> None:
    with Path(path).open("w", newline="") as fh:
        if manifest is not None:
            fh.write(manifest_line(manifest))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def read_table(path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    return header, [r for r in reader if r]


def save_chain(chain, path, manifest: dict) -> None:
    header = ["iteration", "stage", "loglik"] + group_column_names(chain.param_names)
    vals = group_matrix(chain.mu, chain.sigma, chain.a)
    rows = ([t, chain.stage[t], chain.loglik[t], *vals[t]] for t in range(len(chain)))
    write_table(path, header, rows, manifest)


def save_effects(alpha, names, path, manifest: dict, index_name: str = "iteration") -> None:
    """Per-draw random effects in long form: one row per (draw, subject)."""
    T, S, _ = alpha.shape
    header = [index_name, "subject"] + list(names)
    rows = ([t, j + 1, *alpha[t, j]] for t in range(T) for j in range(S))
    write_table(path, header, rows, manifest)


def save_cloud(cloud, path, manifest: dict) -> None:
    header = ["entry", "weight", "loglik"] + group_column_names(cloud.param_names)
    vals = group_matrix(cloud.mu, cloud.sigma, cloud.a)
    tot = cloud.total_loglik
    rows = ([m, cloud.weights[m], tot[m], *vals[m]] for m in range(cloud.M))
    write_table(path, header, rows, manifest)


def save_trace(trace, path, manifest: dict) -> None:
    cols = trace.COLUMNS
    rows = ([i, *(getattr(trace, c)[i] for c in cols)] for i in range(len(trace)))
    write_table(path, ["stage", *cols], rows, manifest)


def load_trace(path):
    from .marglik import TemperTrace

    header, rows = read_table(path)
    arr = np.array(rows, dtype=np.float64)
    cols = {h: arr[:, i] for i, h in enumerate(header)}
    return TemperTrace.from_arrays(cols["a"], cols["E"], cols["V"], cols["log_increment"],
                                   cols["E_pre"], cols["V_pre"], cols["ess"])


@dataclass
class LoadedDraws:
    """Group-parameter draws read back from a chain or cloud file."""

    mu: np.ndarray
    sigma: np.ndarray
    a: np.ndarray
    alpha: np.ndarray | None
    param_names: list
    weights: np.ndarray | None = None
    stage: np.ndarray | None = None


def load_draws(path, stage: str | None = "sampling") -> LoadedDraws:
    header, rows = read_table(path)
    names = [h[3:-1] for h in header if h.startswith("mu[")]
    d = len(names)
    first = header.index(f"mu[{names[0]}]")
    values = np.array([r[first:] for r in rows], dtype=np.float64).reshape(len(rows), -1)
    mu, sigma, a = split_group_matrix(values, d)
    if header[0] == "iteration":
        st = np.array([r[1] for r in rows], dtype=object)
        if stage is not None:
            keep = st == stage
            mu, sigma, a, st = mu[keep], sigma[keep], a[keep], st[keep]
        return LoadedDraws(mu, sigma, a, None, names, None, st)
    w = np.array([r[1] for r in rows], dtype=np.float64)
    return LoadedDraws(mu, sigma, a, None, names, w / w.sum())


def git_describe() -> str | None:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
                             timeout=5, cwd=Path(__file__).resolve().parent)
        return out.stdout.strip() or None
    except (OSError, subprocess.SubprocessError):
        return None


def write_meta(path, command: str, config: dict, seed) -> None:
    meta = {
        "version": __version__,
        "command": command,
        "config": config,
        "seed": seed,
        "git_describe": git_describe(),
        "wall_clock": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    Path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
