"""Problem and report files: JSON manifests, raw float64 blobs, result reports.

Array data lives in headerless binary files of row-major little-endian
8-byte IEEE floats; all dimensions live in the manifest, which also pins a
SHA-256 per blob so a load can certify it read back exactly what was
written.  Unknown manifest fields are rejected.  Box bounds are stored
inline with infinities encoded as the strings "inf"/"-inf".
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict

import numpy as np

from .model import ConstraintBlock, LinearObjective, Problem, QuadraticObjective
from .projection import Box
from .alm import IterateState

__all__ = [
    "ManifestError",
    "write_problem",
    "read_problem",
    "read_manifest",
    "build_report",
    "write_report",
    "read_state",
]

_DTYPE = "<f8"

_TOP_KEYS = {
    "format", "n", "L", "objective_kind", "c_file", "c_sha256",
    "cdiag_file", "cdiag_sha256", "box_lower", "box_upper", "blocks",
    "witness_file", "witness_sha256",
}
_BLOCK_KEYS = {"m", "k", "a_file", "a_sha256", "b_file", "b_sha256"}
_FORMAT = "sqsolve-problem-v1"


class ManifestError(ValueError):
    """A manifest or one of its referenced files is malformed."""


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_blob(directory: str, name: str, arr: np.ndarray) -> tuple[str, str]:
    path = os.path.join(directory, name)
    np.ascontiguousarray(arr, dtype=float).astype(_DTYPE).tofile(path)
    return name, _sha256(path)


def _read_blob(directory: str, name: str, count: int, field: str) -> np.ndarray:
    path = os.path.join(directory, name)
    if not os.path.exists(path):
        raise ManifestError(f"{field}: referenced file {name!r} does not exist")
    expected = count * 8
    actual = os.path.getsize(path)
    if actual != expected:
        raise ManifestError(
            f"{field}: {name!r} holds {actual} bytes, expected {expected} "
            f"({count} float64 entries)")
    return np.fromfile(path, dtype=_DTYPE).astype(float)


def _encode_bounds(v: np.ndarray) -> list:
    out = []
    for x in v:
        if np.isposinf(x):
            out.append("inf")
        elif np.isneginf(x):
            out.append("-inf")
        else:
            out.append(float(x))
    return out


def _decode_bounds(vals, field: str) -> np.ndarray:
    out = np.empty(len(vals))
    for i, x in enumerate(vals):
        if isinstance(x, str):
            if x == "inf":
                out[i] = np.inf
            elif x == "-inf":
                out[i] = -np.inf
            else:
                raise ManifestError(f"{field}[{i}]: invalid bound {x!r}")
        elif isinstance(x, (int, float)):
            out[i] = float(x)
        else:
            raise ManifestError(f"{field}[{i}]: invalid bound {x!r}")
    return out


def write_problem(problem: Problem, directory: str,
                  witness: np.ndarray | None = None) -> str:
    """Write manifest + blobs into ``directory``; returns the manifest path."""
    os.makedirs(directory, exist_ok=True)
    obj = problem.objective
    kind = "quad" if isinstance(obj, QuadraticObjective) else "linear"
    manifest: dict = {
        "format": _FORMAT,
        "n": problem.n,
        "L": len(problem.blocks),
        "objective_kind": kind,
        "box_lower": _encode_bounds(problem.box.lower),
        "box_upper": _encode_bounds(problem.box.upper),
    }
    manifest["c_file"], manifest["c_sha256"] = _write_blob(directory, "c.bin", obj.c)
    if kind == "quad":
        manifest["cdiag_file"], manifest["cdiag_sha256"] = _write_blob(
            directory, "cdiag.bin", obj.cdiag)
    blocks = []
    for i, blk in enumerate(problem.blocks, start=1):
        a_name, a_sha = _write_blob(directory, f"A_{i}.bin", blk.A)
        b_name, b_sha = _write_blob(directory, f"b_{i}.bin", blk.b)
        blocks.append({"m": blk.m, "k": blk.k, "a_file": a_name,
                       "a_sha256": a_sha, "b_file": b_name, "b_sha256": b_sha})
    manifest["blocks"] = blocks
    if witness is not None:
        manifest["witness_file"], manifest["witness_sha256"] = _write_blob(
            directory, "witness.bin", witness)
    path = os.path.join(directory, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    return path


def read_manifest(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise ManifestError(f"manifest {path!r} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest {path!r} is not valid JSON: {exc}") from None
    if not isinstance(manifest, dict):
        raise ManifestError(f"manifest {path!r} must be a JSON object")
    unknown = set(manifest) - _TOP_KEYS
    if unknown:
        raise ManifestError(f"unknown manifest field(s): {sorted(unknown)}")
    for req in ("n", "L", "objective_kind", "c_file", "box_lower", "box_upper", "blocks"):
        if req not in manifest:
            raise ManifestError(f"manifest is missing required field {req!r}")
    return manifest


def _check_hash(directory: str, name: str, expected: str | None, field: str):
    if expected is None:
        return
    actual = _sha256(os.path.join(directory, name))
    if actual != expected:
        raise ManifestError(
            f"{field}: checksum mismatch for {name!r} (file corrupted or edited)")


def read_problem(manifest_path: str) -> tuple[Problem, np.ndarray | None]:
    """Load a problem, verifying sizes and checksums of every blob."""
    manifest = read_manifest(manifest_path)
    directory = os.path.dirname(os.path.abspath(manifest_path))
    n = int(manifest["n"])
    blocks_meta = manifest["blocks"]
    if not isinstance(blocks_meta, list) or len(blocks_meta) != int(manifest["L"]):
        raise ManifestError("blocks: expected a list with L entries")

    c = _read_blob(directory, manifest["c_file"], n, "c_file")
    _check_hash(directory, manifest["c_file"], manifest.get("c_sha256"), "c_file")
    kind = manifest["objective_kind"]
    if kind == "quad":
        if "cdiag_file" not in manifest:
            raise ManifestError("objective_kind 'quad' requires cdiag_file")
        cdiag = _read_blob(directory, manifest["cdiag_file"], n, "cdiag_file")
        _check_hash(directory, manifest["cdiag_file"], manifest.get("cdiag_sha256"),
                    "cdiag_file")
        objective = QuadraticObjective(cdiag=cdiag, c=c)
    elif kind == "linear":
        objective = LinearObjective(c=c)
    else:
        raise ManifestError(f"objective_kind: unknown kind {kind!r}")

    lower = _decode_bounds(manifest["box_lower"], "box_lower")
    upper = _decode_bounds(manifest["box_upper"], "box_upper")
    if lower.size != n or upper.size != n:
        raise ManifestError("box bounds must have length n")

    blocks = []
    for i, meta in enumerate(blocks_meta, start=1):
        if not isinstance(meta, dict):
            raise ManifestError(f"blocks[{i - 1}]: expected an object")
        unknown = set(meta) - _BLOCK_KEYS
        if unknown:
            raise ManifestError(f"blocks[{i - 1}]: unknown field(s) {sorted(unknown)}")
        for req in ("m", "k", "a_file", "b_file"):
            if req not in meta:
                raise ManifestError(f"blocks[{i - 1}]: missing field {req!r}")
        m = int(meta["m"])
        a = _read_blob(directory, meta["a_file"], m * n, f"blocks[{i - 1}].a_file")
        _check_hash(directory, meta["a_file"], meta.get("a_sha256"),
                    f"blocks[{i - 1}].a_file")
        b = _read_blob(directory, meta["b_file"], m, f"blocks[{i - 1}].b_file")
        _check_hash(directory, meta["b_file"], meta.get("b_sha256"),
                    f"blocks[{i - 1}].b_file")
        blocks.append(ConstraintBlock(A=a.reshape(m, n), b=b, k=int(meta["k"])))

    witness = None
    if "witness_file" in manifest:
        witness = _read_blob(directory, manifest["witness_file"], n, "witness_file")
        _check_hash(directory, manifest["witness_file"],
                    manifest.get("witness_sha256"), "witness_file")
    try:
        problem = Problem(objective=objective, blocks=tuple(blocks),
                          box=Box(lower=lower, upper=upper))
    except ValueError as exc:
        raise ManifestError(str(exc)) from exc
    return problem, witness


def build_report(problem: Problem, result, settings, residuals) -> dict:
    """Result report; residuals are the caller's fresh recomputation."""
    state = result.state
    total = result.seconds
    timing_pct = {
        name: (100.0 * secs / total if total > 0 else 0.0)
        for name, secs in sorted(result.timings.items())
    }
    accounted = sum(result.timings.values())
    timing_pct["other"] = max(0.0, 100.0 * (total - accounted) / total) if total > 0 else 0.0
    return {
        "converged": bool(result.converged),
        "objective": problem.objective.value(state.x),
        "solution": [float(v) for v in state.x],
        "residuals": {
            "eta_p": residuals.eta_p,
            "eta_d": residuals.eta_d,
            "eta_r": residuals.eta_r,
            "eta": residuals.eta,
        },
        "iterations": {
            "outer": state.outer_iter,
            "inner": result.inner_iterations,
        },
        "seconds": total,
        "timing_percent": timing_pct,
        "timing_seconds": {k: float(v) for k, v in sorted(result.timings.items())},
        "settings": {k: v for k, v in asdict(settings).items()},
        "state": {
            "x": [float(v) for v in state.x],
            "lambda": [float(v) for v in state.lam],
            "mu": [float(v) for v in state.mu],
            "sigma": state.sigma,
        },
    }


def write_report(report: dict, path: str):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1)
        fh.write("\n")


def read_state(path: str) -> IterateState:
    """Warm-start state from a previously written report."""
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except FileNotFoundError:
        raise ManifestError(f"warm-start file {path!r} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"warm-start file {path!r} is not valid JSON: {exc}") from None
    state = payload.get("state", payload)
    for req in ("x", "lambda", "mu", "sigma"):
        if req not in state:
            raise ManifestError(f"warm-start state is missing field {req!r}")
    x = np.asarray(state["x"], dtype=float)
    lam = np.asarray(state["lambda"], dtype=float)
    mu = np.asarray(state["mu"], dtype=float)
    return IterateState(x=x, y=np.zeros(lam.size), z=x.copy(), lam=lam, mu=mu,
                        sigma=float(state["sigma"]), outer_iter=0)
