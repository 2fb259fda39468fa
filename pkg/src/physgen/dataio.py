"""Dataset and sample persistence: JSON manifests plus raw float64 payloads.

A dataset lives in a directory holding ``manifest.json`` and one payload
file per array. Payloads are little-endian float64, laid out sample-major,
then channel-major, then row-major, and are checksummed so corruption is
detected at load time. Round trips are bit-exact.
"""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np

from .burgers import BurgersConfig, BurgersDataset
from .darcy import DarcySource, residual_darcy, source_function
from .grf import CovarianceSpec, DarcyDataset
from .grids import GridSpec, ScalarField
from .states import BurgersCodec, ChannelStats, DarcyCodec

SCHEMA_VERSION = 1
MANIFEST_NAME = "manifest.json"


class DatasetFormatError(ValueError):
    pass


def _sha256(blob: bytes) -> str:
    return hashlib.sha256(blob).hexdigest()


def _write_payload(path, name, arr):
    blob = np.ascontiguousarray(arr, dtype="<f8").tobytes()
    with open(os.path.join(path, name), "wb") as fh:
        fh.write(blob)
    return {"name": name, "bytes": len(blob), "sha256": _sha256(blob)}


def _read_payload(path, entry, shape):
    fname = os.path.join(path, entry["name"])
    try:
        with open(fname, "rb") as fh:
            blob = fh.read()
    except FileNotFoundError:
        raise DatasetFormatError(f"missing payload file {entry['name']}") from None
    if len(blob) != entry["bytes"]:
        raise DatasetFormatError(
            f"payload {entry['name']} truncated: {len(blob)} bytes, "
            f"manifest says {entry['bytes']}"
        )
    if _sha256(blob) != entry["sha256"]:
        raise DatasetFormatError(f"checksum mismatch in payload {entry['name']}")
    return np.frombuffer(blob, dtype="<f8").astype(np.float64).reshape(shape)


def _load_manifest(path):
    try:
        with open(os.path.join(path, MANIFEST_NAME), encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise DatasetFormatError(f"no {MANIFEST_NAME} under {path}") from None
    version = manifest.get("schema_version")
    if version != SCHEMA_VERSION:
        raise DatasetFormatError(
            f"manifest schema version {version} not supported "
            f"(this build reads version {SCHEMA_VERSION})"
        )
    return manifest


def _write_manifest(path, manifest):
    with open(os.path.join(path, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def darcy_residual_stats(ds: DarcyDataset):
    """(mean summed r^2, max per-node-mean r^2) over the dataset."""
    f = source_function(ds.source, ds.grid)
    sums = []
    means = []
    for k in range(ds.count):
        K = ScalarField(ds.grid, ds.permeability[k])
        p = ScalarField(ds.grid, ds.pressure[k])
        r = residual_darcy(K, p, f).values
        sums.append(float(np.sum(r * r)))
        means.append(float(np.mean(r * r)))
    return float(np.mean(sums)), float(np.max(means))


def save_dataset(ds, path):
    os.makedirs(path, exist_ok=True)
    if isinstance(ds, DarcyDataset):
        fields = np.stack([ds.pressure, ds.permeability], axis=1)
        files = [
            _write_payload(path, "fields.f64", fields),
            _write_payload(path, "thetas.f64", ds.thetas),
        ]
        res_mean, res_bound = darcy_residual_stats(ds)
        manifest = {
            "schema_version": SCHEMA_VERSION,
            "pde": "darcy",
            "n": ds.grid.n,
            "s": ds.s,
            "count": ds.count,
            "seed": ds.seed,
            "params": {
                "cov_length": ds.cov.length,
                "cov_mean": ds.cov.mean,
                "source_rate": ds.source.rate,
                "source_width": ds.source.width,
            },
            "channel_stats": {
                "pressure": _stats_dict(ds.pressure),
                "permeability": _stats_dict(ds.permeability),
            },
            "residual_sumsq_mean": res_mean,
            "residual_meansq_bound": res_bound * (1.0 + 1e-9),
            "files": files,
        }
    elif isinstance(ds, BurgersDataset):
        files = [
            _write_payload(path, "slabs.f64", ds.slabs[:, None, :, :]),
            _write_payload(path, "ic_params.f64", ds.ic_params),
        ]
        manifest = {
            "schema_version": SCHEMA_VERSION,
            "pde": "burgers",
            "nx": ds.config.nx,
            "nt": ds.config.nt,
            "count": ds.count,
            "seed": ds.seed,
            "params": {
                "nu": ds.config.nu,
                "dt": ds.config.dt,
                "L": ds.config.L,
            },
            "channel_stats": {"slab": _stats_dict(ds.slabs)},
            "files": files,
        }
    else:
        raise TypeError(f"cannot save dataset of type {type(ds).__name__}")
    _write_manifest(path, manifest)


def _stats_dict(values):
    std = float(np.std(values))
    return {"mean": float(np.mean(values)), "std": std if std > 0 else 1.0}


def load_dataset(path):
    """Load a dataset directory; returns (dataset, manifest)."""
    manifest = _load_manifest(path)
    by_name = {f["name"]: f for f in manifest["files"]}
    if manifest["pde"] == "darcy":
        n, s, count = manifest["n"], manifest["s"], manifest["count"]
        fields = _read_payload(path, by_name["fields.f64"], (count, 2, n, n))
        thetas = _read_payload(path, by_name["thetas.f64"], (count, s))
        p = manifest["params"]
        ds = DarcyDataset(
            pressure=fields[:, 0].copy(),
            permeability=fields[:, 1].copy(),
            thetas=thetas,
            grid=GridSpec(n),
            cov=CovarianceSpec(p["cov_length"], p["cov_mean"]),
            source=DarcySource(p["source_rate"], p["source_width"]),
            seed=manifest["seed"],
        )
    elif manifest["pde"] == "burgers":
        nx, nt, count = manifest["nx"], manifest["nt"], manifest["count"]
        slabs = _read_payload(path, by_name["slabs.f64"], (count, 1, nt, nx))
        ic = _read_payload(path, by_name["ic_params.f64"], (count, 6))
        p = manifest["params"]
        ds = BurgersDataset(
            slabs=slabs[:, 0].copy(),
            ic_params=ic,
            config=BurgersConfig(nu=p["nu"], nx=nx, nt=nt, dt=p["dt"], L=p["L"]),
            seed=manifest["seed"],
        )
    else:
        raise DatasetFormatError(f"unknown pde kind {manifest['pde']!r}")
    return ds, manifest


def dataset_codec(manifest):
    """Build the state codec recorded in a dataset manifest."""
    stats = manifest["channel_stats"]
    if manifest["pde"] == "darcy":
        return DarcyCodec(
            manifest["n"],
            ChannelStats(**stats["pressure"]),
            ChannelStats(**stats["permeability"]),
        )
    return BurgersCodec(manifest["nt"], manifest["nx"], ChannelStats(**stats["slab"]))


def save_samples(states: np.ndarray, manifest_extra: dict, path):
    """Persist generated sample states (count, d) with run metadata."""
    os.makedirs(path, exist_ok=True)
    states = np.asarray(states, dtype=np.float64)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "kind": "samples",
        "count": states.shape[0],
        "d": states.shape[1],
        "files": [_write_payload(path, "samples.f64", states)],
    }
    manifest.update(manifest_extra)
    _write_manifest(path, manifest)


def load_samples(path):
    manifest = _load_manifest(path)
    if manifest.get("kind") != "samples":
        raise DatasetFormatError(f"{path} does not hold a samples payload")
    entry = next(f for f in manifest["files"] if f["name"] == "samples.f64")
    states = _read_payload(path, entry, (manifest["count"], manifest["d"]))
    return states, manifest


def emit_field_image(field, path):
    """Write a 16-bit binary PGM (P5), min-max scaled.

    Image row i holds the x2 slice at x1 index i. The scaling bounds go
    into the comment line so the physical range can be recovered exactly;
    a constant field maps to mid-scale 32768 everywhere.
    """
    values = field.values if isinstance(field, ScalarField) else np.asarray(field)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("field image needs a 2D array")
    if not np.all(np.isfinite(values)):
        raise ValueError("cannot image non-finite field")
    lo, hi = float(values.min()), float(values.max())
    if hi > lo:
        pixels = np.rint((values - lo) / (hi - lo) * 65535.0).astype(">u2")
    else:
        pixels = np.full(values.shape, 32768, dtype=">u2")
    header = (
        f"P5\n# min={lo!r} max={hi!r}\n{values.shape[1]} {values.shape[0]}\n65535\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(pixels.tobytes())


def read_field_image_bounds(path):
    """Recover (min, max) from the PGM comment line."""
    with open(path, "rb") as fh:
        fh.readline()
        comment = fh.readline().decode("ascii").strip()
    if not comment.startswith("# min="):
        raise ValueError(f"{path} has no scaling-bounds comment")
    parts = dict(tok.split("=", 1) for tok in comment[2:].split())
    return float(parts["min"]), float(parts["max"])
