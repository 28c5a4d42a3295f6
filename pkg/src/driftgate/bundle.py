"""Versioned container for the trained pipeline and its serialization.

A bundle holds the normalization stats, the quantizing autoencoder, and the
transformer, versioned together. The on-disk format is a zip archive with a
JSON manifest and one .npy entry per weight array; zip timestamps are pinned
so identical bundles serialize to identical bytes, and weights round-trip
bit-exactly.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass

import numpy as np

from .armodel import ARConfig, ARModel
from .codec import CodecConfig, VqvaeModel
from .errors import SchemaError
from .signal import ChannelStats

BUNDLE_VERSION = "1"
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


@dataclass
class ModelBundle:
    stats: ChannelStats
    vqvae: VqvaeModel
    ar: ARModel
    version: str = BUNDLE_VERSION

    def copy(self) -> "ModelBundle":
        return ModelBundle(
            stats=ChannelStats(self.stats.mean.copy(), self.stats.std.copy()),
            vqvae=self.vqvae.copy(),
            ar=self.ar.copy(),
            version=self.version,
        )


def _write_entry(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    info.compress_type = zipfile.ZIP_DEFLATED
    zf.writestr(info, data)


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, arr)
    return buf.getvalue()


def save_bundle(path, bundle: ModelBundle) -> None:
    manifest = {
        "version": bundle.version,
        "stats": {"mean": bundle.stats.mean.tolist(), "std": bundle.stats.std.tolist()},
        "vq_config": asdict(bundle.vqvae.config),
        "ar_config": asdict(bundle.ar.config),
        "vq_params": sorted(bundle.vqvae.params),
        "ar_params": sorted(bundle.ar.params),
    }
    with zipfile.ZipFile(path, "w") as zf:
        _write_entry(zf, "manifest.json", json.dumps(manifest, indent=2, sort_keys=True).encode())
        for name in manifest["vq_params"]:
            _write_entry(zf, f"vq/{name}.npy", _npy_bytes(bundle.vqvae.params[name]))
        _write_entry(zf, "vq/usage_counts.npy", _npy_bytes(bundle.vqvae.usage_counts))
        for name in manifest["ar_params"]:
            _write_entry(zf, f"ar/{name}.npy", _npy_bytes(bundle.ar.params[name]))


def load_bundle(path) -> ModelBundle:
    with zipfile.ZipFile(path) as zf:
        try:
            manifest = json.loads(zf.read("manifest.json"))
        except KeyError:
            raise SchemaError(f"{path}: not a model bundle (missing manifest)") from None
        if manifest.get("version") != BUNDLE_VERSION:
            raise SchemaError(
                f"{path}: unsupported bundle version {manifest.get('version')!r}"
            )

        def read_arr(name):
            return np.load(io.BytesIO(zf.read(name)))

        vq_params = {n: read_arr(f"vq/{n}.npy") for n in manifest["vq_params"]}
        ar_params = {n: read_arr(f"ar/{n}.npy") for n in manifest["ar_params"]}
        usage = read_arr("vq/usage_counts.npy")
    stats = ChannelStats(
        mean=np.asarray(manifest["stats"]["mean"]), std=np.asarray(manifest["stats"]["std"])
    )
    vq = VqvaeModel(vq_params, CodecConfig(**manifest["vq_config"]), usage)
    ar = ARModel(ar_params, ARConfig(**manifest["ar_config"]))
    return ModelBundle(stats=stats, vqvae=vq, ar=ar, version=manifest["version"])
