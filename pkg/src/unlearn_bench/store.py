"""On-disk persistence for checkpoints, margin tensors, forget specs and the
experiment manifest.

Layout, rooted at an artifact directory::

    manifest.json
    forget_specs/<name>.json
    <kind>/<forget_id or "full">[/<method>]/checkpoints/model_<id>.ckpt
    <kind>/<forget_id or "full">[/<method>]/<phase>/model_<id>.margins
                                                    model_<id>.margins.json

``kind`` is pretrain, oracle or unlearned; unlearned artifacts carry an
extra method segment so several methods can coexist in one experiment.
``phase`` is forget, retain or val.

Margin files are little-endian float32, row-major, behind a 16-byte header
(magic ``UBMG``, version, rows, cols), with a JSON sidecar describing what
the rows are. Checkpoints are little-endian float64 arrays behind a JSON
header that embeds the architecture descriptor (magic ``UBCK``). Every
artifact's SHA-256 is recorded in the manifest; loads verify it and refuse
to return silently wrong numbers. Manifest writes are atomic
(write-temp-then-rename) with sorted keys, so identical experiments produce
identical manifest bytes.
"""

from __future__ import annotations

import difflib
import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import (
    ArchitectureMismatchError,
    ArtifactNotFoundError,
    CorruptArtifactError,
    InvalidInputError,
    ManifestVersionError,
    StorageError,
)
from .forget import ForgetSpec
from .metrics import MarginTensor
from .models import Arch, ModelParams

MANIFEST_VERSION = 1
MARGIN_MAGIC = b"UBMG"
MARGIN_VERSION = 1
CKPT_MAGIC = b"UBCK"
CKPT_VERSION = 1

KINDS = ("pretrain", "oracle", "unlearned")
PHASES = ("forget", "retain", "val")


def sha256_bytes(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


def sha256_file(path: Path) -> str:
    return sha256_bytes(Path(path).read_bytes())


def _atomic_write(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def encode_margin_rows(values: np.ndarray) -> bytes:
    """Serialize a (rows, cols) float32 matrix into the margin file format."""
    arr = np.ascontiguousarray(values, dtype="<f4")
    if arr.ndim != 2:
        raise InvalidInputError("margin payload must be 2-D")
    header = struct.pack("<4sIII", MARGIN_MAGIC, MARGIN_VERSION, arr.shape[0], arr.shape[1])
    return header + arr.tobytes()


def decode_margin_rows(payload: bytes, path: Path | None = None) -> np.ndarray:
    where = f" in {path}" if path else ""
    if len(payload) < 16:
        raise CorruptArtifactError(f"margin file too short{where}")
    magic, version, rows, cols = struct.unpack("<4sIII", payload[:16])
    if magic != MARGIN_MAGIC:
        raise CorruptArtifactError(f"bad margin magic{where}")
    if version != MARGIN_VERSION:
        raise ManifestVersionError(f"unsupported margin format version {version}{where}")
    expected = 16 + rows * cols * 4
    if len(payload) != expected:
        raise CorruptArtifactError(f"margin payload length mismatch{where}")
    return np.frombuffer(payload[16:], dtype="<f4").reshape(rows, cols).copy()


def encode_checkpoint(params: ModelParams) -> bytes:
    """Serialize model parameters with their architecture descriptor."""
    header_obj = {
        "arch": params.arch.to_dict(),
        "seed": params.seed,
        "n_layers": len(params.weights),
    }
    header = json.dumps(header_obj, sort_keys=True).encode()
    blob = struct.pack("<4sII", CKPT_MAGIC, CKPT_VERSION, len(header)) + header
    for w, b in zip(params.weights, params.biases):
        blob += np.ascontiguousarray(w, dtype="<f8").tobytes()
        blob += np.ascontiguousarray(b, dtype="<f8").tobytes()
    return blob


def decode_checkpoint(payload: bytes, path: Path | None = None) -> ModelParams:
    where = f" in {path}" if path else ""
    if len(payload) < 12:
        raise CorruptArtifactError(f"checkpoint too short{where}")
    magic, version, header_len = struct.unpack("<4sII", payload[:12])
    if magic != CKPT_MAGIC:
        raise CorruptArtifactError(f"bad checkpoint magic{where}")
    if version != CKPT_VERSION:
        raise ManifestVersionError(f"unsupported checkpoint version {version}{where}")
    header = json.loads(payload[12 : 12 + header_len].decode())
    arch = Arch.from_dict(header["arch"])
    offset = 12 + header_len
    weights, biases = [], []
    for out_dim, in_dim in arch.layer_shapes():
        w_bytes = out_dim * in_dim * 8
        weights.append(
            np.frombuffer(payload[offset : offset + w_bytes], dtype="<f8")
            .reshape(out_dim, in_dim)
            .copy()
        )
        offset += w_bytes
        biases.append(np.frombuffer(payload[offset : offset + out_dim * 8], dtype="<f8").copy())
        offset += out_dim * 8
    if offset != len(payload):
        raise CorruptArtifactError(f"checkpoint payload length mismatch{where}")
    return ModelParams(arch=arch, weights=weights, biases=biases, seed=int(header["seed"]))


class MarginStore:
    """Artifact store rooted at one directory, indexed by the manifest."""

    def __init__(self, root: Path | str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.manifest_path = self.root / "manifest.json"

    # -- manifest ----------------------------------------------------------

    def manifest_exists(self) -> bool:
        return self.manifest_path.exists()

    def read_manifest(self) -> dict:
        if not self.manifest_path.exists():
            raise ArtifactNotFoundError(f"no manifest at {self.manifest_path}")
        manifest = json.loads(self.manifest_path.read_text())
        version = manifest.get("format_version")
        if version != MANIFEST_VERSION:
            raise ManifestVersionError(
                f"manifest format version {version} needs migration (supported: {MANIFEST_VERSION})"
            )
        return manifest

    def write_manifest(self, manifest: dict) -> None:
        _atomic_write(self.manifest_path, _canonical_json(manifest).encode())

    def init_manifest(self, plan_hash: str, dataset_descriptor: dict) -> dict:
        """Create the manifest, or validate it against the plan on reuse."""
        if self.manifest_path.exists():
            manifest = self.read_manifest()
            if manifest["plan_hash"] != plan_hash:
                raise StorageError(
                    f"artifact root {self.root} holds a different plan "
                    f"({manifest['plan_hash'][:12]} != {plan_hash[:12]}); "
                    "use a fresh root or --force"
                )
            return manifest
        manifest = {
            "format_version": MANIFEST_VERSION,
            "plan_hash": plan_hash,
            "dataset": dataset_descriptor,
            "forget_specs": {},
            "ensembles": {},
            "artifacts": {},
        }
        self.write_manifest(manifest)
        return manifest

    def _record_artifacts(self, entries: dict[str, str]) -> None:
        manifest = self.read_manifest()
        manifest["artifacts"].update(entries)
        self.write_manifest(manifest)

    # -- keys and paths ----------------------------------------------------

    @staticmethod
    def _check_kind_phase(kind: str, phase: str | None, forget_id: str | None, method: str | None) -> None:
        if kind not in KINDS:
            raise InvalidInputError(f"kind must be one of {KINDS}")
        if phase is not None and phase not in PHASES:
            raise InvalidInputError(f"phase must be one of {PHASES}")
        if phase in ("forget", "retain") and forget_id is None:
            raise InvalidInputError(f"phase {phase!r} requires a forget_id")
        if kind in ("oracle", "unlearned") and forget_id is None:
            raise InvalidInputError(f"kind {kind!r} requires a forget_id")
        if (kind == "unlearned") != (method is not None):
            raise InvalidInputError("method must be given exactly for kind 'unlearned'")

    def ensemble_key(self, kind: str, forget_id: str | None, method: str | None) -> str:
        self._check_kind_phase(kind, None, forget_id, method)
        parts = [kind, forget_id or "full"]
        if method is not None:
            parts.append(method)
        return "/".join(parts)

    def _ensemble_dir(self, kind: str, forget_id: str | None, method: str | None) -> Path:
        parts = [kind, forget_id or "full"]
        if method is not None:
            parts.append(method)
        return self.root.joinpath(*parts)

    def margin_path(
        self, kind: str, phase: str, forget_id: str | None, method: str | None, model_id: int
    ) -> Path:
        self._check_kind_phase(kind, phase, forget_id, method)
        base = self._ensemble_dir(kind, forget_id, method)
        return base / phase / f"model_{model_id:05d}.margins"

    def checkpoint_path(
        self, kind: str, forget_id: str | None, method: str | None, model_id: int
    ) -> Path:
        self._check_kind_phase(kind, None, forget_id, method)
        base = self._ensemble_dir(kind, forget_id, method)
        return base / "checkpoints" / f"model_{model_id:05d}.ckpt"

    def _rel(self, path: Path) -> str:
        return path.relative_to(self.root).as_posix()

    def _verified_read(self, path: Path) -> bytes:
        rel = self._rel(path)
        manifest = self.read_manifest()
        digest = manifest["artifacts"].get(rel)
        if digest is None or not path.exists():
            close = difflib.get_close_matches(rel, manifest["artifacts"].keys(), n=3, cutoff=0.4)
            hint = f"; nearest keys: {close}" if close else ""
            raise ArtifactNotFoundError(f"no artifact {rel!r}{hint}")
        payload = path.read_bytes()
        if sha256_bytes(payload) != digest:
            raise CorruptArtifactError(f"digest mismatch for {rel!r}; artifact is corrupt")
        return payload

    # -- forget specs ------------------------------------------------------

    def save_forget_spec(self, spec: ForgetSpec) -> None:
        path = self.root / "forget_specs" / f"{spec.name}.json"
        payload = _canonical_json(spec.to_dict()).encode()
        _atomic_write(path, payload)
        manifest = self.read_manifest()
        manifest["forget_specs"][spec.name] = {
            "strategy": spec.strategy,
            "size": spec.size,
            "indices_sha256": sha256_bytes(json.dumps(list(spec.indices)).encode()),
        }
        manifest["artifacts"][self._rel(path)] = sha256_bytes(payload)
        self.write_manifest(manifest)

    def load_forget_spec(self, name: str) -> ForgetSpec:
        path = self.root / "forget_specs" / f"{name}.json"
        payload = self._verified_read(path)
        return ForgetSpec.from_dict(json.loads(payload.decode()))

    # -- ensembles ---------------------------------------------------------

    def begin_ensemble(
        self, kind: str, forget_id: str | None, method: str | None, n_models: int, seed_start: int
    ) -> None:
        key = self.ensemble_key(kind, forget_id, method)
        manifest = self.read_manifest()
        manifest["ensembles"][key] = {
            "kind": kind,
            "forget_id": forget_id,
            "method": method,
            "n_models": n_models,
            "seed_start": seed_start,
            "seed_end": seed_start + n_models - 1,
            "status": "incomplete",
        }
        self.write_manifest(manifest)

    def complete_ensemble(self, kind: str, forget_id: str | None, method: str | None) -> None:
        key = self.ensemble_key(kind, forget_id, method)
        manifest = self.read_manifest()
        if key not in manifest["ensembles"]:
            raise ArtifactNotFoundError(f"ensemble {key!r} was never started")
        manifest["ensembles"][key]["status"] = "complete"
        self.write_manifest(manifest)

    def ensemble_record(self, kind: str, forget_id: str | None, method: str | None) -> dict | None:
        key = self.ensemble_key(kind, forget_id, method)
        if not self.manifest_exists():
            return None
        return self.read_manifest()["ensembles"].get(key)

    # -- checkpoints -------------------------------------------------------

    def save_checkpoint(
        self, params: ModelParams, kind: str, forget_id: str | None, method: str | None, model_id: int
    ) -> None:
        path = self.checkpoint_path(kind, forget_id, method, model_id)
        payload = encode_checkpoint(params)
        _atomic_write(path, payload)
        self._record_artifacts({self._rel(path): sha256_bytes(payload)})

    def load_checkpoint(
        self,
        kind: str,
        forget_id: str | None,
        method: str | None,
        model_id: int,
        expected_arch: Arch | None = None,
    ) -> ModelParams:
        path = self.checkpoint_path(kind, forget_id, method, model_id)
        params = decode_checkpoint(self._verified_read(path), path)
        if expected_arch is not None and params.arch != expected_arch:
            raise ArchitectureMismatchError(
                f"checkpoint {self._rel(path)!r} has architecture {params.arch}, "
                f"expected {expected_arch}"
            )
        return params

    def has_checkpoint(self, kind: str, forget_id: str | None, method: str | None, model_id: int) -> bool:
        return self.checkpoint_path(kind, forget_id, method, model_id).exists()

    def verify_checkpoints(
        self, kind: str, forget_id: str | None, method: str | None, n_models: int
    ) -> bool:
        """True when all n_models checkpoints exist and match their digests."""
        try:
            for i in range(n_models):
                self._verified_read(self.checkpoint_path(kind, forget_id, method, i))
        except StorageError:
            return False
        return True

    # -- margins -----------------------------------------------------------

    def save_margins(
        self,
        values: np.ndarray,
        kind: str,
        phase: str,
        forget_id: str | None,
        method: str | None,
        model_ids: list[int],
        split_label: str,
    ) -> None:
        """Persist one margin row per model id, plus sidecars and digests."""
        values = np.asarray(values, dtype=np.float32)
        if values.ndim != 2 or values.shape[0] != len(model_ids):
            raise InvalidInputError("values must be (len(model_ids), n_points)")
        entries: dict[str, str] = {}
        for row, model_id in enumerate(model_ids):
            path = self.margin_path(kind, phase, forget_id, method, model_id)
            payload = encode_margin_rows(values[row : row + 1])
            _atomic_write(path, payload)
            sidecar = {
                "kind": kind,
                "phase": phase,
                "forget_id": forget_id,
                "method": method,
                "model_id": model_id,
                "split_label": split_label,
                "clipped": True,
                "rows": 1,
                "cols": int(values.shape[1]),
            }
            side_payload = _canonical_json(sidecar).encode()
            side_path = path.with_name(path.name + ".json")
            _atomic_write(side_path, side_payload)
            entries[self._rel(path)] = sha256_bytes(payload)
            entries[self._rel(side_path)] = sha256_bytes(side_payload)
        self._record_artifacts(entries)

    def load_margins_array(
        self, kind: str, phase: str, forget_id: str | None, method: str | None, model_id: int
    ) -> np.ndarray:
        """One model's margin row for a phase, as a 1-D float32 array."""
        path = self.margin_path(kind, phase, forget_id, method, model_id)
        return decode_margin_rows(self._verified_read(path), path)[0]

    def load_margins(
        self,
        kind: str,
        phase: str,
        forget_id: str | None = None,
        method: str | None = None,
        model_ids: list[int] | None = None,
    ) -> MarginTensor:
        """Stack model rows (in model_id order) into a clipped MarginTensor."""
        if model_ids is None:
            record = self.ensemble_record(kind, forget_id, method)
            if record is None:
                raise ArtifactNotFoundError(
                    f"no ensemble {self.ensemble_key(kind, forget_id, method)!r} in manifest"
                )
            model_ids = list(range(record["n_models"]))
        rows = [self.load_margins_array(kind, phase, forget_id, method, i) for i in model_ids]
        return MarginTensor(values=np.vstack(rows), clipped=True, split_label=phase)

    def has_margins(
        self, kind: str, phase: str, forget_id: str | None, method: str | None, model_ids: list[int]
    ) -> bool:
        return all(
            self.margin_path(kind, phase, forget_id, method, i).exists() for i in model_ids
        )

    def verify_margins(
        self, kind: str, phase: str, forget_id: str | None, method: str | None, model_ids: list[int]
    ) -> bool:
        try:
            for i in model_ids:
                self._verified_read(self.margin_path(kind, phase, forget_id, method, i))
        except StorageError:
            return False
        return True
