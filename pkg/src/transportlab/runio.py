"""Artifact emission: manifests, CSV, JSON.

Every run writes a manifest (tool version + subcommand + resolved
numerical config) whose sha256 hash heads each CSV artifact as a comment
line and is embedded in each JSON artifact (JSON cannot carry comments).
Execution details like worker counts and output paths stay out of the
hash so parallel and serial runs emit identical artifact bytes.  Floats
are serialized with 17 significant digits (round-trip exact).
"""

import hashlib
import json
import os


def _canonical(obj):
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if hasattr(obj, "item"):  # numpy scalar
        return obj.item()
    return obj


def make_manifest(subcommand: str, config_echo: dict, version: str) -> tuple[dict, str]:
    manifest = _canonical({
        "tool": "transportlab",
        "version": version,
        "subcommand": subcommand,
        "config": config_echo,
    })
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":"))
    digest = hashlib.sha256(blob.encode()).hexdigest()
    return manifest, digest


def fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    if hasattr(value, "item"):
        return fmt(value.item())
    return str(value)


def write_csv(path: str, header, rows, manifest_hash: str):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# manifest_hash={manifest_hash}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def write_json(path: str, payload: dict, manifest_hash: str):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    doc = dict(payload)
    doc["manifest_hash"] = manifest_hash
    with open(path, "w", newline="\n") as fh:
        json.dump(_canonical(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_manifest(outdir: str, manifest: dict, digest: str):
    path = os.path.join(outdir, "manifest.json")
    os.makedirs(outdir, exist_ok=True)
    doc = dict(manifest)
    doc["manifest_hash"] = digest
    with open(path, "w", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
