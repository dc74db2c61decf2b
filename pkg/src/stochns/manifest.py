"""Run manifests: config hash, seeds, path checksums and output hashes."""
from __future__ import annotations

import hashlib
import json
import os


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, *, command, config, version, seeds=(), checksums=(), outputs=(),
                   wall_clock=None, extra=None):
    """Write the manifest JSON; every output is listed with its content hash."""
    data = {
        "command": command,
        "version": version,
        "config_hash": config.hash(),
        "time_step": config.tau,
        "seeds": [int(s) for s in seeds],
        "path_checksums": list(checksums),
        "wall_clock_seconds": wall_clock,
        "outputs": [{"file": os.path.basename(p), "sha256": file_sha256(p)} for p in outputs],
    }
    if extra:
        data.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
