# Copyright 2026 The meshfield Authors
# SPDX-License-Identifier: Apache-2.0

"""Reads an exported asset with Pillow and trimesh and prints a JSON summary.

Usage: third_party_check.py <asset_dir>
"""

import json
import os
import sys

import trimesh
from PIL import Image


def main():
    asset = sys.argv[1]
    with open(os.path.join(asset, "mlp.json")) as f:
        manifest = json.load(f)
    mesh = trimesh.load(os.path.join(asset, "mesh.obj"), force="mesh", process=False,
                        maintain_order=True)
    uv = getattr(mesh.visual, "uv", None)
    pages = []
    for p in range(manifest["num_pages"]):
        for block in (0, 1):
            name = "feat%d_%d.png" % (block, p)
            with Image.open(os.path.join(asset, name)) as img:
                img.load()
                pages.append({
                    "name": name,
                    "mode": img.mode,
                    "size": list(img.size),
                    "sum": sum(img.tobytes()),
                })
    print(json.dumps({
        "vertices": len(mesh.vertices),
        "faces": len(mesh.faces),
        "uvs": 0 if uv is None else len(uv),
        "bounds": [] if len(mesh.vertices) == 0 else mesh.bounds.tolist(),
        "pages": pages,
    }))


if __name__ == "__main__":
    main()
