#!/usr/bin/env python3
"""External embedder process for the pedsynth `inception-pool3` embedder.

Usage: inception_features.py [--device DEV] request.json

Reads {"mode": "embed", "images": [png paths], "output": path} and writes
{"features": [[2048 floats], ...]} with one row per image, in request order.
Uses the FID Inception weights from pytorch-fid when installed, otherwise the
torchvision ImageNet Inception v3 pool features.
"""

import argparse
import json
import os
import sys
from pathlib import Path


def build_model(device):
    try:
        from pytorch_fid.inception import InceptionV3

        model = InceptionV3([InceptionV3.BLOCK_INDEX_BY_DIM[2048]], resize_input=True, normalize_input=True)

        def forward(x):
            return model(x)[0].squeeze(-1).squeeze(-1)

    except ImportError:
        import torch
        from torchvision.models import Inception_V3_Weights, inception_v3

        model = inception_v3(weights=Inception_V3_Weights.IMAGENET1K_V1, aux_logits=True)
        model.fc = torch.nn.Identity()
        mean = torch.tensor([0.485, 0.456, 0.406], device=device).view(1, 3, 1, 1)
        std = torch.tensor([0.229, 0.224, 0.225], device=device).view(1, 3, 1, 1)

        def forward(x):
            x = torch.nn.functional.interpolate(x, size=(299, 299), mode="bilinear", align_corners=False)
            return model((x - mean) / std)

    model.eval().to(device)
    return forward


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("request")
    parser.add_argument("--device", default=os.environ.get("PEDSYNTH_DEVICE", "cuda"))
    args = parser.parse_args()

    req = json.loads(Path(args.request).read_text())
    if req.get("mode", "embed") != "embed":
        print(f"inception_features: unknown mode {req.get('mode')!r}", file=sys.stderr)
        return 2
    try:
        import numpy as np
        import torch
        from PIL import Image
    except ImportError as e:
        print(f"inception_features: missing dependency ({e}); install torch, torchvision and pillow", file=sys.stderr)
        return 3

    forward = build_model(args.device)
    rows = []
    with torch.no_grad():
        # Pedestrian crops differ in size, so each image is resized on its own.
        for path in req["images"]:
            arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
            x = torch.from_numpy(arr).permute(2, 0, 1)[None].to(args.device)
            rows.append(forward(x)[0].double().cpu().tolist())
    Path(req["output"]).write_text(json.dumps({"features": rows}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
