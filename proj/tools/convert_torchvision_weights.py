#!/usr/bin/env python3
# Copyright 2026 The soilseg Authors
# SPDX-License-Identifier: Apache-2.0
"""Re-save torchvision weights as a plain dict of tensors readable by soilseg.

torchvision checkpoints store an OrderedDict (sometimes nested under
"model" or "state_dict"); the C++ loader reads a plain pickled dict. Keys are
kept as they are: ImageNet ResNet-50 keys ("conv1.weight", "layer1.0...") and
Mask R-CNN keys ("backbone.body...", "backbone.fpn...") are both understood.

Examples:
  convert_torchvision_weights.py resnet50-0676ba61.pth resnet50.pt
  convert_torchvision_weights.py --model maskrcnn_resnet50_fpn_coco backbone.pt
"""

import argparse
import sys

import torch


def load_source(args):
    if args.model:
        import torchvision

        weights = {
            "resnet50": torchvision.models.ResNet50_Weights.IMAGENET1K_V1,
            "maskrcnn_resnet50_fpn_coco": torchvision.models.detection.MaskRCNN_ResNet50_FPN_Weights.COCO_V1,
        }[args.model]
        return weights.get_state_dict(progress=True)
    obj = torch.load(args.input, map_location="cpu", weights_only=True)
    for key in ("model", "state_dict"):
        if isinstance(obj, dict) and key in obj and isinstance(obj[key], dict):
            obj = obj[key]
    return obj


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("input", nargs="?", help="torchvision .pth file")
    parser.add_argument("output", help="destination file")
    parser.add_argument("--model", choices=["resnet50", "maskrcnn_resnet50_fpn_coco"],
                        help="download named torchvision weights instead of reading INPUT")
    parser.add_argument("--backbone-only", action="store_true",
                        help="keep only backbone tensors of a detection checkpoint")
    args = parser.parse_args()
    if bool(args.input) == bool(args.model):
        parser.error("give exactly one of INPUT or --model")

    state = load_source(args)
    out = {}
    for key, value in state.items():
        if not torch.is_tensor(value):
            continue
        if args.backbone_only and not key.startswith("backbone."):
            continue
        out[str(key)] = value.detach().cpu().contiguous()
    if not out:
        print("error: no tensors to write", file=sys.stderr)
        return 2
    torch.save(out, args.output)
    print(f"wrote {len(out)} tensors to {args.output}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
