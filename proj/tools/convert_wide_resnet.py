#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Convert a torchvision Wide-ResNet-50-2 into a dskd teacher weights file.

Batch norms are folded into the preceding convolutions (eval-mode
statistics). The output is read by `dskd train --teacher
pretrained-wide-residual --teacher-weights FILE`.

    python3 tools/convert_wide_resnet.py --out wrn50_2.dskdw            # ImageNet weights
    python3 tools/convert_wide_resnet.py --state-dict sd.pth --out w.dskdw
"""
import argparse
import json
import struct

import numpy as np
import torch
import torchvision

MAGIC = b"DSKDWRN1"


def fold(conv, bn):
    w = conv.weight.detach().double()
    scale = bn.weight.detach().double() / torch.sqrt(bn.running_var.double() + bn.eps)
    w = w * scale[:, None, None, None]
    b = bn.bias.detach().double() - bn.running_mean.double() * scale
    if conv.bias is not None:
        b = b + conv.bias.detach().double() * scale
    # (out, in, kh, kw) -> rows ordered (kh, kw, in), columns out
    k, cin, cout = w.shape[2], w.shape[1], w.shape[0]
    w = w.permute(2, 3, 1, 0).reshape(k * k * cin, cout)
    return w.numpy(), b.numpy()


def collect(model):
    tensors = [("stem", *fold(model.conv1, model.bn1))]
    layers = [model.layer1, model.layer2, model.layer3, model.layer4]
    for s, layer in enumerate(layers):
        for b, block in enumerate(layer):
            p = f"stage{s + 1}.{b}"
            tensors.append((p + ".reduce", *fold(block.conv1, block.bn1)))
            tensors.append((p + ".spatial", *fold(block.conv2, block.bn2)))
            tensors.append((p + ".expand", *fold(block.conv3, block.bn3)))
            if block.downsample is not None:
                tensors.append((p + ".shortcut", *fold(block.downsample[0], block.downsample[1])))
    return tensors


def arch_of(model):
    layers = [model.layer1, model.layer2, model.layer3, model.layer4]
    return {
        "blocks": [len(layer) for layer in layers],
        "stem_channels": model.conv1.out_channels,
        "base_width": model.layer1[0].conv1.out_channels,
        "base_out": model.layer1[0].conv3.out_channels,
    }


def write(model, path):
    model.eval()
    entries, payload = [], []
    for name, w, b in collect(model):
        entries.append({"name": name + ".weight", "shape": list(w.shape)})
        entries.append({"name": name + ".bias", "shape": list(b.shape)})
        payload += [w.astype("<f4").tobytes(), b.astype("<f4").tobytes()]
    header = json.dumps({"format": "dskd-wide-residual", "arch": arch_of(model), "tensors": entries})
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header.encode())
        for chunk in payload:
            f.write(chunk)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--state-dict", help="local wide_resnet50_2 state dict instead of a download")
    args = ap.parse_args()
    if args.state_dict:
        model = torchvision.models.wide_resnet50_2()
        model.load_state_dict(torch.load(args.state_dict, map_location="cpu"))
    else:
        weights = torchvision.models.Wide_ResNet50_2_Weights.IMAGENET1K_V1
        model = torchvision.models.wide_resnet50_2(weights=weights)
    write(model, args.out)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    np.seterr(all="raise")
    main()
