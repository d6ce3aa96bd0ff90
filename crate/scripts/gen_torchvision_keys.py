"""Dump parameter names and shapes of torchvision backbones with a 2-way head.

Output: crates/core/tests/fixtures/torchvision_keys.json
No pretrained weights are downloaded.
"""
import json
import pathlib
import sys

import torch
import torchvision.models as tvm

BUILDERS = {
    "resnet18": lambda: tvm.resnet18(num_classes=2),
    "resnet50": lambda: tvm.resnet50(num_classes=2),
    "resnet101": lambda: tvm.resnet101(num_classes=2),
    "alexnet": lambda: tvm.alexnet(num_classes=2),
    "vgg16": lambda: tvm.vgg16(num_classes=2),
    "densenet121": lambda: tvm.densenet121(num_classes=2),
    "squeezenet1_0": lambda: tvm.squeezenet1_0(num_classes=2),
    "inception_v3": lambda: tvm.inception_v3(num_classes=2, aux_logits=True, init_weights=False),
    "mobilenet_v2": lambda: tvm.mobilenet_v2(num_classes=2),
    "efficientnet_b1": lambda: tvm.efficientnet_b1(num_classes=2),
}


def main(out: pathlib.Path) -> None:
    torch.manual_seed(0)
    result = {}
    for name, build in BUILDERS.items():
        model = build()
        params = {k: list(v.shape) for k, v in model.named_parameters()}
        buffers = {
            k: list(v.shape)
            for k, v in model.named_buffers()
            if not k.endswith("num_batches_tracked")
        }
        result[name] = {
            "parameters": params,
            "buffers": buffers,
            "num_parameters": sum(v.numel() for v in model.parameters()),
        }
        print(name, result[name]["num_parameters"])
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(result, indent=1, sort_keys=True))


if __name__ == "__main__":
    root = pathlib.Path(__file__).resolve().parent.parent
    main(pathlib.Path(sys.argv[1]) if len(sys.argv) > 1 else root / "crates/core/tests/fixtures/torchvision_keys.json")
