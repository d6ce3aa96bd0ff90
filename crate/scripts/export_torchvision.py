"""Export ImageNet-pretrained torchvision weights to safetensors for cvtk.

Usage: python scripts/export_torchvision.py OUT_DIR [BACKBONE ...]

Writes OUT_DIR/<backbone>.safetensors with torchvision parameter names,
which is where cvtk looks when CVTK_WEIGHTS_DIR=OUT_DIR. The 1000-way
classifier is kept; cvtk skips head tensors when loading.
"""
import pathlib
import sys

import torchvision.models as tvm
from safetensors.torch import save_file

BACKBONES = {
    "resnet18": tvm.resnet18,
    "resnet50": tvm.resnet50,
    "resnet101": tvm.resnet101,
    "alexnet": tvm.alexnet,
    "vgg16": tvm.vgg16,
    "densenet121": tvm.densenet121,
    "squeezenet": tvm.squeezenet1_0,
    "inception_v3": tvm.inception_v3,
    "mobilenet_v2": tvm.mobilenet_v2,
    "efficientnet_b1": tvm.efficientnet_b1,
}


def main() -> None:
    if len(sys.argv) < 2:
        sys.exit(__doc__)
    out = pathlib.Path(sys.argv[1])
    out.mkdir(parents=True, exist_ok=True)
    names = sys.argv[2:] or list(BACKBONES)
    for name in names:
        model = BACKBONES[name](weights="DEFAULT")
        state = {
            k: v.detach().float().contiguous()
            for k, v in model.state_dict().items()
            if not k.endswith("num_batches_tracked")
        }
        save_file(state, str(out / f"{name}.safetensors"))
        print(f"{name}: {len(state)} tensors")


if __name__ == "__main__":
    main()
