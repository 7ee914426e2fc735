"""Regenerates the small ONNX models and onnxruntime goldens used by test_onnx.

Run from this directory: python3 make_onnx_models.py
"""

import json

import numpy as np
import onnx
import onnxruntime as ort
import torch
from torch import nn


class MiniVgg(nn.Module):
    """VGG-shaped: conv blocks, max pooling, dropout classifier, softmax."""

    def __init__(self):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(3, 8, 3, padding=1), nn.ReLU(inplace=True), nn.MaxPool2d(2, 2),
            nn.Conv2d(8, 16, 3, padding=1), nn.ReLU(inplace=True),
            nn.Conv2d(16, 16, 3, padding=1), nn.ReLU(inplace=True), nn.MaxPool2d(2, 2),
        )
        self.classifier = nn.Sequential(
            nn.Linear(16 * 4 * 4, 32), nn.ReLU(inplace=True), nn.Dropout(),
            nn.Linear(32, 5),
        )

    def forward(self, x):
        x = self.features(x)
        x = torch.flatten(x, 1)
        return torch.softmax(self.classifier(x), dim=1)


class MiniAlex(nn.Module):
    """AlexNet-shaped: strided conv, batch norm, grouped conv, adaptive pooling; ends at logits."""

    def __init__(self):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(3, 6, 5, stride=2, padding=2), nn.ReLU(), nn.MaxPool2d(3, 2),
            nn.Conv2d(6, 12, 3, padding=1), nn.BatchNorm2d(12), nn.LeakyReLU(0.1),
            nn.Conv2d(12, 12, 3, padding=1, groups=3), nn.ReLU(),
        )
        self.pool = nn.AdaptiveAvgPool2d(2)
        self.fc = nn.Sequential(nn.Dropout(), nn.Linear(12 * 2 * 2, 4))

    def forward(self, x):
        x = self.pool(self.features(x))
        return self.fc(x.reshape(x.shape[0], -1))


def export(model, name, size, classes, layer_index):
    torch.manual_seed(0)
    model.eval()
    for m in model.modules():
        if isinstance(m, nn.BatchNorm2d):
            m.running_mean.uniform_(-0.2, 0.2)
            m.running_var.uniform_(0.5, 1.5)
    dummy = torch.zeros(1, 3, size, size)
    path = f"{name}.onnx"
    torch.onnx.export(model, dummy, path, input_names=["input"], output_names=["scores"],
                      opset_version=13, dynamo=False)
    graph = onnx.load(path)
    relus = [n.output[0] for n in graph.graph.node if n.op_type == "Relu" and "/features/" in n.output[0]]
    layer = relus[layer_index]

    # Expose the target activation as an extra output for the golden run.
    probe = onnx.load(path)
    probe.graph.output.append(onnx.helper.make_tensor_value_info(layer, onnx.TensorProto.FLOAT, None))
    session = ort.InferenceSession(probe.SerializeToString(), providers=["CPUExecutionProvider"])
    rng = np.random.default_rng(7)
    cases = []
    for _ in range(3):
        x = rng.normal(size=(1, 3, size, size)).astype(np.float32)
        scores, act = session.run(None, {"input": x})
        cases.append({
            "input": x.ravel().tolist(),
            "scores": scores.ravel().astype(float).tolist(),
            "activation_shape": list(act.shape),
            "activation": act.ravel().astype(float).tolist(),
        })
    with open(f"{name}_golden.json", "w") as f:
        json.dump({"layer": layer, "size": size, "classes": classes, "cases": cases}, f)
    with open(f"{name}_manifest.json", "w") as f:
        json.dump({"model": name, "path": path,
                   "input": {"channels": 3, "height": size, "width": size},
                   "target_layer": layer, "class_count": classes}, f, indent=2)


if __name__ == "__main__":
    torch.manual_seed(0)
    export(MiniVgg(), "mini_vgg", 16, 5, -1)
    torch.manual_seed(1)
    export(MiniAlex(), "mini_alex", 28, 4, -1)
