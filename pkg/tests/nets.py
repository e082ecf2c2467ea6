"""Random weight bundles and backbone activations for small inputs."""

import numpy as np

from oneshot_seg.matching import BackboneFeatures
from oneshot_seg.weights import BACKBONE_CHANNELS, WeightBundle


def random_weights(seed=0, hidden=8, fc=8, mask=4, scale=0.05):
    r = np.random.default_rng(seed)

    def t(*shape):
        return (r.standard_normal(shape) * scale).astype(np.float32)

    w = {}
    for lvl, ch in BACKBONE_CHANNELS.items():
        w[f"fpn.lateral{lvl}.weight"] = t(1, 1, ch, 256)
        w[f"fpn.lateral{lvl}.bias"] = t(256)
    for lvl in range(2, 7):
        w[f"match.reduce{lvl}.weight"] = t(1, 1, 512, 384)
        w[f"match.reduce{lvl}.bias"] = t(384)
    w["rpn.conv.weight"], w["rpn.conv.bias"] = t(3, 3, 384, hidden), t(hidden)
    w["rpn.cls.weight"], w["rpn.cls.bias"] = t(1, 1, hidden, 6), t(6)
    w["rpn.bbox.weight"], w["rpn.bbox.bias"] = t(1, 1, hidden, 12), t(12)
    w["head.fc1.weight"], w["head.fc1.bias"] = t(7 * 7 * 4 * 384, fc), t(fc)
    w["head.fc2.weight"], w["head.fc2.bias"] = t(fc, fc), t(fc)
    w["head.cls.weight"] = t(fc, 2)
    w["head.cls.bias"] = np.array([0.0, 3.0], np.float32)  # keep most boxes above the score floor
    w["head.bbox.weight"], w["head.bbox.bias"] = t(fc, 4), t(4)
    cin = 4 * 384
    for i in range(1, 5):
        w[f"mask.conv{i}.weight"], w[f"mask.conv{i}.bias"] = t(3, 3, cin, mask), t(mask)
        w[f"mask.bn{i}.mean"] = t(mask)
        w[f"mask.bn{i}.var"] = np.abs(t(mask)) + 1
        w[f"mask.bn{i}.gamma"] = 1 + t(mask)
        w[f"mask.bn{i}.beta"] = t(mask)
        cin = mask
    w["mask.deconv.weight"], w["mask.deconv.bias"] = t(2, 2, mask, mask), t(mask)
    w["mask.out.weight"], w["mask.out.bias"] = t(1, 1, mask, 2), t(2)
    return WeightBundle(w)


def random_backbone(size, seed=0):
    r = np.random.default_rng(seed)
    return BackboneFeatures(*(
        r.random((size // s, size // s, ch)).astype(np.float32)
        for s, ch in zip((4, 8, 16, 32), BACKBONE_CHANNELS.values())
    ))
