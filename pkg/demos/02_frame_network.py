"""Train a small frame network and inspect its named taps.

The toy task: distinguish horizontally vs vertically striped images.  A few
hundred SGD steps take the softmax from chance to near-certainty, and every
intermediate activation is available by tap name for downstream fusion.
"""

import numpy as np

from stfuse.convnet import backward, build_network, cross_entropy_loss, default_frame_layers, forward, sgd_step

rng = np.random.default_rng(0)


def striped(vertical, size=16):
    phase = rng.uniform(0, 2 * np.pi)
    coord = np.arange(size) * 0.9 + phase
    wave = 0.5 + 0.4 * np.sin(coord)
    img = np.tile(wave, (size, 1)) if not vertical else np.tile(wave[:, None], (1, size))
    img = img[:, :, None] * np.ones((1, 1, 3))
    return (img + rng.normal(0, 0.02, img.shape)).astype(np.float32)


net = build_network((16, 16, 3), default_frame_layers(num_classes=2), seed=1)
data = [(striped(v), int(v)) for v in rng.integers(0, 2, 120)]

print("Tap shapes:")
taps = forward(net, data[0][0])
for name, act in taps.items():
    print(f"  {name:4s} {act.shape}")

state = None
for epoch in range(8):
    for x, y in data:
        state = sgd_step(net, backward(net, x, y), lr=0.05, momentum=0.5, state=state)
    loss = np.mean([cross_entropy_loss(net, x, y) for x, y in data])
    acc = np.mean([int(np.argmax(forward(net, x)["o"])) == y for x, y in data])
    print(f"epoch {epoch}: loss {loss:.3f}  accuracy {acc:.2f}")

probs = forward(net, striped(True))["o"]
print(f"\nsoftmax on a fresh vertical image: {np.round(probs, 3)} (sums to {probs.sum():.5f})")
