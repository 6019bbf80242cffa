"""Residual CNN regressing a rigid motion from a pair of range images.

Input: the previous and current range images stacked channelwise
(2 x 4 = 8 channels, H x W). Trunk: a stem convolution followed by 8
residual blocks that bring the feature map to (512, H/2, W/32); every
convolution pads circularly along the width (the image wraps around the
full azimuth circle) and with zeros along the height. Adaptive average
pooling collapses the map to one value per channel, a shared perceptron
mixes it, and two separate heads emit t in R^3 and q in R^4.

The quaternion head is biased to the identity so an untrained network
predicts roughly no motion; the consumer normalizes q.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

# (in_channels, out_channels, (height stride, width stride)) per block;
# width strides multiply to 32, height strides to 2.
BLOCK_PLAN = [
    (64, 64, (2, 2)),
    (64, 64, (1, 1)),
    (64, 128, (1, 2)),
    (128, 128, (1, 1)),
    (128, 256, (1, 2)),
    (256, 256, (1, 1)),
    (256, 512, (1, 2)),
    (512, 512, (1, 2)),
]

WIDTH_STRIDE_TOTAL = 32
HEIGHT_STRIDE_TOTAL = 2


class CircularPadConv(nn.Module):
    """3x3 convolution with circular width padding and zero height padding."""

    def __init__(self, in_ch, out_ch, stride=(1, 1)):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, kernel_size=3, stride=stride, padding=0)

    def forward(self, x):
        x = F.pad(x, (1, 1, 0, 0), mode="circular")
        x = F.pad(x, (0, 0, 1, 1), mode="constant", value=0.0)
        return self.conv(x)


class ResidualBlock(nn.Module):
    def __init__(self, in_ch, out_ch, stride):
        super().__init__()
        self.conv1 = CircularPadConv(in_ch, out_ch, stride=stride)
        self.norm1 = nn.GroupNorm(8, out_ch)
        self.conv2 = CircularPadConv(out_ch, out_ch)
        self.norm2 = nn.GroupNorm(8, out_ch)
        if in_ch != out_ch or stride != (1, 1):
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, kernel_size=1, stride=stride),
                nn.GroupNorm(8, out_ch),
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        out = F.relu(self.norm1(self.conv1(x)))
        out = self.norm2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


class PosePredictor(nn.Module):
    def __init__(self):
        super().__init__()
        self.stem = nn.Sequential(
            CircularPadConv(8, 64),
            nn.GroupNorm(8, 64),
            nn.ReLU(),
        )
        self.blocks = nn.Sequential(
            *[ResidualBlock(i, o, s) for i, o, s in BLOCK_PLAN]
        )
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.shared = nn.Sequential(nn.Linear(512, 256), nn.ReLU())
        self.head_t = nn.Linear(256, 3)
        self.head_q = nn.Linear(256, 4)
        self._init_identity_heads()

    def _init_identity_heads(self):
        # near-identity prediction at initialization: small weights, q biased
        # to (1, 0, 0, 0), t biased to zero
        for head in (self.head_t, self.head_q):
            nn.init.normal_(head.weight, std=1e-3)
            nn.init.zeros_(head.bias)
        with torch.no_grad():
            self.head_q.bias[0] = 1.0

    def trunk_features(self, image_pair: torch.Tensor) -> torch.Tensor:
        """(N, 8, H, W) -> (N, 512, H/2, W/32); H even, W divisible by 32."""
        n, c, h, w = image_pair.shape
        if c != 8:
            raise ValueError(f"expected 8 input channels (two range images), got {c}")
        if h % HEIGHT_STRIDE_TOTAL != 0 or w % WIDTH_STRIDE_TOTAL != 0:
            raise ValueError(
                f"input {h}x{w} must have height divisible by {HEIGHT_STRIDE_TOTAL} "
                f"and width divisible by {WIDTH_STRIDE_TOTAL}"
            )
        return self.blocks(self.stem(image_pair))

    def forward(self, image_pair: torch.Tensor):
        """Returns (q, t): (N, 4) unnormalized quaternion and (N, 3) meters."""
        features = self.trunk_features(image_pair)
        pooled = self.pool(features).flatten(1)
        mixed = self.shared(pooled)
        return self.head_q(mixed), self.head_t(mixed)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters() if p.requires_grad)


def stack_pair(prev_image, curr_image) -> torch.Tensor:
    """Concatenate two (4, H, W) range images into one (1, 8, H, W) input."""
    prev_t = torch.as_tensor(prev_image, dtype=torch.float32)
    curr_t = torch.as_tensor(curr_image, dtype=torch.float32)
    if prev_t.shape != curr_t.shape:
        raise ValueError(f"image shapes differ: {tuple(prev_t.shape)} vs {tuple(curr_t.shape)}")
    return torch.cat([prev_t, curr_t], dim=0).unsqueeze(0)
