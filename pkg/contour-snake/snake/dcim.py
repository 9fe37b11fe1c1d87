"""
Differential convolution inception module

Three pixel-difference branches (stepped, diagonal, circular) and a 3x3
average pool read the energy map; a 1x1 convolution fuses them into F
feature channels. Patch indices run 0..8 row-major over the 3x3
neighbourhood, 4 is the centre.
"""
import numpy as np

from . import diffcore as dc
from .errors import ShapeError

SDC_PAIRS = ((1, 4), (7, 4), (3, 4), (5, 4), (0, 1), (2, 1), (6, 7), (8, 7))
DDC_PAIRS = ((0, 4), (2, 4), (6, 4), (8, 4), (0, 8), (2, 6))
CDC_PAIRS = tuple((k, 4) for k in range(9) if k != 4) + \
    ((0, 1), (1, 2), (2, 5), (5, 8), (8, 7), (7, 6), (6, 3), (3, 0))

PATTERNS = {
    'sdc': SDC_PAIRS,
    'ddc': DDC_PAIRS,
    'cdc': CDC_PAIRS,
}

BRANCH_WIDTH = 4


def check_pattern(pairs):
    for i, j in pairs:
        if not (0 <= i <= 8 and 0 <= j <= 8):
            raise ShapeError(f"pair ({i}, {j}) indexes outside the 3x3 patch")
        if i == j:
            raise ShapeError(f"pair ({i}, {j}) differences a pixel with itself")
    if not 0 < len(pairs) <= 9:
        raise ShapeError(f"a pattern holds 1..9 pairs, got {len(pairs)}")
    return tuple(pairs)


def difference_matrix(pairs):
    """m x 9 matrix whose row r is e_i - e_i' for pair r"""
    d = np.zeros((len(pairs), 9))
    for r, (i, j) in enumerate(pairs):
        d[r, i] += 1.0
        d[r, j] -= 1.0
    return d


class DCBranch(dc.Module):
    """One pixel-difference convolution: y = sum_i w_i (x_i - x_i') + b"""

    def __init__(self, pattern, kernels, bias):
        self.pattern = check_pattern(pattern)
        self.kernels = kernels
        self.bias = bias
        if kernels.shape[2] != len(self.pattern):
            raise ShapeError(f"kernel holds {kernels.shape[2]} weights per channel, pattern has {len(self.pattern)} pairs")

    @classmethod
    def create(cls, rng, pattern, in_channels, out_channels):
        m = len(pattern)
        kernels = dc.glorot_uniform(rng, (out_channels, in_channels, m), in_channels * m, out_channels * m)
        return cls(pattern, kernels, dc.zeros_param((out_channels,)))

    def effective_kernel(self):
        """The equivalent 3x3 kernel, O x C x 3 x 3"""
        O, C, m = self.kernels.shape
        flat = dc.reshape(self.kernels, (O * C, m))
        return dc.reshape(dc.matmul(flat, dc.Tensor(difference_matrix(self.pattern))), (O, C, 3, 3))


def standard_conv3x3(x, kernels, bias=None):
    """Same-size 3x3 cross-correlation with zero padding"""
    return dc.conv2d(x, kernels, bias, stride=1, padding=1)


def diff_conv(x, branch):
    x = dc.as_tensor(x)
    if x.shape[0] != branch.kernels.shape[1]:
        raise ShapeError(f"diff_conv channel mismatch: input has {x.shape[0]}, branch expects {branch.kernels.shape[1]}")
    return dc.conv2d(x, branch.effective_kernel(), branch.bias, stride=1, padding=1)


def avg_pool3x3(x):
    """Stride 1, zero-padded 3x3 mean per channel"""
    x = dc.as_tensor(x)
    C = x.shape[0]
    kernel = np.zeros((C, C, 3, 3))
    for c in range(C):
        kernel[c, c] = 1.0 / 9.0
    return dc.conv2d(x, dc.Tensor(kernel), None, stride=1, padding=1)


class DCIM(dc.Module):
    """SDC / DDC / CDC / pool branches fused by a 1x1 conv to F channels"""

    def __init__(self, rng, features=16, in_channels=1, branch_width=BRANCH_WIDTH):
        self.sdc = DCBranch.create(rng, SDC_PAIRS, in_channels, branch_width)
        self.ddc = DCBranch.create(rng, DDC_PAIRS, in_channels, branch_width)
        self.cdc = DCBranch.create(rng, CDC_PAIRS, in_channels, branch_width)
        fused = 3 * branch_width + in_channels
        self.fuse_w = dc.glorot_uniform(rng, (features, fused, 1, 1), fused, features)
        self.fuse_b = dc.zeros_param((features,))

    @property
    def features(self):
        return self.fuse_w.shape[0]

    def forward(self, energy):
        """C x H x W (or H x W) energy -> F x H x W"""
        energy = dc.as_tensor(energy)
        if energy.data.ndim == 2:
            energy = dc.reshape(energy, (1,) + energy.shape)
        if energy.shape[1] < 3 or energy.shape[2] < 3:
            raise ShapeError(f"DCIM needs maps of at least 3 x 3, got {energy.shape[1:]}")
        stacked = dc.concat([
            diff_conv(energy, self.sdc),
            diff_conv(energy, self.ddc),
            diff_conv(energy, self.cdc),
            avg_pool3x3(energy),
        ], axis=0)
        return dc.conv2d(stacked, self.fuse_w, self.fuse_b, stride=1, padding=0)


def dcim_forward(module, energy):
    return module.forward(energy)
