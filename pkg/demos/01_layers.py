"""Layer building blocks: shapes, a finite-difference check, and pooling indices."""

import numpy as np

from suction_unet import nn

rng = np.random.default_rng(0)

# a batch of two 8x8 images with 3 channels, NHWC
x = rng.standard_normal((2, 8, 8, 3))

# 5x5 "same" convolution to 4 channels keeps the spatial size
conv = nn.make_conv(5, 5, 3, 4, seed=1, dtype=np.float64)
y = nn.conv2d_forward(x, conv)
print("conv:", x.shape, "->", y.shape)

# pooling halves it and remembers where each max came from
p, idx = nn.maxpool2_forward(y)
print("pool:", y.shape, "->", p.shape)

# the 2x2 stride-2 deconvolution doubles it again
deconv = nn.ConvLayer(nn.init_params((2, 2, 4, 6), 2, np.float64), np.zeros(6), 2, "valid")
u = nn.deconv2_forward(p, deconv)
print("deconv:", p.shape, "->", u.shape)

# backward pass of the convolution against a random upstream gradient
r = rng.standard_normal(y.shape)
gx, gw, gb = nn.conv2d_backward(x, conv, r)

# compare one weight gradient with central differences
i = (2, 3, 1, 0)
h = 1e-5
w0 = conv.weights[i]
conv.weights[i] = w0 + h
f_plus = np.sum(nn.conv2d_forward(x, conv) * r)
conv.weights[i] = w0 - h
f_minus = np.sum(nn.conv2d_forward(x, conv) * r)
conv.weights[i] = w0
print("dL/dw analytic %.8f  numeric %.8f" % (gw[i], (f_plus - f_minus) / (2 * h)))

# batch norm in training mode standardizes each channel
bn = nn.BatchNormState.create(4, np.float64)
z, _ = nn.batchnorm_forward(y * 3 + 1, bn)
print("bn mean %.2e, std %.4f" % (z.mean(), z.std()))
print("running mean after one step:", np.round(bn.running_mean, 3))
