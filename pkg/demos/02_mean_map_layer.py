"""The mean map layer treats a convolutional feature grid as a bag of vectors.

Run:  python demos/02_mean_map_layer.py
"""

import numpy as np

from deepmeanmaps import kernels as K
from deepmeanmaps.layers import grad_check
from deepmeanmaps.meanmap import MeanMapLayer, extract_feature_set
from deepmeanmaps.tensor import Rng

layer = MeanMapLayer.sample(Rng(0), D=64, m=4, sigma=1.5, learn_frequencies=True)
C = np.random.default_rng(1).standard_normal((4, 6, 5))   # m channels on a 6 x 5 grid

# Forward pass: 1x1 convolution, cosine, global average pool ...
out = layer.forward(C[None])[0]
# ... is exactly the embedding of the 30 spatial feature vectors as a set.
ref = K.embed(layer.basis, extract_feature_set(C)).values
print(f"layer vs set embedding: max |diff| = {np.abs(out - ref).max():.2e}")

# Being a set function, the output ignores where each vector sits.
perm = np.random.default_rng(2).permutation(30)
shuffled = C.reshape(4, 30)[:, perm].reshape(4, 6, 5)
print(f"after shuffling grid cells:   max |diff| = {np.abs(layer.forward(shuffled[None])[0] - out).max():.2e}")
print(f"after duplicating columns:    max |diff| = "
      f"{np.abs(layer.forward(np.repeat(C, 2, axis=2)[None])[0] - out).max():.2e}")

# It is differentiable in its input, its frequencies and its bandwidth.
report = grad_check(layer, C[None])
for name, err in report.errors.items():
    print(f"gradient check {name:16s} max rel err {err:.1e}")
