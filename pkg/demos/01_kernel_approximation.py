"""Random Fourier features: how well does z(x)^T z(y) approximate an RBF kernel?

Run:  python demos/01_kernel_approximation.py
"""

import numpy as np

from deepmeanmaps import kernels as K
from deepmeanmaps.tensor import Rng

# A single pair of points and a growing number of random features.
g = np.random.default_rng(0)
x, y = g.standard_normal((2, 8)) / np.sqrt(8)
exact = K.rbf_exact(x, y, sigma=1.0)
print(f"exact kernel value            {exact:.5f}")
for D in (16, 256, 4096):
    basis = K.sample_basis(Rng(1), D, 8, sigma=1.0)
    approx = float(K.features(basis, x) @ K.features(basis, y))
    print(f"D = {D:5d} random features    {approx:.5f}  (error {abs(approx - exact):.4f})")

# The error shrinks roughly like 1/sqrt(D); the median over random pairs shows it.
print("\nmedian |z(x)^T z(y) - k(x, y)| over 200 random pairs")
for D in (1, 16, 64, 256, 1024, 4096):
    errs = K.approximation_errors(D, 200, seed=0)
    print(f"  D = {D:5d}: {np.median(errs):.4f}   sqrt(D) * err = {np.sqrt(D) * np.median(errs):.3f}")

# A mean map embedding is the average feature vector of a sample set. Two
# sets from different distributions end up far apart compared with random
# relabelings of the pooled samples.
a, b = g.normal(0, 1, 500), g.normal(0, 2, 500)
basis = K.sample_basis(Rng(2), 1024, 1, K.median_heuristic(np.concatenate([a, b])))
observed, null = K.permutation_test(basis, a, b, 200, Rng(3))
print(f"\nMME distance N(0,1) vs N(0,4): {observed:.4f}; "
      f"99th percentile of 200 shuffles: {np.percentile(null, 99):.4f}")
