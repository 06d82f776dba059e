"""Random-Fourier-feature mean map embeddings and mean map layers for CNNs.

Modules
-------
tensor     dense tensor helpers, seeded RNG streams, the binary tensor format
layers     numpy layers with forward / backward and finite-difference checks
kernels    random Fourier features, mean map embeddings, MMD permutation tests
meanmap    the mean map layer (1x1 conv -> cos -> global average pool)
synth      synthetic texture-mixture image datasets
network    DAG network specs, the synthetic nets and the extension topologies
trainer    momentum SGD with snapshots and validation-based selection
config     ``key = value`` run configuration
cli        the ``deepmeanmaps`` command
"""

__version__ = "0.1.0"
