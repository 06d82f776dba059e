"""Mean map head versus fully connected heads on synthetic texture mixtures.

Each class is a distribution over blends of textures; an image is a bag of
patches drawn from it. Only the distribution carries the label, so a head
that embeds the distribution of local features should need fewer examples.

Run:  python demos/03_synthetic_experiment.py      (about two minutes)
"""

from dataclasses import replace

from deepmeanmaps import network as N
from deepmeanmaps.synth import SynthConfig, generate_dataset
from deepmeanmaps.tensor import derive_seed
from deepmeanmaps.trainer import SgdConfig, evaluate, train

seed = 0
data = generate_dataset(SynthConfig.desk(master_seed=seed, val_per_class=10))
print(f"train {len(data.train)}  val {len(data.val)}  test {len(data.test)} images "
      f"of size {data.train.images.shape[1:]}")

# the same protocol for all three heads (configs/desk.ini)
sgd = SgdConfig(batch_size=8, epochs=40, snapshot_every=4)
net_cfg = N.SynthNetConfig.desk()
for kind, what in (("mml", "conv -> mean map -> softmax"),
                   ("hid", "conv -> two hidden layers -> softmax"),
                   ("lin", "conv -> softmax")):
    spec = N.build_synth(kind, net_cfg)
    params = N.init_params(spec, derive_seed(seed, "init", kind))
    result = train(spec, params, data.train, data.val, replace(sgd, seed=derive_seed(seed, "sgd", kind)))
    top1, top3 = evaluate(spec, result.best_params, data.test)
    print(f"{kind}  ({what}, {spec.param_count():,} params): test top-1 {top1:.2f}  top-3 {top3:.2f}")
print(f"chance: {1 / net_cfg.classes:.2f}")
