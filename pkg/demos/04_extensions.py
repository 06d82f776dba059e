"""Three ways of attaching a mean map layer to an existing CNN.

replacing    the fully connected head is swapped for a mean map + classifier
replicating  the top feature map feeds both the old head and a mean map
forking      a copy of the top conv block feeds the mean map branch

With 64 training images and batch 8 the per-epoch loss is noisy; the
trend over a few epochs is what to look at.

Run:  python demos/04_extensions.py
"""

from deepmeanmaps import network as N
from deepmeanmaps.synth import SynthConfig, generate_dataset
from deepmeanmaps.trainer import SgdConfig, train

cfg = N.SynthNetConfig(image_size=32, D=32, filters=6, kernel=5, pool=4, pool_stride=2)
base = N.base_cnn(cfg, head_width=16)
data = generate_dataset(SynthConfig(image_size=32, patch_size=8, patches_per_image=60,
                                    train_per_class=16, val_per_class=4, test_per_class=1))
print("base:", " -> ".join(n.name for n in base.nodes), f"({base.param_count():,} params)\n")

for mode in N.ExtensionMode:
    variants = N.VariantFlags(hidden=True, width=16)
    spec = N.extend(base, mode, variants, cfg.D, cfg.classes)
    print(f"{mode.value} [{variants.label()}]")
    for node in spec.nodes:
        print(f"   {node.name:16s} {node.kind:12s} <- {', '.join(node.inputs):24s} {spec.shapes[node.name]}")
    result = train(spec, N.init_params(spec, 0), data.train, data.val,
                   SgdConfig(lr=0.003, epochs=6, batch_size=8))
    losses = [f"{r.loss:.3f}" for r in result.log.split("train")]
    print(f"   training loss per epoch: {' -> '.join(losses)}\n")
