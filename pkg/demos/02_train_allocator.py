"""Train the regression network on solver labels and compare loss functions.

The network maps flattened gains to an allocation through a softmax
scaled by the power budget, so every output is feasible. This demo uses
a deliberately small dataset and network so it finishes in about a
minute; the task loss (squared min-rate error) still separates itself
from the elementwise losses.

Run: python demos/02_train_allocator.py
"""

import numpy as np

from advpower.harness import ModelHandle, evaluate_cell
from advpower.attacks import UncertaintyModel
from advpower.network import LossSpec, NetworkSpec, TrainConfig, train
from advpower.solver import generate_dataset
from advpower.system import SystemConfig

config = SystemConfig(num_subcarriers=4, num_ues=3, total_power=10.0)
print("labeling 1200 instances with the offline solver...")
dataset = generate_dataset(config, count=1200, rng_seed=5)
print(f"mean oracle min rate: {dataset.min_rates.mean():.4f} bits/use")

spec = NetworkSpec(4, 3, hidden_sizes=(64, 64), total_power=10.0)
tc = TrainConfig(learning_rate=3e-3, epochs=150, batch_size=64,
                 rng_seed=1, train_fraction=0.5)
test = dataset.subset(np.arange(600, 1100))

print(f"\ntraining one model per loss ({tc.epochs} epochs each)...")
for kind in ("mae", "mape", "msle", "custom"):
    params, log = train(spec, LossSpec(kind), tc, dataset)
    handle = ModelHandle(params, spec)
    normalized, _, _ = evaluate_cell(config, handle, handle, test, None,
                                     UncertaintyModel())
    print(f"  {kind:>6}: final loss {log[-1][1]:.5f}, "
          f"normalized min rate {normalized.mean():.4f} on {normalized.size} held-out")

print("\nthe custom loss optimizes the deployment metric directly, which is")
print("why it ends highest even though its raw loss value is not comparable")
