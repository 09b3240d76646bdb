"""Craft all three attacks on one instance and inspect the damage.

The adversary only touches the gains the BS sees. The scaling benchmark
shrinks them uniformly; the analytical attack spends its budget on the
subcarriers where the rate gradient is largest (never increasing a
gain, so the BS merely misallocates); the fast gradient attack follows
the surrogate network's loss gradient and ends up over-reporting gains,
which drives UEs into outage.

Run: python demos/03_attacks.py
"""

import numpy as np

from advpower.attacks import AttackTarget
from advpower.harness import AttackSpec, ModelHandle, evaluate_instance
from advpower.network import LossSpec, NetworkSpec, TrainConfig, train
from advpower.solver import generate_dataset
from advpower.system import SystemConfig

config = SystemConfig(num_subcarriers=4, num_ues=3, total_power=10.0)
print("building a small dataset and two independently seeded models...")
dataset = generate_dataset(config, count=800, rng_seed=9)
spec = NetworkSpec(4, 3, hidden_sizes=(64, 64), total_power=10.0)
tc = TrainConfig(learning_rate=3e-3, epochs=150, batch_size=64, rng_seed=1,
                 train_fraction=0.5)
bs_params, _ = train(spec, LossSpec("custom"), tc, dataset)
surrogate_params, _ = train(spec, LossSpec("custom"),
                            TrainConfig(learning_rate=3e-3, epochs=150, batch_size=64,
                                        rng_seed=2, train_fraction=0.5), dataset)
bs = ModelHandle(bs_params, spec, provenance="bs")
surrogate = ModelHandle(surrogate_params, spec)

instance = dataset[700]
print(f"\ninstance oracle min rate: {instance.oracle_min_rate:.4f}")
baseline = evaluate_instance(config, bs, surrogate, instance, None)
print(f"no attack: achieved min {baseline.achieved_min:.4f} "
      f"(normalized {baseline.normalized:.3f})")

rho = 0.10
print(f"\nattacks at budget ratio rho={rho} (all-UE target):")
for kind in ("scaling", "analytical", "fgm"):
    attack = AttackSpec(kind, AttackTarget.all_ues(), rho)
    out = evaluate_instance(config, bs, surrogate, instance, attack)
    direction = "decrease" if out.delta.max() <= 0 else "increase"
    print(f"\n  {kind}: |delta|_1 = {np.abs(out.delta).sum():.4f}, gains {direction}")
    print(f"  outage UEs: {[int(j) + 1 for j in np.where(out.outage)[0]] or 'none'}")
    print(f"  achieved min {out.achieved_min:.4f} (normalized {out.normalized:.3f})")

print("\nthe gradient attacks beat the benchmark; the fgm attack's gain")
print("over-reporting makes transmitted rates exceed what the channel")
print("supports, zeroing whole UEs at tiny budgets")
