"""
Training a small forecaster and scoring it
=========================================

Trains the occupancy branch on a few dozen synthetic sequences and compares
its IoU against repeating the current frame. Pass a step count on the command
line for a longer run (the acceptance campaign uses 200 sequences and 2000
steps).
"""

import sys
import time

from occforecast.metrics import baseline_copy_last, evaluate
from occforecast.model import Dims, ForecastModel, ModelConfig
from occforecast.scene import WorldConfig, generate_dataset
from occforecast.training import Trainer, TrainSettings

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 300
cfg = WorldConfig()
task = "inflated_gmo"
train = generate_dataset(cfg, 40, base_seed=1)
held_out = generate_dataset(cfg, 20, base_seed=2)

dims = Dims(cfg.feature_channels, cfg.obs_frames, cfg.future_frames, cfg.spec.extents, task)
model = ForecastModel(ModelConfig(flow_head=False), dims, seed=0, spec=cfg.spec)
trainer = Trainer(model, train, TrainSettings(steps=steps, lr=3e-4, task=task))

t0 = time.perf_counter()
for stop in range(steps // 5, steps + 1, max(1, steps // 5)):
    trainer.run(until=stop)
    recent = trainer.log[-(steps // 5):]
    print(f"step {trainer.step:5d}  loss {sum(r['total'] for r in recent) / len(recent):.4f}  "
          f"({time.perf_counter() - t0:.0f}s)")

print()
print(evaluate(baseline_copy_last(task), held_out, task).table("copy-last"))
print(evaluate(model.predict_grids, held_out, task).table("model"))
