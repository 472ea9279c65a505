"""
Where the compute goes
======================

Compares the four observer styles at the toy grid and breaks the full model
down by block. FLOPs count a multiply-accumulate as two operations and every
normalization, activation, exponential, square root and division as one.
"""

from occforecast.complexity import compare_variants, count_flops, count_params, variants_table
from occforecast.model import Dims, ForecastModel, ModelConfig
from occforecast.scene import WorldConfig

cfg = WorldConfig()
dims = Dims(cfg.feature_channels, cfg.obs_frames, cfg.future_frames, cfg.spec.extents)

reports = compare_variants(ModelConfig(), dims)
print(variants_table(reports))
print()
ratio = reports["e4a"].total_flops / reports["dense"].total_flops
print(f"pyramid aggregation costs {100 * ratio:.0f}% of the full-resolution version")
print()
print(reports["full"].table())

# Doubling the horizontal extent roughly quadruples the cost of everything that
# runs at full resolution while the parameter count stays fixed.
big = Dims(dims.in_channels, dims.obs_frames, dims.future_frames, (64, 64, 8))
model = ForecastModel(ModelConfig(), big)
shape = (big.obs_frames, big.in_channels + 6) + big.spatial
print()
print(f"64x64x8: {count_flops(model, shape).total_flops / 1e6:.1f} MFLOPs, "
      f"{count_params(model).total_params} parameters")
