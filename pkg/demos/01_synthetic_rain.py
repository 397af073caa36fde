"""Walkthrough of the synthetic rain pipeline.

Renders a few streak layers at different angles, composes them over a
smooth random background with each of the three rain models, and writes
the results as PNGs so you can eyeball them.

Run from the repository root:

    python3 demos/01_synthetic_rain.py
"""

from pathlib import Path

import numpy as np

from derain import (RainLayerSpec, RainSceneSpec, compose_eq1, compose_eq2,
                    compose_eq3, gen_streak_layer, random_background,
                    encode_image_png)

OUT = Path("demo_output/rain")
OUT.mkdir(parents=True, exist_ok=True)

size = 128
bg = random_background(seed=4, height=size, width=size)
encode_image_png(bg, OUT / "background.png")
print(f"background: {size}x{size}, range [{bg.min():.2f}, {bg.max():.2f}]")

# one streak layer per angle, same density
for angle in (-30, 0, 30):
    layer = gen_streak_layer(
        RainLayerSpec(angle=angle, length=11, density=2.0, seed=8),
        size, size)
    encode_image_png(np.repeat(layer[..., None], 3, axis=2),
                     OUT / f"layer_{angle:+03d}.png")
    print(f"layer at {angle:+}deg: {np.count_nonzero(layer > 0.1)} lit px")

# simple additive model: one layer, moderate brightness
streaks = 0.3 * np.repeat(gen_streak_layer(
    RainLayerSpec(angle=10, seed=8), size, size)[..., None], 3, axis=2)
rainy1 = compose_eq1(bg, streaks)
encode_image_png(rainy1, OUT / "rainy_additive.png")

# multi-layer additive model: three angles stacked
maps = [0.18 * np.repeat(gen_streak_layer(
    RainLayerSpec(angle=a, seed=20 + a, density=1.5),
    size, size)[..., None], 3, axis=2) for a in (-20, 0, 20)]
rainy2 = compose_eq2(bg, maps)
encode_image_png(rainy2, OUT / "rainy_multilayer.png")

# generalized model: atmospheric light plus brightness-weighted layers,
# coefficients constrained to sum to at most one
scene = RainSceneSpec(
    background=bg, atmos=0.95, alpha0=0.1,
    layers=[RainLayerSpec(angle=-15, brightness=0.15, seed=31),
            RainLayerSpec(angle=15, brightness=0.2, seed=32)])
pair = compose_eq3(scene)
encode_image_png(pair.rainy, OUT / "rainy_generalized.png")
print(f"generalized model: residual range [{pair.residual.min():.3f}, "
      f"{pair.residual.max():.3f}]")

# the identity the whole system rests on: subtracting the residual from
# the rainy image recovers the clean background exactly
err = np.abs(pair.rainy - pair.residual - pair.clean).max()
print(f"reconstruction error |rainy - residual - clean| = {err:.2e}")
print(f"images written to {OUT}/")
