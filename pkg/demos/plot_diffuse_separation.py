"""
Separating diffuse colour from scattered light
==============================================

A simulated four-layer cross-section is imaged from ten azimuths. Light that
bounces between layers or scatters below the surface only ever adds to a
pixel, so the smallest value over the ten views is the best estimate of the
direct diffuse colour, and max minus min shows where the extra light went.
"""
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

import oispec
from oispec.simulate import generate_scene, preset, render_stack

out = sys.argv[1] if len(sys.argv) > 1 else "diffuse_separation.png"

# render a raw 16-bit cube with its white and dark references
spec = preset("mockup4", size=96)
truth = generate_scene(spec, seed=0)
raw = render_stack(truth)

# counts to reflectance, then bring every view into the frame of the first
refl = oispec.calibrate_stack(raw.stack, raw.white, oispec.average_darks(raw.darks))
reg, transforms = oispec.register_stack(refl)
print("recovered translations (px):", [tuple(round(float(v), 2) for v in t.translation_xy) for t in transforms[1:4]], "...")

# shading comes out before projecting, otherwise min would pick the darkest slope
normals = oispec.stack_normals(reg)
flat = oispec.flatten(reg, normals)

views = {
    "single view": oispec.rgb_image(flat, 0),
    "average": oispec.rgb_image(oispec.avg_projection(flat)),
    "minimum (diffuse)": oispec.rgb_image(oispec.min_projection(flat)),
}
diff = oispec.difference_image(flat)
scatter = oispec.luminance(diff)[0][0]

fig, axes = plt.subplots(1, 4, figsize=(13, 3.6))
for ax, (title, img) in zip(axes, views.items()):
    ax.imshow(img)
    ax.set_title(title)
axes[3].imshow(scatter, cmap="magma")
axes[3].set_title("max - min (scatter)")
for ax in axes:
    ax.set_axis_off()
fig.tight_layout()
fig.savefig(out, dpi=120)
print("wrote", out)
