"""
Pigment maps by greedy sparse unmixing
======================================

Each pixel of the diffuse image is explained by at most two reference
spectra, picked one at a time by orthogonal matching pursuit. The second
half runs the dense madder/ultramarine scene, whose nearly black layer is
taken for Prussian blue.
"""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

import oispec
from oispec.simulate import generate_scene, preset, render_stack

dictionary = oispec.pigment_dictionary()

fig, ax = plt.subplots(figsize=(6, 3.5))
for name, s in zip(dictionary.names, dictionary.spectra):
    ax.plot(dictionary.wavelengths_nm, s, label=name)
ax.set_xlabel("wavelength (nm)")
ax.set_ylabel("reflectance")
ax.legend(fontsize=7)
fig.tight_layout()
fig.savefig("pigment_spectra.png", dpi=120)


def diffuse_cube(name, seed=0):
    truth = generate_scene(preset(name), seed)
    raw = render_stack(truth)
    refl = oispec.calibrate_stack(raw.stack, raw.white, oispec.average_darks(raw.darks))
    reg, _ = oispec.register_stack(refl)
    flat = oispec.flatten(reg, oispec.stack_normals(reg))
    return truth, oispec.min_projection(flat)


for name in ("mockup4", "mockup4-dense"):
    truth, diffuse = diffuse_cube(name)
    amap = oispec.unmix_stack(diffuse, dictionary, k_sparsity=2)
    fig, axes = plt.subplots(1, len(amap.names), figsize=(15, 2.8))
    for ax, atom in zip(axes, amap.names):
        ax.imshow(amap[atom], vmin=0, vmax=1, cmap="viridis")
        ax.set_title(atom, fontsize=9)
        ax.set_axis_off()
    fig.suptitle(name)
    fig.tight_layout()
    fig.savefig(f"abundances_{name}.png", dpi=120)
    pb = amap["Prussian blue"]
    print(f"{name}: Prussian blue present in {np.mean(pb > 0):.1%} of pixels")
