"""
Surface normals from ten oblique lights
=======================================

With the light at a fixed 50 degree polar angle and ten azimuths, each pixel
sees ten brightness values. A Lambertian surface gives ``I = k N . L``, so a
least-squares solve per pixel returns the albedo ``k`` and the normal ``N``.
"""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from oispec import IlluminationGeometry, ImagePlane, solve_normals

geometry = IlluminationGeometry.ring(50.0, 10)
L = geometry.lighting_matrix()
print("light directions (x, y, z):")
print(np.round(L[:3], 3), "...")

# a gently rolling surface: height is a sum of two sinusoids
h = w = 128
yy, xx = np.mgrid[0:h, 0:w].astype(float)
hx = 0.3 * np.cos(xx / 9.0)
hy = 0.2 * np.cos(yy / 13.0 + 1.0)
N = np.stack([-hx, -hy, np.ones((h, w))], axis=-1)
N /= np.linalg.norm(N, axis=-1, keepdims=True)
albedo = 0.4 + 0.4 * (xx > w / 2)

# one image per light, with a little sensor noise
rng = np.random.default_rng(0)
images = [ImagePlane(albedo * np.clip(N @ l, 0, None) + rng.normal(0, 0.003, (h, w))) for l in L]

nm = solve_normals(images, L)
err = np.degrees(np.arccos(np.clip((nm.normals * N).sum(-1), -1, 1)))
print(f"mean angular error {err[nm.valid].mean():.2f} deg over {nm.valid.mean():.0%} of pixels")

fig, axes = plt.subplots(1, 3, figsize=(10, 3.6))
axes[0].imshow(images[0].values, cmap="gray")
axes[0].set_title("light at 0 deg")
axes[1].imshow(nm.to_rgb())
axes[1].set_title("recovered normals")
axes[2].imshow(nm.albedo, cmap="gray")
axes[2].set_title("recovered albedo")
for ax in axes:
    ax.set_axis_off()
fig.tight_layout()
fig.savefig("photometric_stereo.png", dpi=120)
