"""Flag corrupted normal priors by multi-view consistency.

One view of the table-lamp room gets 30% of its normals rotated by 40
degrees; its two nearest views stay clean. Pixels whose mean angular
disagreement exceeds 20 degrees are flagged.

    python demos/uncertainty.py
"""

import numpy as np

from fdneus import seeded_rng, table_lamp_room
from fdneus.consistency import nearest_sources, uncertainty_map
from fdneus.scene import NoiseSpec, camera_orbit, render_bundle

scene = table_lamp_room()
views = camera_orbit(scene, 16, seed=0, width=64, height=48)
ref = render_bundle(scene, views[0], NoiseSpec(0.3, np.deg2rad(40.0), seed=1), seeded_rng(1))
sources = [render_bundle(scene, views[i], None, seeded_rng(0, i)) for i in nearest_sources(views, 0, 2)]
u, omega = uncertainty_map(ref, sources, tau=np.deg2rad(20.0))

scored = ref.valid & np.isfinite(u.data[..., 0])
flagged = scored & (omega == 0)
bad = scored & ref.corrupted
print(f"co-visible pixels: {scored.sum()} of {ref.valid.sum()}")
print(f"corrupted: {bad.sum()}  flagged: {flagged.sum()}  both: {(flagged & bad).sum()}")
print("flag map (# flagged, . kept, blank not co-visible):")
for row in range(0, scored.shape[0], 2):
    print("".join("#" if flagged[row, c] else "." if scored[row, c] else " " for c in range(scored.shape[1])))
