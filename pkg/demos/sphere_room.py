"""Train the full pipeline on the sphere room and score the extracted mesh.

    python demos/sphere_room.py [configs/sphere_room.ini]
"""

import sys

from fdneus import load_config
from fdneus.meshing import write_ply
from fdneus.study import train_and_evaluate

cfg = load_config(sys.argv[1] if len(sys.argv) > 1 else "configs/sphere_room.ini")


def progress(row):
    print(f"it {row['iteration'] + 1:5d}  loss {row['loss']:.4f}  s {row['s']:.1f}", flush=True)


res = train_and_evaluate(cfg.replace(log_every=100), progress=progress)
print(res.report.table())
write_ply("sphere_room.ply", res.mesh)
print(f"{res.seconds:.0f} s; mesh written to sphere_room.ply")
