"""Tour of the two procedural environments.

Spawns one gate corridor and one cluttered room from fixed seeds, prints
their layout, and draws a coarse ASCII occupancy map of each so you can
see what the drone's scanline observes before any learning happens.
"""

import numpy as np

from cheatlab.worldsim import (
    DEFAULT_SIM,
    point_in_collision,
    render_observation,
    spawn_fake_world,
    spawn_real_world,
    start_state,
)


def ascii_map(world, rows=21, cols=72):
    x0, y0, x1, y1 = world.bounds
    grid = []
    for r in range(rows):
        y = y1 - (r + 0.5) * (y1 - y0) / rows
        line = []
        for c in range(cols):
            x = x0 + (c + 0.5) * (x1 - x0) / cols
            line.append("#" if point_in_collision(world, x, y, 0.05) else ".")
        grid.append("".join(line))
    sx, sy = world.start[0], world.start[1]
    r = int((y1 - sy) / (y1 - y0) * rows)
    c = int((sx - x0) / (x1 - x0) * cols)
    if 0 <= r < rows and 0 <= c < cols:
        grid[r] = grid[r][:c] + "S" + grid[r][c + 1:]
    return "\n".join(grid)


cfg = DEFAULT_SIM

fake = spawn_fake_world(7, cfg=cfg)
print("fake corridor (seed 7):", len(fake.gates), "gates, bounds", fake.bounds)
for i, g in enumerate(fake.gates):
    print(f"  gate {i}: center=({g.center[0]:.1f}, {g.center[1]:+.2f}) "
          f"yaw={np.degrees(g.yaw):+.1f} deg half_width={g.half_width}")
print(ascii_map(fake))

real = spawn_real_world(7, clutter_density=0.4, cfg=cfg)
print("\nreal room (seed 7, density 0.4):", len(real.obstacles), "obstacles,",
      "start", tuple(round(v, 2) for v in real.start))
print(ascii_map(real))

# one raw observation from each start pose
for world, label in ((fake, "fake"), (real, "real")):
    obs = render_observation(world, start_state(world), cfg)
    frac = {int(k): float(v) for k, v in
            zip(*np.unique(obs.classes, return_counts=True))}
    print(f"\n{label} scan: width={obs.width}",
          "class counts:", frac,
          "depth range: [%.2f, %.2f]" % (obs.depth.min(), obs.depth.max()))
