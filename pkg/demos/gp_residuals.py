"""What the correction GPs learn from accelerometer readings.

The thrust-only model predicts zero specific force along body x and y, so
there the residual equals the accelerometer reading itself (body drag plus
noise) and the GP learns an identity map. Along z the residual is the gap
between measured and modelled thrust acceleration.
"""

import numpy as np

from gpmhe.flightlog import build_training_sets
from gpmhe.gp import fit_triplet
from gpmhe.sim import FlightConfig, SensorConfig, Trajectory, run_flight

flight = run_flight(FlightConfig(Trajectory("lemniscate", ramp=3.0, hold=3.0),
                                 SensorConfig.level(1, seed=5)))
# Ground-truth attitude keeps this demo fast; the experiments use a
# kinematic-MHE attitude estimate instead.
sets = build_training_sets(flight, attitude="truth", stride=2)
gpt = fit_triplet(sets, m=30)

for axis, ts, model in zip("xyz", sets, gpt.models):
    hp = model.hyperparams
    print(f"{axis}: {len(ts)} samples, residual std {np.std(ts.c):.3f} m/s^2, "
          f"length scale {hp.length_scale:.2f}, noise std {np.sqrt(hp.noise_var):.4f}")

grid = np.array([[-3.0, 0.0, 9.0], [0.0, 0.0, 9.81], [3.0, 0.0, 11.0]])
mean, var = gpt.predict(grid)
for a, m, v in zip(grid, mean, var):
    print(f"a_meas={a} -> correction {np.round(m, 3)} (sd {np.round(np.sqrt(v), 3)})")
