"""Fly a short lemniscate, then estimate the state with the three model variants.

Run with ``python3 demos/quickstart.py``. Takes about half a minute.
"""

from gpmhe import ExperimentSpec, run_comparison

# A shortened lemniscate (2 s speed-up, 1 s at speed, 2 s slow-down) at the
# medium noise level. The GP correction is trained first on a separate
# flight with an offset seed, then all three estimators replay the same log.
spec = ExperimentSpec(trajectory="lemniscate", noise_level=2, seeds=(0,), ramp=2.0,
                      hold=1.0, inducing=20)
report = run_comparison(spec)
print(report.table())

# The run keeps the flight and each estimator trace for further analysis.
run = report.runs[0]
for kind, trace in run.traces.items():
    print(f"{kind.label}: {len(trace.t)} estimates, {trace.degraded} degraded solves")
