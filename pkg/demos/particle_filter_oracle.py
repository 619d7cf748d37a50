"""Track a noisy synthetic fade curve with the particle filter and read off the end of life.

The predictor here is an oracle that returns the recorded capacity of the
next cycle, so the only error left is the filter's own.

Run: python demos/particle_filter_oracle.py
"""
from karma.degradation import PfConfig
from karma.prognosis import forecast, oracle_predictor
from karma.synthetic import analytic_eol, synthetic_series

theta = (0.3, -0.02, 1.7, -0.002)
series = synthetic_series(theta, noise=0.005, seed=0)
sp = 60
true_eol = analytic_eol(theta, series.eol_capacity)

prog = forecast(series, oracle_predictor(series.capacity), PfConfig(n=500, seed=0), sp=sp)
print(f"start point {sp}, end-of-life threshold {series.eol_capacity:.2f} Ah")
print(f"true EoL cycle {true_eol}, predicted {prog.eol_cycle}")
print(f"RUL {prog.rul} cycles, 95% interval {prog.rul_ci}, resampled {prog.resample_count} times")
for k, m, lo, hi in list(zip(prog.cycles, prog.mean_capacity, prog.ci_low, prog.ci_high))[::10]:
    print(f"  cycle {k:3d}: {m:.4f} Ah  [{lo:.4f}, {hi:.4f}]")
