"""Full leave-one-out run on a synthetic four-cell fleet.

Three cells train the dual-stream network; the fourth is observed up to
cycle 60 and then forecast to end of life.  Takes well under a minute.

Run: python demos/end_to_end_fleet.py
"""
import time

from karma.dataset import split_fleet
from karma.metrics import evaluate_horizon, evaluate_one_cycle
from karma.pipeline import PipelineConfig, fit_model, run_prognosis
from karma.prognosis import first_crossing
from karma.synthetic import synthetic_fleet

start = time.perf_counter()
split = split_fleet(synthetic_fleet(noise=0.005), "S4", 60)

fit = fit_model(split, PipelineConfig(auto_tune=True))
print(f"tuned k_max={fit.vmd.k_max} alpha={fit.vmd.alpha:.0f}, {fit.n_low} low-band channel(s)")
print(f"{fit.model.n_params} parameters, {fit.n_samples} training windows, "
      f"best epoch {fit.history.best_epoch}")

row = evaluate_one_cycle(fit.model, split)
print(f"1-cycle: MAE {row.mae:.4f} Ah, RMSE {row.rmse:.4f} Ah, MAPE {row.mape_percent:.3f}%")
row5 = evaluate_horizon(fit.model, split, 5)
print(f"5-cycle rollout: MAPE {row5.mape_percent:.3f}%")

prog = run_prognosis(split, fit.model)
actual = first_crossing(split.test.capacity, split.test.eol_capacity) - split.sp
print(f"RUL predicted {prog.rul} (interval {prog.rul_ci}), actual {actual}")
print(f"done in {time.perf_counter() - start:.1f} s")
