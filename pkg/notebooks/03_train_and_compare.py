"""
Imitation on the double integrator, against BC and the on-policy ablation
=========================================================================

Uses the benchmark preset, stopped at the 90% normalised threshold. A single
seed takes a few minutes on one core.
"""

# %%
from advmimic import benchmark, onpolicy_ablation

demos = benchmark.demos_for(5)
cfg = benchmark.preset_config(run_seed=0)
res = benchmark.run_until_threshold(cfg, demos)
print("threshold", round(res["threshold"], 3), "reached at", res["reach"],
      "interactions in", round(res["wall_seconds"]), "s")
for rec in res["metrics"].evals:
    print(rec["interactions"], round(rec["payload"]["mean"], 3))

# %%
# The on-policy learner, capped at three times the off-policy budget.
cap = 3 * (res["reach"] or 100_000)
onp = benchmark.run_until_threshold(cfg.replace(eval_every=1, max_interactions=cap), demos,
                                    fn=onpolicy_ablation)
print("on-policy reach:", onp["reach"], "(cap", cap, ")")

# %%
# Behavioural cloning from a single demonstration.
bc, _ = benchmark.bc_return(benchmark.demos_for(1), cfg)
print("BC with one demo:", round(bc, 3))
