"""Random feature subsets along a chain on a synthetic table: does the last agent reach OLS?"""

from dagagg.experiments import ExperimentConfig, run_experiment
from dagagg.suites import synthetic_regression
from dagagg.oracles import TabularDataset

base = synthetic_regression(2000, 8, seed=1, with_constant=False)
data = TabularDataset(base.X, base.y, [f"f{i}" for i in range(8)], "y", standardize=False)

for p in (0.1, 0.3, 0.5):
    cfg = ExperimentConfig(topology={"kind": "chain", "n": 30}, dataset={"manifest": "<in-memory>"},
                           assignment={"kind": "random", "p": p}, trials=20, seed=0)
    res = run_experiment(cfg, data)
    final = res.final_position()
    print(f"p={p:.1f}  final mean test MSE {final.mean_test_mse:.4f} "
          f"(se {final.stderr_test_mse:.4f})  baseline {res.baseline_test:.4f}")
