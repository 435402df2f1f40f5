"""Empirical size of the max tests and Wald benchmarks under the null.

A scaled-down version of the benchmark null cell (n=250, ten test
covariates, within- and across-block dependent regressors). The bootstrap
tests should sit near their nominal levels while the asymptotic Wald tests
drift above them as the restriction count grows.

Run: python demos/size_study.py
"""

from maxzero import DgpSpec, ExperimentConfig, run_experiment

for k in (10, 35):
    cfg = ExperimentConfig(
        dgp=DgpSpec(n=250, k_delta=0, k_theta=k, covariate_case="cross_block_dependent"),
        methods=("max", "max_t", "wald_asymptotic", "wald_bootstrap"),
        levels=(0.01, 0.05, 0.10),
        replications=300,
        k_rule="fixed",
        k_fixed=k,
        bootstrap_m=200,
        seed=2024,
        workers=0,  # all cores
    )
    report = run_experiment(cfg)
    print()
    for line in report.summary_lines():
        print(line)
