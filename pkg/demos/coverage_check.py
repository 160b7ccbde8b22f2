r"""
Do the intervals cover?
=======================

Carve many small ensembles out of one long run and count how often the
chi-squared interval contains the exact functional variance.
"""

from fluxmc import experiments as ex

for alpha in (0.05, 0.5):
    cfg = ex.load_config("coverage", None, [f"uq.alpha={alpha}", "coverage.replicates=4000"])
    res = ex.coverage(cfg)
    v = res["variance_ci"]
    e = res["endpoint_brackets"]
    print(f"alpha={alpha}: variance CI {v['coverage']:.3f} +/- {v['stderr']:.3f}, "
          f"endpoint brackets {e['coverage']:.3f}, pivot KS p={res['pivot_ks']['pvalue']:.2f}")
