"""Classic estimators of the missing cell, for comparison.

Applies the frequency-of-frequencies lower bound, fixed-order mark and
count regressions, and information-criterion selection over the full
hierarchical log-linear family to the pooled demo data.
"""

from markedmse.baselines import (
    capture_counts,
    chao_estimate,
    enumerate_hierarchical_models,
    fit_loglinear_counts,
    fit_mark_regression,
    select_by_ic,
)
from markedmse.fixtures import demo_incidents

data = demo_incidents()
counts = capture_counts(data)
print(f"observed: {data.m} incidents on {data.n_lists} lists")
print(f"singletons f1={counts.f1}, doubletons f2={counts.f2}")

chao = chao_estimate(data)
print(f"\nfrequency-of-frequencies bound: n0 >= {chao.n0:.1f}, "
      f"missing mark total >= {chao.total:.1f}")

# fixed-order regressions: main effects only, then all pairwise terms
for terms in ("main", "pairwise"):
    mark = fit_mark_regression(data, terms)
    counts = fit_loglinear_counts(data, terms)
    print(f"\n{terms} effects:")
    print(f"  predicted mean mark at the all-zero pattern: {mark.d0:.2f}")
    print(f"  log-linear n0 estimate: {counts.n0:.1f}")

# every hierarchical model over four lists (interactions only enter
# alongside their component main effects)
family = enumerate_hierarchical_models(4)
print(f"\nhierarchical family size: {len(family)} models")

def interactions(fit):
    extra = [lab for lab in fit.labels if ":" in lab]
    return ", ".join(extra) if extra else "none"


for criterion in ("aic", "bic"):
    sel = select_by_ic(data, criterion)
    est = sel.estimate
    print(f"\n{criterion.upper()} selection over {sel.n_candidates} candidates:")
    print(f"  winning count model interactions: {interactions(sel.counts)}")
    print(f"  winning mark model interactions:  {interactions(sel.mark)}")
    print(f"  n0 = {est.n0:.1f}, d0 = {est.d0:.2f}, "
          f"missing mark total = {est.total:.1f}")
