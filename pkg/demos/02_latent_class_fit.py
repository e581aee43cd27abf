"""Fit the latent-class model and summarize what the lists missed.

Runs the stratified mixture sampler on the bundled demo data, then
reports posterior intervals for incident totals, the mark burden of
the never-observed incidents, and per-stratum reporting rates.
"""

from markedmse.analytics import (
    expected_missing_mark,
    reporting_prob_by_stratum,
    summarize_totals,
)
from markedmse.data import stratify
from markedmse.fixtures import demo_incidents
from markedmse.sampler import MCMCSettings, ModelConfig, run_chain

data = stratify(demo_incidents(), "year")
print(f"observed: {data.m} incidents, {data.mark_sum:.0f} total mark, "
      f"{data.n_strata} strata")

# short chain for a quick look; raise iterations for real inference
config = ModelConfig(n_clusters=30)
settings = MCMCSettings(iterations=4_000, burn_in=1_000, thin=2,
                        seed=7, keep_params=True)
draws = run_chain(data, config, settings)
print(f"retained {draws.n_retained} posterior draws")

print("\nincident totals (posterior median and 95% interval):")
for row in summarize_totals(draws, data):
    if row.functional == "incidents":
        print(f"  {row.stratum:>5s}: {row.median:7.1f}  "
              f"[{row.lo:.0f}, {row.hi:.0f}]  observed {row.observed:.0f}")

print("\nmean mark of a missed incident (d0):")
for row in expected_missing_mark(draws):
    if row.status != "ok":
        print(f"  {row.stratum:>5s}: {row.status}")
        continue
    print(f"  {row.stratum:>5s}: {row.median:6.2f}  "
          f"[{row.lo:.2f}, {row.hi:.2f}]  observed mean {row.observed_mean:.2f}")

print("\nprobability an incident is reported by at least one list:")
for row in reporting_prob_by_stratum(draws):
    print(f"  {row.stratum:>5s}: {row.median:.3f}  [{row.lo:.3f}, {row.hi:.3f}]")
