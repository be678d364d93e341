"""
Contamination versus alarm volume
=================================

Raising the assumed anomalous fraction only ever adds alarms. Sweep it on
a log-deletion scenario and watch detection and noise grow together.
"""

from cliprov.pipeline import RunConfig, run_pipeline
from cliprov.rules import load_starter_rules
from cliprov.synth import generate_scenario, score

rules = load_starter_rules()
sc = generate_scenario("LogDeletion", seed=3, scale=200)

for c in (0.1, 0.2, 0.3, 0.4, 0.5):
    res = run_pipeline(sc.events, RunConfig(contamination=c), rules)
    flagged = res.alarms + res.restored
    ttp = score(res.alarms, sc, "ttp")
    node = score(flagged, sc, "node")
    print(f"C={c:.1f}  anomalous={len(flagged):3d}  snapshot ttp recall={ttp.recall:.2f}  "
          f"node precision (all flagged)={node.precision:.2f}")
