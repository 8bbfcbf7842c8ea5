# Stressed dispatch on the bundled 24-bus system
# -----------------------------------------------------------------------------
# Loads the packaged reliability-test-system case plus its charging fleet,
# applies the shipped scenario (ratings at 65 %, chargers drawing at their
# coincidence factor), solves the least-cost DC dispatch and prints where the
# network already runs close to its limits before any attack.

from gridseg import datasets
from gridseg.grid import (build_network_matrices, dispatch_flows,
                          economic_dispatch)
from gridseg.io import apply_scenario, branch_loading_table, scenario_fixed_load

case = datasets.rts24_case()
cfg = datasets.rts24_config()
fleet = datasets.rts24_fleet(cfg.discretization, grid=case)
sc = cfg.scenarios[0]

print(f"case: {len(case.buses)} buses, {len(case.branches)} branches, "
      f"{len(case.generators)} generators")
print(f"fleet: {len(fleet.operators)} operators, "
      f"{fleet.total_capacity():.0f} MW of charging capacity")
print(f"scenario {sc.name!r}: rating_scale={sc.rating_scale}, "
      f"coincidence={sc.adversary.coincidence}")

# ---------------------------- dispatch ----------------------------
grid = apply_scenario(case, sc)
mats = build_network_matrices(grid)
fixed = scenario_fixed_load(grid, fleet, sc)  # base load + charging baseline

dispatch = economic_dispatch(grid, fixed)
flows = dispatch_flows(grid, mats, dispatch, fixed)

cost = sum(dispatch[g.id] * g.marginal_cost for g in grid.generators)
print(f"\ntotal demand {sum(fixed.values()):.1f} MW, "
      f"dispatch cost {cost:,.0f} per hour")

# ---------------------------- tight branches ----------------------------
rows = branch_loading_table(grid, flows)
rows.sort(key=lambda r: -r["loading_pct"])
print("\nmost loaded branches (of the scaled PATL):")
for r in rows[:8]:
    print(f"  {r['branch']:<10} {r['flow_mw']:>8.1f} MW  "
          f"{r['loading_pct']:6.1f} %  threshold {r['overload_threshold_mw']:.1f} MW")

full = [r for r in rows if r["loading_pct"] >= 99.99]
print(f"\n{len(full)} branches sit exactly at their admissible loading; "
      "those are the levers an attacker will push on.")
