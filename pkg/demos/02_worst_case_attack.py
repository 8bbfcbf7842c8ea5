# Worst-case coordinated charging attack on the bundled 24-bus system
# -----------------------------------------------------------------------------
# An attacker who compromises the control systems of a few charging-station
# operators can raise idle chargers to full power at some buses and shed the
# running load at others.  This script solves the exact MILP for the most
# damaging such attack, prints its anatomy, replays it through an independent
# linear power flow, and sweeps the compromise budget.

import dataclasses

from gridseg import datasets
from gridseg.adversary import replay_attack, solve_worst_case_attack
from gridseg.fleet import minimal_segmentation
from gridseg.grid import (build_network_matrices, economic_dispatch,
                          fcr_gains_from_dispatch)
from gridseg.io import apply_scenario, scenario_fixed_load

case = datasets.rts24_case()
cfg = datasets.rts24_config()
fleet = datasets.rts24_fleet(cfg.discretization, grid=case)
sc = cfg.scenarios[0]

grid = apply_scenario(case, sc)
mats = build_network_matrices(grid)
dispatch = economic_dispatch(grid, scenario_fixed_load(grid, fleet, sc))
fcr = fcr_gains_from_dispatch(dispatch)

# one segment per operator: nothing is segmented yet, hacking an operator
# hands over every charger it runs
seg = minimal_segmentation(fleet)
params = sc.adversary
print(f"budget: {params.hack_budget} operators, coincidence "
      f"{params.coincidence}, net alteration cap {params.laa_max_mw} MW")

# ---------------------------- the worst case ----------------------------
out = solve_worst_case_attack(grid, mats, fleet, seg, dispatch, fcr, params,
                              gap=cfg.gap)
print(f"\nworst case overloads {out.overload_count} branches: "
      f"{', '.join(out.overloaded_branches())}")
print(f"hacked: {[o for o, _ in out.attack.hacked_segments()]}")
print(f"net alteration {out.attack.net_mw():+.2f} MW, "
      f"frequency deviation {out.freq_dev:+.3e}")
for (o, n), v in sorted(out.attack.l_pos.items()):
    if v:
        print(f"  raise {v:6.2f} MW  operator {o} at bus {n}")
for (o, n), v in sorted(out.attack.l_neg.items()):
    if v:
        print(f"  shed  {v:6.2f} MW  operator {o} at bus {n}")

# ---------------------------- independent replay ----------------------------
rep = replay_attack(grid, mats, fleet, dispatch, fcr, params, out.attack)
gap = max(abs(rep.flows_mw[l] - out.flows_mw[l]) for l in rep.flows_mw)
print(f"\nreplay: {rep.overload_count} overloads, "
      f"max flow disagreement {gap:.2e} MW")
assert rep.overload_count == out.overload_count

# ---------------------------- budget sweep ----------------------------
print("\noverloads by number of compromised operators:")
for budget in range(0, 4):
    p = dataclasses.replace(params, hack_budget=budget)
    o = solve_worst_case_attack(grid, mats, fleet, seg, dispatch, fcr, p,
                                gap=cfg.gap)
    print(f"  budget {budget}: {o.overload_count}")
