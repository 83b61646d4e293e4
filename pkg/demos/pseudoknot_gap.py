"""
Why not a nested decoder?
=========================

Dynamic programming decoders only see nested structures.  On a landscape
whose best structure crosses, they lose half the objective; the exact
branch-and-bound oracle and the primal-dual solver both find the knot.
"""

import math

from unrollfold import build_constraint_mask, is_pseudoknotted, pp_solve_convergent
from unrollfold.oracle import crossing_landscape, exact_decode, nested_decode, solver_trials
from unrollfold.viz import arc_diagram_svg

s = math.log(9.0)
seq, U = crossing_landscape(s)
M = build_constraint_mask(seq)
print(seq)

for name, res in [("exact ", exact_decode(U, s, M)), ("nested", nested_decode(U, s, M))]:
    print(name, sorted(res.pairs), "objective", res.objective, "knotted", is_pseudoknotted(res.pairs))

sol = pp_solve_convergent(U, M)
print("solver", sorted(sol.pairs), "after", sol.iterations, "iterations")

# purple arcs are the crossing ones
with open("crossing.svg", "w") as fh:
    fh.write(arc_diagram_svg(seq, sol.pairs, title="crossing optimum"))
print("wrote crossing.svg")

# how close does the solver get on random small landscapes?
summary = solver_trials(trials=100, seed=3)
print(f"ratio >= 0.95 in {summary.pass_rate:.0%} of 100 trials;",
      "quantiles", {q: round(v, 3) for q, v in summary.quantiles().items()})
