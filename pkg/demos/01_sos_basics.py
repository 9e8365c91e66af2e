"""Sums-of-squares basics: Gram matrices, infeasibility certificates and a
Putinar lower bound, all through the in-house SOS compiler and SDP solver.

Run with ``python demos/01_sos_basics.py``.
"""

import numpy as np

from frsplan.polyalg import Polynomial, VariableSpace
from frsplan.sdpsolve import solve
from frsplan.soscompile import SemialgebraicSet, SosProgram

X = VariableSpace(("x",))
XY = VariableSpace(("x", "y"))

# %% x^2 + 1 is a sum of squares; its Gram matrix in the basis (1, x) is the identity
x = Polynomial.variable(X, "x")
prog = SosProgram(X)
prog.add_sos(x ** 2 + 1, ("x",), degree=2)
compiled = prog.compile()
sol = solve(compiled.problem)
print("x^2 + 1:", sol.status)
print("Gram matrix:\n", np.round(sol.X[0], 8))

# %% x alone is not SOS; the solver returns a Farkas-type certificate instead
prog = SosProgram(X)
prog.add_sos(x, ("x",), degree=2)
print("x:", solve(prog.compile().problem).status)

# %% best lower bound of p on the unit box via a Putinar certificate
x, y = Polynomial.variable(XY, "x"), Polynomial.variable(XY, "y")
p = x ** 4 + x * y - y ** 2 + 0.5 * x
prog = SosProgram(XY)
gamma = prog.new_poly("gamma", 0, ())
box = SemialgebraicSet.unit_box(XY, ("x", "y"))
prog.add_constraint(p - gamma, box, degree=4)
prog.maximize(gamma, lambda q: q.coef((0, 0)))
compiled = prog.compile()
sol = solve(compiled.problem)
cert = prog.recover(compiled, sol.x, sol.X)
bound = cert.decisions["gamma"].coef((0, 0))
samples = np.random.default_rng(0).uniform(-1, 1, (100_000, 2))
print(f"certified lower bound {bound:.6f}; sampled minimum {p.eval_many(samples).min():.6f}")
