"""Reference optimum of  min tr(W^T D W X^+)  s.t. X psd, diag(X) <= 1.

Solved with an off-the-shelf conic solver; the printed values are frozen
into sdp_fixtures.json and checked by the Rust solver tests.
"""
import json
import itertools
import numpy as np
import cvxpy as cp


def optimum(W, w):
    n = W.shape[1]
    X = cp.Variable((n, n), PSD=True)
    obj = sum(wi * cp.matrix_frac(row, X) for row, wi in zip(W, w) if wi > 0)
    prob = cp.Problem(cp.Minimize(obj), [cp.diag(X) <= 1])
    prob.solve(solver="CLARABEL", tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12, max_iter=500)
    return float(prob.value)


def center(v, dims):
    t = np.array(v, dtype=float).reshape(dims)
    for ax in range(len(dims)):
        t = t - t.mean(axis=ax, keepdims=True)
    return t.ravel()


fixtures = []

prefix3 = np.tril(np.ones((3, 3)))
fixtures.append({"name": "prefix3", "dims": [3], "rows": prefix3.tolist(), "weights": [1, 1, 1]})

# centered 1-way prefix on a size-4 attribute (the {A} subworkload of 1-way prefix)
p4 = np.array([center(r, [4]) for r in np.tril(np.ones((4, 4)))])
fixtures.append({"name": "prefix4_centered", "dims": [4], "rows": p4.tolist(), "weights": [1, 2, 3, 4]})

# centered abs queries |a - b| <= c on a 4x4 pair
rows = []
for c in range(4):
    q = [1.0 if abs(a - b) <= c else 0.0 for a in range(4) for b in range(4)]
    rows.append(center(q, [4, 4]))
rows = np.array(rows)
fixtures.append({"name": "abs4_centered", "dims": [4, 4], "rows": rows.tolist(), "weights": [1, 1, 1, 1]})

# centered affine queries a + b <= c on a 3x4 pair, weighted
rows = []
for c in range(3 + 4 - 1):
    q = [1.0 if a + b <= c else 0.0 for a in range(3) for b in range(4)]
    rows.append(center(q, [3, 4]))
rows = np.array(rows)
fixtures.append({"name": "affine34_centered", "dims": [3, 4], "rows": rows.tolist(), "weights": [1, 5, 2, 4, 3, 1]})

for f in fixtures:
    f["optimum"] = optimum(np.array(f["rows"]), f["weights"])

print(json.dumps(fixtures, indent=1))
