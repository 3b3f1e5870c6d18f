"""Trace of a monotone matrix function respects the Loewner order."""
import numpy as np

from specsense.matfunc import apply_fn, loewner_leq, make_fn, registered_fns, sym_eigen, trace_fn
from specsense.selftest import random_loewner_pair

rng = np.random.default_rng(3)

## Build A <= B by adding a PSD matrix to A
A, B = random_loewner_pair(rng, 16)
print("A <= B:", loewner_leq(A, B), " B <= A:", loewner_leq(B, A))

## Every registered monotone map keeps the order of the traces
for f in registered_fns():
    print(f"{f.describe():>14}:  Tr f(A) = {trace_fn(A, f):12.5g}   Tr f(B) = {trace_fn(B, f):12.5g}")

## Spectral application: sqrt(A) squared gives A back
S = apply_fn(A, make_fn("sqrt")).entries
print("||sqrt(A)^2 - A||_max =", np.abs(S @ S - A).max())

## The Jacobi eigensolver against LAPACK
ed = sym_eigen(A)
print("max eigenvalue gap vs numpy:", np.abs(ed.eigenvalues - np.linalg.eigvalsh(A)).max())

## A pair that is not ordered: diag(1,3) vs diag(2,2)
print("diag(1,3) <= diag(2,2):", loewner_leq(np.diag([1.0, 3.0]), np.diag([2.0, 2.0])))
