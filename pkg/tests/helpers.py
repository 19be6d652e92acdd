"""Shared test harness pieces (not oracles; see oracles.py for those)."""

from __future__ import annotations

import numpy as np

from multiparse.tensor import Tape, zero_grads

from oracles import central_difference, rel_err


def assert_grads_match(build_loss, params, tol=1e-4, h=1e-5):
    """Backprop build_loss() once, then compare every parameter gradient
    against central differences of the same loss."""
    params = list(params)
    zero_grads(params)
    with Tape() as tape:
        loss = build_loss()
    tape.backward(loss)
    analytic = [p.grad.copy() for p in params]
    zero_grads(params)

    numeric = central_difference(lambda: build_loss().item(),
                                 [p.data for p in params], h=h)
    worst = max(rel_err(a, n) for a, n in zip(analytic, numeric))
    assert worst < tol, f"gradient mismatch: max rel err {worst:.3e} >= {tol:.1e}"


def make_source(tokens, ids, origin=None, attn_mask=None, copy_mask=None):
    """Minimal stand-in for data.SourceSeq: fields only, already reversed."""
    from types import SimpleNamespace

    m = len(ids)
    return SimpleNamespace(
        ids=np.asarray(ids, dtype=np.intp),
        surface=tuple(tokens),
        origin=tuple(origin if origin is not None else range(m)),
        attn_mask=np.asarray(attn_mask if attn_mask is not None else [True] * m),
        copy_mask=np.asarray(copy_mask if copy_mask is not None else [True] * m),
    )
