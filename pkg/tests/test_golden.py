"""Frozen instance sizes, hashes and one demo solve (see tests/golden/freeze.py)."""
import json
from pathlib import Path

import pytest

from golden.freeze import encode, instance_digest
from milpguide.bnb.solver import solve

GOLDEN = json.loads((Path(__file__).parent / "golden" / "golden.json").read_text())


@pytest.mark.parametrize("text", sorted(GOLDEN["instances"]))
def test_frozen_instance(text):
    _, inst = encode(text)
    g = GOLDEN["instances"][text]
    c = inst.counts()
    assert {k: c[k] for k in c} == {k: g[k] for k in c}
    assert instance_digest(inst) == g["instance_sha256"]


def test_frozen_demo_solve():
    g = GOLDEN["demo_solve"]
    _, inst = encode(g["family"], g["seed"])
    res = solve(inst)
    assert (res.status, res.node_count, res.lp_iterations) == (g["status"], g["node_count"], g["lp_iterations"])
    assert res.objective == pytest.approx(g["objective"], abs=1e-9)
