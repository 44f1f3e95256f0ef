#!/usr/bin/env python3
"""
Reproduction check on sprint_cart: RAPP-bounded DR should transfer better
than no DR and than DR proposed from the uninformative prior. Takes on the
order of an hour on a laptop, so it only runs with DRLAB_RUN_SLOW=1.
"""
import os
import sys
from pathlib import Path

import pytest

# Add project root to path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from experiments.sprint_cart_matrix.run_matrix import run_experiment

pytestmark = [
    pytest.mark.slow,
    pytest.mark.skipif(not os.environ.get("DRLAB_RUN_SLOW"), reason="set DRLAB_RUN_SLOW=1"),
]


def test_rapp_bounded_dr_beats_ablations(tmp_path):
    summary = run_experiment(tmp_path)
    assert set(summary["per_seed"]) == {0, 1, 2}
    assert (tmp_path / "ordering.json").exists()
    assert summary["llm_beats_no_dr"], summary["medians"]
    assert summary["llm_beats_uninformative"], summary["medians"]
