"""Acceptance checks at their fixed tolerances and runtime budgets.

Each test prints one ``PASS``/``FAIL`` line to the terminal.  The last three
are long studies (the limit study alone takes about 15 minutes).
"""

import pytest

from attitude_hydro import verify

CHECKS = [
    ("AC1", verify.check_projection_identity),
    ("AC2", verify.check_consistency_relation),
    ("AC3", verify.check_linearization),
    ("AC4", verify.check_dissipation),
    ("AC5", verify.check_gci_orthogonality),
    ("AC6", verify.check_symmetric_hyperbolicity),
    ("AC7", verify.check_constraint_transport),
    ("AC8", verify.check_kinetic_relaxation),
    ("AC9", verify.check_hydrodynamic_limit),
    ("AC10", verify.check_corrector_solvability),
]


@pytest.mark.parametrize("label, check", CHECKS, ids=[c[0] for c in CHECKS])
def test_acceptance(label, check, capsys):
    if check is verify.check_hydrodynamic_limit:
        with capsys.disabled():
            result = check(log=lambda m: print("   ", m, flush=True))
    else:
        result = check()
    with capsys.disabled():
        print(f"\n{label} {result.line()}", flush=True)
    assert result.passed, result.summary
