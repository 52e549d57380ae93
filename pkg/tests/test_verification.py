import numpy as np

from graphdn.verification import (FD_TOLERANCE, run_gradient_suite,
                                  suite_passed, suite_table)


def test_quick_suite_passes_every_layer_check():
    entries = run_gradient_suite(seed=0, instances=1, include_end_to_end=False)
    names = [e.name for e in entries]
    assert names == ["leaky_relu", "conv2d", "batch_norm", "circulant_stack",
                     "filter_network", "ecc_aggregate", "gc_layer"]
    for e in entries:
        assert e.instances == 1
        assert e.passed, f"{e.name}: {e.max_rel_error:.3e}"
        assert e.max_rel_error < FD_TOLERANCE
    assert suite_passed(entries)


def test_suite_table_format():
    entries = run_gradient_suite(seed=1, instances=1, include_end_to_end=False)
    lines = suite_table(entries).splitlines()
    assert lines[0] == "check\tinstances\tmax_rel_error\ttolerance\tstatus"
    assert len(lines) == 1 + len(entries)
    for line in lines[1:]:
        name, inst, err, tol, status = line.split("\t")
        assert status in ("ok", "FAIL")
        assert float(err) <= float(tol) or status == "FAIL"


def test_suite_is_deterministic_in_the_seed():
    a = run_gradient_suite(seed=5, instances=1, include_end_to_end=False)
    b = run_gradient_suite(seed=5, instances=1, include_end_to_end=False)
    assert [e.max_rel_error for e in a] == [e.max_rel_error for e in b]
