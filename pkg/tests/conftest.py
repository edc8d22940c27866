"""Shared fixtures and helpers; prints one PASS/FAIL line per acceptance
criterion at the end of the run."""

import numpy as np
import pytest
import torch

ACCEPTANCE_MODULE = "test_acceptance"
_acceptance_results = {}


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    if ACCEPTANCE_MODULE in report.nodeid:
        name = report.nodeid.split("::")[-1]
        _acceptance_results[name] = report.outcome.upper()


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _acceptance_results.items():
        terminalreporter.write_line(f"{name}: {outcome}")


# ---------------------------------------------------------------------------
# Finite-difference gradient checking
# ---------------------------------------------------------------------------

def finite_difference_check(fn, tensors, h=1e-5, rtol=1e-4, atol=1e-7):
    """Central-difference gradients of a scalar fn vs autograd, float64.

    ``tensors`` maps names to float64 tensors with requires_grad=True; the
    relative error uses max(|analytic|, |numeric|, 1e-4) as the scale so tiny
    gradients fall back to an absolute comparison.
    """
    for t in tensors.values():
        if t.grad is not None:
            t.grad = None
    loss = fn()
    loss.backward()

    failures = []
    for name, tensor in tensors.items():
        analytic = (tensor.grad.clone() if tensor.grad is not None
                    else torch.zeros_like(tensor))
        flat = tensor.data.view(-1)
        numeric = torch.zeros_like(flat)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            with torch.no_grad():
                up = fn().item()
            flat[i] = orig - h
            with torch.no_grad():
                down = fn().item()
            flat[i] = orig
            numeric[i] = (up - down) / (2 * h)
        numeric = numeric.view_as(tensor)
        scale = torch.maximum(analytic.abs(), numeric.abs()).clamp(min=1e-4)
        rel = ((analytic - numeric).abs() / scale).max().item()
        if rel > rtol and (analytic - numeric).abs().max().item() > atol:
            failures.append(f"{name}: rel err {rel:.3e}")
    assert not failures, "gradient mismatches: " + "; ".join(failures)


@pytest.fixture(scope="session")
def tiny_corpus():
    """Small deterministic synthetic corpus shared by slow-ish tests."""
    from sessrec import dataio
    return dataio.synth_generate(n_items=40, n_sessions=250,
                                 concentration=4.0, seed=123)


@pytest.fixture(autouse=True)
def _seeded():
    torch.manual_seed(0)
    np.random.seed(0)
