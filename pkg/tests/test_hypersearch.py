from types import SimpleNamespace

import pytest
import torch

from leaps import hypersearch
from leaps.errors import LeapsError, NonFiniteError
from leaps.hypersearch import CSV_HEADER, GridRow, GridSpec, grid_search, read_table_csv, table_csv

STIM = torch.zeros(1, 3, 2, 4, 4)


@pytest.fixture(scope="module")
def probe(dataset):
    idx = [dataset.stimuli_for(c)[0] for c in range(3)]
    return dataset.val_x[idx], [0, 1, 2], {"clamp_bounds": dataset.clamp_bounds}


def _fake_synth(loss_of):
    """Stand-in for batched synthesis whose final loss is a function of (lambda1, lambdaL, r)."""
    def run(model, verifier, stimuli, ys, cfg, sched, seeds, **kw):
        loss = loss_of(sched.lambda_first, sched.lambda_last, cfg.reg_scale)
        if isinstance(loss, Exception):
            raise loss
        return [SimpleNamespace(loss_trace={"total": [loss]}) for _ in ys]
    return run


def test_default_grid_matches_published_sets():
    g = GridSpec()
    assert g.lambda1_values == (0.5, 0.625, 0.75, 0.875, 1.0)
    assert g.lambdaL_values == (0.1, 0.2, 0.3, 0.4, 0.5)
    assert g.r_values == (1e-3, 2.5e-3, 5e-3, 7.5e-3, 1e-2)
    assert g.probe_iterations == 1000 and len(g.points()) == 125


def test_single_point(conv_model, conv_verifier, probe):
    stim, ys, kw = probe
    grid = GridSpec((0.75,), (0.2,), (5e-3,), probe_iterations=3)
    best, rows = grid_search(conv_model, conv_verifier, stim, ys, grid, seed=0, **kw)
    assert len(rows) == 1 and best == rows[0]
    assert (best.lambda1, best.lambdaL, best.r, best.status) == (0.75, 0.2, 5e-3, "ok")
    assert best.mean_loss > 0


def test_deterministic_and_best_is_minimum(conv_model, conv_verifier, probe):
    stim, ys, kw = probe
    grid = GridSpec((0.5, 1.0), (0.1, 0.5), (1e-3,), probe_iterations=3)
    a = grid_search(conv_model, conv_verifier, stim, ys, grid, seed=1, **kw)
    b = grid_search(conv_model, conv_verifier, stim, ys, grid, seed=1, **kw)
    assert a == b
    best, rows = a
    assert len(rows) == 4
    assert all(best.mean_loss <= r.mean_loss for r in rows if r.status == "ok")


def test_non_finite_point_is_marked_failed(conv_model, conv_verifier, probe):
    """An infinite regularizer scale makes the probe loss non-finite; the remaining points still run."""
    stim, ys, kw = probe
    grid = GridSpec((1.0,), (0.3,), (5e-3, float("inf")), probe_iterations=2)
    best, rows = grid_search(conv_model, conv_verifier, stim, ys, grid, **kw)
    status = {r.r: r.status for r in rows}
    assert status == {5e-3: "ok", float("inf"): "failed"}
    assert best.r == 5e-3


def test_huge_regularizer_does_not_abort_search(conv_model, conv_verifier, probe):
    stim, ys, kw = probe
    grid = GridSpec((1.0,), (0.3,), (5e-3, 1e3), probe_iterations=2)
    best, rows = grid_search(conv_model, conv_verifier, stim, ys, grid, **kw)
    assert len(rows) == 2 and best.status == "ok"


def test_run_errors_are_isolated(monkeypatch):
    def loss(l1, lL, r):
        return NonFiniteError("diverged") if r == 1e3 else l1 + lL + r
    monkeypatch.setattr(hypersearch, "synthesize_batch", _fake_synth(loss))
    model = SimpleNamespace(capture_layers=["a", "b"])
    best, rows = grid_search(model, None, STIM, [0], GridSpec((0.5, 1.0), (0.1,), (1e-3, 1e3), 1))
    assert [r.status for r in rows] == ["ok", "failed", "ok", "failed"]
    assert (best.lambda1, best.r) == (0.5, 1e-3)


def test_all_failed(monkeypatch):
    monkeypatch.setattr(hypersearch, "synthesize_batch", _fake_synth(lambda *a: NonFiniteError("x")))
    with pytest.raises(LeapsError):
        grid_search(SimpleNamespace(capture_layers=["a"]), None, STIM, [0], GridSpec((1.0,), (0.5,), (1e-3,), 1))


def test_tie_break(monkeypatch):
    """Equal losses resolve to the larger lambda1, then the smaller r, then the smaller lambdaL."""
    monkeypatch.setattr(hypersearch, "synthesize_batch", _fake_synth(lambda *a: 2.0))
    model = SimpleNamespace(capture_layers=["a", "b"])
    best, _ = grid_search(model, None, STIM, [0], GridSpec())
    assert (best.lambda1, best.r, best.lambdaL) == (1.0, 1e-3, 0.1)

    def partial_tie(l1, lL, r):
        return 1.0 if l1 in (0.5, 0.75) else 3.0
    monkeypatch.setattr(hypersearch, "synthesize_batch", _fake_synth(partial_tie))
    best, _ = grid_search(model, None, STIM, [0], GridSpec())
    assert (best.lambda1, best.r, best.lambdaL) == (0.75, 1e-3, 0.1)


def test_empty_inputs():
    with pytest.raises(ValueError):
        grid_search(SimpleNamespace(capture_layers=["a"]), None, [], [], GridSpec(probe_iterations=1))


class TestCSV:
    def test_header_and_round_trip(self):
        rows = [GridRow(1.0, 0.3, 7.5e-3, 7.892), GridRow(0.5, 0.1, 1e-3, float("nan"), "failed")]
        text = table_csv(rows)
        assert text.splitlines()[0] == ",".join(CSV_HEADER) == "lambda1,lambdaL,r,mean_loss,status"
        assert text.splitlines()[1] == "1.0,0.3,0.0075,7.892,ok"
        back = read_table_csv(text)
        assert back[0] == rows[0]
        assert back[1].status == "failed" and back[1].mean_loss != back[1].mean_loss

    def test_bad_header(self):
        with pytest.raises(ValueError):
            read_table_csv("a,b\n1,2\n")
