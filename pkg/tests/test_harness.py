import json
import math

import numpy as np
import pytest

from restnet.errors import InvalidArgument
from restnet.harness import (
    ArchEntry,
    ExperimentSpec,
    MetricRow,
    SolverEntry,
    build_model,
    default_label,
    desk_spec,
    evaluate_net,
    init_mu,
    make_dataset,
    paper_spec,
    read_csv,
    report,
    run_grid,
    run_layer_sweep,
    write_csv,
)
from restnet.nets import ArchVariant, init_nominal, predict
from restnet.problem import SplitTag
from restnet.solvers import SolverConfig, robust_ista
from restnet.train import TrainConfig, evaluate, mse_loss


def _tiny(**kw):
    base = dict(M=8, N=20, k=2, frob_target=3.0, train_count=40, test_count=20, sigma2=0.01,
                archs=[ArchEntry("RestOpt3", 3)], train=TrainConfig(lr=1e-2, batch_size=8, epochs=3),
                solvers=[SolverEntry("rista", 0.1, max_iters=50)], seed=5, lambda0=0.1)
    base.update(kw)
    return ExperimentSpec(**base)


def test_mse_db():
    assert MetricRow("x", 0.0, 0.0, 0.01).mse_db == pytest.approx(-20.0)
    assert MetricRow("x", 0.0, 0.0, 0.0).mse_db == -math.inf


def test_labels():
    assert default_label("RestOpt3", 6) == "REST6"
    assert default_label("RestOpt4", 6) == "REST4-6"
    assert default_label("Lista", 8) == "LISTA8"
    assert paper_spec().labels() == {"REST6", "LISTA6", "LISTA8", "ISTA", "RobustISTA"}


def test_spec_validation():
    with pytest.raises(InvalidArgument):
        _tiny(train_count=0)
    with pytest.raises(InvalidArgument):
        _tiny(r_test=[-1.0])
    with pytest.raises(InvalidArgument):
        _tiny(archs=[ArchEntry("Lista", 3), ArchEntry("Lista", 3)])
    with pytest.raises(InvalidArgument):
        SolverEntry("fista", 0.1)
    with pytest.raises(InvalidArgument):
        ExperimentSpec.from_json({"M": 8, "bogus": 1})


def test_spec_json_round_trip(tmp_path):
    spec = desk_spec()
    p = tmp_path / "spec.json"
    p.write_text(json.dumps(spec.to_json()))
    back = ExperimentSpec.load(p)
    assert back == spec


def test_report_rejects_empty(tmp_path):
    with pytest.raises(InvalidArgument):
        report([], tmp_path / "r.csv")


def test_csv_round_trip(tmp_path):
    rows = [MetricRow("REST6", 0.0, 0.1, 1 / 3, 0.5), MetricRow("ISTA", math.nan, 0.1, 0.0, 0.2)]
    report(rows, tmp_path / "r.csv")
    back = read_csv(tmp_path / "r.csv")
    assert [b.mse for b in back] == [r.mse for r in rows]
    assert math.isnan(back[1].r)
    text = (tmp_path / "r.csv").read_text()
    assert text.splitlines()[0] == "method,r,r_prime,mse,mse_db,wall_time_s"
    assert ",-inf," in text
    assert (tmp_path / "r.txt").exists()


def test_csv_unknown_label(tmp_path):
    write_csv([MetricRow("BP", 0.0, 0.0, 0.1)], tmp_path / "a.csv")
    with pytest.raises(InvalidArgument):
        read_csv(tmp_path / "a.csv", known_labels={"REST6"})


def test_report_curves(tmp_path):
    report([MetricRow("x", 0.0, 0.0, 0.1)], tmp_path / "r.csv", curves={"a": [1.0, 0.5, None, 0.2]})
    raw = (tmp_path / "r.pgm").read_bytes()
    assert raw.startswith(b"P5\n400 200\n255\n") and len(raw) == 15 + 400 * 200


def test_lr_zero_cell_equals_solver():
    K = 4
    spec = _tiny(archs=[ArchEntry("RestOpt3", K)], train=TrainConfig(lr=0.0, epochs=1), solvers=[])
    rows = run_grid(spec, [0.0], [0.0])
    model = build_model(spec)
    ds = make_dataset(spec, model, 0.0, SplitTag.Test)
    cfg = SolverConfig(init_mu(spec, model), spec.lambda0, max_iters=K, rel_tol=0.0, store_trace=False)
    ref = mse_loss(robust_ista(ds.Y, model, cfg).x_hat, ds.X)
    assert rows[0].mse == pytest.approx(ref, rel=1e-10)


@pytest.fixture(scope="module")
def small_grid():
    spec = _tiny(archs=[ArchEntry("RestOpt3", 3), ArchEntry("Lista", 3)],
                 solvers=[SolverEntry("ista", 0.1, max_iters=50), SolverEntry("rista", 0.1, max_iters=50)])
    nets = {}
    return spec, run_grid(spec, [0.0], [0.0, 2.0], nets_out=nets), nets


def test_grid_shape_and_order(small_grid):
    _, rows, nets = small_grid
    assert len(rows) == 8
    keys = [(m.method, -1.0 if math.isnan(m.r) else m.r, m.r_prime) for m in rows]
    assert keys == sorted(keys)
    assert set(nets) == {("REST3", 0.0), ("LISTA3", 0.0)}


def test_grid_mismatch_hurts(small_grid):
    _, rows, _ = small_grid
    by = {(m.method, m.r_prime): m for m in rows}
    for method in {m.method for m in rows}:
        assert by[(method, 2.0)].mse_db >= by[(method, 0.0)].mse_db - 0.1


def test_metric_identity(small_grid):
    spec, _, nets = small_grid
    net, _ = nets[("REST3", 0.0)]
    ds = make_dataset(spec, build_model(spec), 2.0, SplitTag.Test)
    a = evaluate_net(net, ds)
    assert abs(a - mse_loss(predict(net, ds.Y), ds.X)) <= 1e-14
    assert abs(a - evaluate(net, ds)) <= 1e-14


def test_grid_deterministic(tmp_path):
    spec = _tiny()
    for name in ("a", "b"):
        report(run_grid(spec, [0.0], [0.0, 1.0]), tmp_path / f"{name}.csv", timing=False)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_grid_rejects_empty_lists():
    with pytest.raises(InvalidArgument):
        run_grid(_tiny(), [], [0.0])


def test_layer_sweep_zero_depth_is_zero_estimator():
    spec = _tiny()
    rows = run_layer_sweep(spec, [0])
    ds = make_dataset(spec, build_model(spec), 0.0, SplitTag.Test)
    assert rows[0].method == "REST0"
    assert rows[0].mse == pytest.approx(float(np.mean(ds.X ** 2)), rel=1e-14)


def test_layer_sweep_depth_helps():
    spec = _tiny(train_count=100, test_count=50, train=TrainConfig(lr=1e-2, batch_size=16, epochs=20))
    rows = {m.method: m for m in run_layer_sweep(spec, [1, 6])}
    assert set(rows) == {"REST1", "REST1-train", "REST6", "REST6-train"}
    assert rows["REST6"].mse <= rows["REST1"].mse


def test_layer_sweep_rejects_empty():
    with pytest.raises(InvalidArgument):
        run_layer_sweep(_tiny(), [])


def test_nominal_net_matches_init():
    spec = _tiny()
    model = build_model(spec)
    net = init_nominal(ArchVariant.RestOpt3, 2, "Shared", model, init_mu(spec, model), spec.lambda0)
    assert net.blocks[0]["mu"] == pytest.approx(1 / (2 * np.linalg.norm(model.A, 2) ** 2), rel=1e-8)
