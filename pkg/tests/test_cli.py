import csv
import io
from contextlib import redirect_stdout

import numpy as np
import pytest

from holobind.cli import main
from holobind.tensor import read_tensor, write_tensor
from holobind.trainer import init_toy_model, save_model


def _run(argv):
    buf = io.StringIO()
    with redirect_stdout(buf):
        code = main(argv)
    return code, buf.getvalue()


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --------------------------------------------------------------- file verbs

def test_gen_bind_unbind_round_trip(tmp_path):
    x = np.random.default_rng(0).normal(size=(16, 16, 1))
    x_path, s_path = tmp_path / "x.hbt", tmp_path / "s.hbt"
    b_path, out_path = tmp_path / "b.hbt", tmp_path / "rec.hbt"
    write_tensor(x, x_path)
    assert main(["gen-secret", "--dims", "16x16x1", "--seed", "5", "--out", str(s_path)]) == 0
    assert main(["bind", "--in", str(x_path), "--secret", str(s_path),
                 "--out", str(b_path)]) == 0
    assert main(["unbind", "--in", str(b_path), "--secret", str(s_path),
                 "--out", str(out_path)]) == 0
    recovered = read_tensor(out_path)
    assert np.max(np.abs(recovered - x)) <= 1e-9


@pytest.mark.parametrize("op", ["hrr1d", "vtb", "ivtb", "hilbert"])
def test_alternative_operators_round_trip(tmp_path, op):
    x = np.random.default_rng(1).normal(size=(16, 16))
    x_path, s_path = tmp_path / "x.hbt", tmp_path / "s.hbt"
    b_path, out_path = tmp_path / "b.hbt", tmp_path / "rec.hbt"
    write_tensor(x, x_path)
    gen_op = {"hrr1d": "hrr", "hilbert": "hrr"}.get(op, op)
    assert main(["gen-secret", "--dims", "256", "--seed", "3", "--out", str(s_path),
                 "--op", gen_op]) == 0
    assert main(["bind", "--in", str(x_path), "--secret", str(s_path),
                 "--out", str(b_path), "--op", op]) == 0
    unbind_args = ["unbind", "--in", str(b_path), "--secret", str(s_path),
                   "--out", str(out_path), "--op", op]
    if op == "hilbert":
        unbind_args += ["--dims", "16x16"]
    assert main(unbind_args) == 0
    recovered = read_tensor(out_path)
    if op == "vtb":  # plain VTB unbinding is approximate by design
        assert recovered.shape == x.shape
    else:
        assert np.max(np.abs(recovered - x)) <= 1e-9


def test_gen_secret_deterministic_with_env(tmp_path, monkeypatch):
    a, b = tmp_path / "a.hbt", tmp_path / "b.hbt"
    monkeypatch.setenv("HOLOBIND_SEED", "9")
    assert main(["gen-secret", "--dims", "8x8", "--out", str(a)]) == 0
    monkeypatch.delenv("HOLOBIND_SEED")
    assert main(["gen-secret", "--dims", "8x8", "--seed", "9", "--out", str(b)]) == 0
    assert np.array_equal(read_tensor(a), read_tensor(b))


def test_seed_flag_beats_env(tmp_path, monkeypatch):
    a, b = tmp_path / "a.hbt", tmp_path / "b.hbt"
    monkeypatch.setenv("HOLOBIND_SEED", "111")
    assert main(["gen-secret", "--dims", "8x8", "--seed", "9", "--out", str(a)]) == 0
    monkeypatch.delenv("HOLOBIND_SEED")
    assert main(["gen-secret", "--dims", "8x8", "--seed", "9", "--out", str(b)]) == 0
    assert np.array_equal(read_tensor(a), read_tensor(b))


# ------------------------------------------------------------------ exit codes

def test_unknown_flag_is_usage_error():
    assert main(["gen-secret", "--dims", "4x4", "--out", "x", "--frobnicate"]) == 2


def test_unknown_subcommand_is_usage_error():
    assert main(["transmogrify"]) == 2


def test_domain_error_exit_code(tmp_path):
    x_path = tmp_path / "x.hbt"
    s_path = tmp_path / "s.hbt"
    write_tensor(np.ones((4, 4)), x_path)
    write_tensor(np.ones((8, 8)), s_path)  # shape mismatch
    assert main(["bind", "--in", str(x_path), "--secret", str(s_path),
                 "--out", str(tmp_path / "b.hbt")]) == 1


def test_missing_file_domain_error(tmp_path):
    # unreadable container -> domain error, not a traceback
    bad = tmp_path / "bad.hbt"
    bad.write_bytes(b"not a tensor")
    assert main(["unbind", "--in", str(bad), "--secret", str(bad),
                 "--out", str(tmp_path / "o.hbt")]) == 1


# ----------------------------------------------------------------- csv verbs

def test_probe_csv(tmp_path):
    out = tmp_path / "fig2.csv"
    assert main(["probe", "--d", "64", "--kmax", "4", "--mode", "both",
                 "--seeds", "5", "--seed", "0", "--out", str(out)]) == 0
    rows = _read_csv(out)
    assert {r["mode"] for r in rows} == {"projected", "naive"}
    assert {int(r["k"]) for r in rows} == {1, 2, 4}
    for row in rows:
        float(row["present_mean"]), float(row["absent_std"])


def test_bench_csv(tmp_path):
    spec_path = tmp_path / "toy.spec"
    spec_path.write_text(
        "input 16 16 1\n"
        "circconv2d 3 3 1 16 100\n"
        "pointwise leaky_relu 0.1\n"
        "circconv2d 3 3 16 16 101\n"
        "pointwise leaky_relu 0.1\n"
        "circconv2d 3 3 16 1 102\n"
    )
    out = tmp_path / "bench.csv"
    assert main(["bench", "--spec", str(spec_path), "--dims", "16x16x1",
                 "--k", "1", "--out", str(out)]) == 0
    (row,) = _read_csv(out)
    assert int(row["remote_flops"]) == 663_552
    assert float(row["remote_fraction"]) >= 0.65
    assert int(row["bytes_up"]) == 1060


def test_ablate_csv(tmp_path):
    out = tmp_path / "ablate.csv"
    assert main(["ablate", "--seed", "4", "--out", str(out)]) == 0
    rows = _read_csv(out)
    assert [r["operator"] for r in rows] == ["hrr2d", "hrr1d", "vtb", "ivtb", "hilbert"]
    by_op = {r["operator"]: float(r["reconstruction_cosine"]) for r in rows}
    for op in ("hrr2d", "hrr1d", "ivtb", "hilbert"):
        assert by_op[op] >= 0.999
    assert 0.3 < by_op["vtb"] < 0.95
    for r in rows:
        assert abs(float(r["bound_input_cosine"])) < 0.3


# -------------------------------------------------------------- train/attack

def test_train_toy_and_attack_smoke(tmp_path):
    model_path = tmp_path / "toy.model"
    metrics_path = tmp_path / "metrics.csv"
    assert main(["train-toy", "--epochs", "2", "--out", str(model_path),
                 "--metrics", str(metrics_path)]) == 0
    metrics = _read_csv(metrics_path)
    assert len(metrics) == 2
    assert set(metrics[0]) == {"epoch", "train_loss", "pred_acc", "adv_acc"}

    report_path = tmp_path / "report.csv"
    assert main(["attack", "--kind", "cluster", "--model", str(model_path),
                 "--seed", "3", "--out", str(report_path)]) == 0
    (row,) = _read_csv(report_path)
    assert row["name"] == "cluster"
    assert row["score_kind"] == "ari"
    assert row["verdict"] in ("pass", "fail")
    assert "k=4" in row["params"]


def test_attack_regress_smoke(tmp_path):
    model_path = tmp_path / "toy.model"
    save_model(init_toy_model(2), model_path)
    report_path = tmp_path / "report.csv"
    assert main(["attack", "--kind", "regress", "--model", str(model_path),
                 "--seed", "4", "--out", str(report_path)]) == 0
    (row,) = _read_csv(report_path)
    assert row["name"] == "regress"
    assert float(row["score"]) > 0


def test_attack_invert_smoke(tmp_path):
    model_path = tmp_path / "toy.model"
    save_model(init_toy_model(2), model_path)
    report_path = tmp_path / "report.csv"
    assert main(["attack", "--kind", "invert", "--model", str(model_path),
                 "--seed", "4", "--steps", "5", "--out", str(report_path)]) == 0
    (row,) = _read_csv(report_path)
    assert row["name"] == "invert"
    assert "recovery_cosine=" in row["params"]
    assert row["verdict"] in ("pass", "fail")


# -------------------------------------------------------------- serve/query

def test_serve_query_over_tcp(tmp_path):
    from holobind.protocol import WorkerServer
    from holobind.trainer import backbone_applier, load_model

    model_path = tmp_path / "toy.model"
    save_model(init_toy_model(6), model_path)
    x = np.random.default_rng(7).normal(size=(16, 16, 1))
    x_path = tmp_path / "x.hbt"
    write_tensor(x, x_path)

    with WorkerServer(backbone_applier(load_model(model_path))) as server:
        host, port = server.address
        out = tmp_path / "dist.csv"
        assert main(["query", "--in", str(x_path), "--endpoint", f"{host}:{port}",
                     "--k", "2", "--model", str(model_path), "--seed", "8",
                     "--out", str(out)]) == 0
    rows = _read_csv(out)
    assert len(rows) == 4
    total = sum(float(r["probability"]) for r in rows)
    assert total == pytest.approx(1.0, abs=1e-6)


def test_query_connect_failure_is_domain_error(tmp_path):
    model_path = tmp_path / "toy.model"
    save_model(init_toy_model(6), model_path)
    x_path = tmp_path / "x.hbt"
    write_tensor(np.ones((16, 16, 1)), x_path)
    assert main(["query", "--in", str(x_path), "--endpoint", "127.0.0.1:9",
                 "--k", "1", "--model", str(model_path)]) == 1
