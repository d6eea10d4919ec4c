import orjson
import pytest

from app.main import _plan_from_args, build_parser, main
from ingest.run_store import write_run_record


def _json_out(capsys):
    return orjson.loads(capsys.readouterr().out)


def test_baseline_shared(capsys):
    assert main(["baseline", "--model", "shared", "--N", "100", "--n", "50", "--k", "5"]) == 0
    out = _json_out(capsys)
    assert out["mean"] == pytest.approx(3.125)
    assert out["plot_sigma"] == pytest.approx(out["sigma"] / 2)


def test_baseline_never_literal(capsys):
    assert main(["baseline", "--model", "never", "--N", "100", "--n", "50", "--k", "2", "--literal"]) == 0
    assert _json_out(capsys)["mean"] == pytest.approx(25.0)


def test_baseline_hypergeom_interval(capsys):
    assert main(["baseline", "--model", "hypergeom", "--N", "100", "--n", "50"]) == 0
    out = _json_out(capsys)
    assert out["mean"] == pytest.approx(25.0)
    lo, hi = out["interval"]
    assert lo + hi == 50 and out["outside_mass"] <= 0.05


def test_baseline_monte_carlo(capsys):
    assert main(["baseline", "--model", "mc", "--N", "100", "--n", "50", "--k", "3", "--trials", "1000"]) == 0
    assert set(_json_out(capsys)) == {"pairwise", "shared", "never"}


def test_domain_errors_exit_2(capsys):
    assert main(["baseline", "--model", "shared", "--N", "10", "--n", "50", "--k", "3"]) == 2
    assert "ticketlab:" in capsys.readouterr().err


def test_usage_errors_exit_1(tmp_path):
    with pytest.raises(SystemExit) as e:
        main(["baseline"])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        main(["compare", "--runs-dir", str(tmp_path), "--mode", "bogus"])
    assert e.value.code == 1
    assert main(["run", "--schedule", "80,50", "--out", str(tmp_path)]) == 1
    assert main(["run", "--schedule", "shallow", "--out", str(tmp_path)]) == 1
    assert main(["run", "--plan", str(tmp_path / "missing.json")]) == 1


def test_compare_without_runs_exits_2(tmp_path):
    assert main(["compare", "--runs-dir", str(tmp_path)]) == 2


def test_corrupt_manifest_exits_2(tmp_path, make_record):
    path = write_run_record(make_record(0, 0), tmp_path)
    path.write_bytes(b"[]")
    assert main(["report", "--runs-dir", str(tmp_path)]) == 2


def test_parser_accepts_documented_flags():
    args = build_parser().parse_args([
        "run", "--seeds", "0,1", "--runs", "2", "--schedule", "deep", "--regime", "partial",
        "--config", "lenet", "--partial-stream", "noise", "--out", "x",
    ])
    assert args.regime == "partial" and args.config == "lenet"
    assert _plan_from_args(args).partial_stream == "noise"
    args = build_parser().parse_args(["compare", "--runs-dir", "r", "--mode", "cross-task", "--step", "1", "--level", "0.99"])
    assert args.mode == "cross-task" and args.level == 0.99


def test_run_compare_report_end_to_end(tmp_path, capsys):
    ds = tmp_path / "blobs.json"
    ds.write_bytes(orjson.dumps({"name": "blobs", "classes": 3, "dims": 6, "train_per_class": 20, "test_per_class": 10}))
    out = tmp_path / "out"
    code = main([
        "run", "--seeds", "0,1", "--runs", "2", "--schedule", "50,80", "--regime", "free",
        "--dataset", str(ds), "--config", "mlp", "--hidden", "8", "--epochs", "2", "--lr", "0.1",
        "--out", str(out),
    ])
    assert code == 0
    assert _json_out(capsys)["runs"] == 4
    assert (out / "plan.json").is_file()
    assert (out / "reports" / "accuracy.csv").is_file()

    assert main(["compare", "--runs-dir", str(out), "--mode", "within", "--step", "1"]) == 0
    summary = _json_out(capsys)
    assert summary["stats"] == 4  # 2 seeds x 1 pair x 2 layers
    assert (out / "reports" / "within-step1.csv").is_file()
    assert (out / "reports" / "within-step1.svg").is_file()

    assert main(["compare", "--runs-dir", str(out), "--mode", "similarity", "--metric", "cka"]) == 0
    assert set(_json_out(capsys)["violin"]) == {"within", "across"}

    assert main(["compare", "--runs-dir", str(out), "--mode", "within", "--step", "5"]) == 1

    assert main(["report", "--runs-dir", str(out)]) == 0
    assert _json_out(capsys)["modes"] == ["within", "shared-never", "across"]
    assert (out / "reports" / "across-step0.csv").is_file()
    assert (out / "reports" / "shared-never-step1.csv").is_file()
    assert (out / "reports" / "shared-never-step1.svg").is_file()
    assert (out / "reports" / "spearman-step1.csv").is_file()
