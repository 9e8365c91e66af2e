import json

import pytest

from frsplan.cli import DEFAULTS, UsageError, load_config, main
from frsplan.frs import FRSCertificate
from frsplan.polyalg import Polynomial


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_check_timing_ok(capsys):
    code, out, _ = run(["check-timing", "--tau-plan", "0.5", "--tau-stop", "0.5", "--json"], capsys)
    data = json.loads(out)
    assert code == 0 and data["T"] == 1.0 and data["T_sense"] == 1.5 and data["D_sense"] == 1.5


def test_check_timing_violation_exit_1(capsys):
    code, out, _ = run(["check-timing", "--tau-plan", "0.5", "--tau-stop", "0.5", "--T", "0.9", "--json"], capsys)
    assert code == 1 and json.loads(out)["ok"] is False


def test_usage_errors_exit_2(capsys):
    assert run(["no-such-command"], capsys)[0] == 2
    assert run(["check-timing", "--tau-plan", "0.5", "--bogus"], capsys)[0] == 2
    assert run([], capsys)[0] == 2


def test_config_precedence(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"seed": 5, "timing": {"tau_plan": 0.4}}))
    cfg = load_config(str(path), {"seed": 9})
    assert cfg["seed"] == 9
    assert cfg["timing"]["tau_plan"] == 0.4
    assert cfg["timing"]["tau_stop"] == DEFAULTS["timing"]["tau_stop"]
    path.write_text(json.dumps({"nonsense": 1}))
    with pytest.raises(UsageError):
        load_config(str(path), {})


@pytest.fixture(scope="module")
def sanity_cert_file(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "cfg.json"
    cfg.write_text(json.dumps({"frs": {"system": "sanity1d"}}))
    out = d / "sanity.json"
    assert main(["compute-frs", "--config", str(cfg), "--degree", "4", "--out", str(out)]) == 0
    return out


def test_compute_and_validate_sanity(sanity_cert_file, capsys):
    capsys.readouterr()
    data = json.loads(sanity_cert_file.read_text())
    assert data["tool_version"] and data["config_hash"] and data["degree"] == 4
    code, out, _ = run(["validate-frs", "--cert", str(sanity_cert_file), "--samples", "50", "--json"], capsys)
    assert code == 0 and json.loads(out)["passed"]


def test_outputs_are_not_overwritten(sanity_cert_file, capsys):
    code, _, err = run(["compute-frs", "--config", "x", "--out", str(sanity_cert_file)], capsys)
    assert code == 2


def test_batch_refuses_failing_certificate(sanity_cert_file, tmp_path, capsys):
    cert = FRSCertificate.load(sanity_cert_file)
    cert.w = Polynomial.zero(cert.space)
    bad = tmp_path / "bad.json"
    cert.save(bad)
    code, out, _ = run(["batch", "--cert", str(bad), "--trials", "2", "--out", str(tmp_path / "r.json"),
                        "--samples", "20", "--closed-loop", "0", "--json"], capsys)
    assert code == 1
    assert "refusing" in json.loads(out)["error"]
    assert not (tmp_path / "r.json").exists()


def test_simulate_twice_is_bitwise_identical(dubins_cert, tmp_path, capsys):
    from tests.conftest import CERT_PATH

    for d in ("a", "b"):
        code, _, _ = run(["simulate", "--cert", str(CERT_PATH), "--seed", "7", "--obstacles", "2",
                          "--out-dir", str(tmp_path / d), "--json"], capsys)
        assert code == 0
    for suffix in ("csv", "json"):
        a = (tmp_path / "a" / f"trial_7.{suffix}").read_bytes()
        b = (tmp_path / "b" / f"trial_7.{suffix}").read_bytes()
        assert a == b
    head = (tmp_path / "a" / "trial_7.csv").read_text().splitlines()
    assert head[0].startswith("# tool_version=") and head[1].startswith("t,x,y,th,thdot,v")


def test_plan_command(dubins_cert, tmp_path, capsys):
    from tests.conftest import CERT_PATH

    obs = tmp_path / "obs.json"
    obs.write_text(json.dumps([{"a": [0.6, -0.05], "b": [0.6, 0.05]}]))
    code, out, _ = run(["plan", "--cert", str(CERT_PATH), "--obstacles", str(obs), "--pose", "0,0,0",
                        "--goal", "2,0", "--vdes", "0.5", "--json"], capsys)
    data = json.loads(out)
    assert code == 0 and data["n_points"] == 3 and len(data["k"]) == 2
