import json
import os

import numpy as np
import pytest

from sortlet_vmc.cli import OUT_ENV, THREAD_VARS, build_parser, main

H_CFG = """
system:
  nuclei:
    - element: H
      xyz: [0.0, 0.0, 0.0]
run:
  seed: 0
  potential: coulomb
"""


@pytest.fixture
def h_config(tmp_path):
    p = tmp_path / "h.yaml"
    p.write_text(H_CFG)
    return p


def train_args(h_config, out, extra=()):
    return ["train", str(h_config), "--iters", "4", "--walkers", "8",
            "--burn-in", "10", "--sortlets", "1", "--checkpoint-every", "2",
            "--out", str(out), *extra]


def test_train_writes_run_directory(h_config, tmp_path, capsys):
    out = tmp_path / "runs"
    assert main(train_args(h_config, out)) == 0
    run_dirs = list(out.glob("run-*"))
    assert len(run_dirs) == 1
    lines = (run_dirs[0] / "metrics.ndjson").read_text().splitlines()
    assert len(lines) == 4
    assert (run_dirs[0] / "checkpoints" / "step-00000004.npz").exists()
    assert "final energy" in capsys.readouterr().out


def test_evaluate_roundtrip_and_hash_refusal(h_config, tmp_path, capsys):
    out = tmp_path / "runs"
    main(train_args(h_config, out))
    ckpt = next(out.glob("run-*/checkpoints/step-00000004.npz"))
    ok = main(["evaluate", str(h_config), str(ckpt), "--sortlets", "1",
               "--estimates", "3", "--equilibration", "5", "--walkers", "8",
               "--out", str(out)])
    assert ok == 0
    assert "energy" in capsys.readouterr().out
    # a different ansatz width must be refused by the stored model hash
    bad = main(["evaluate", str(h_config), str(ckpt), "--sortlets", "2",
                "--estimates", "3", "--equilibration", "5", "--walkers", "8",
                "--out", str(out)])
    assert bad == 1
    assert "different model" in capsys.readouterr().err


def test_probe_variational_report(h_config, tmp_path, capsys):
    out = tmp_path / "runs"
    assert main(["probe", "variational", str(h_config), "--trials", "500",
                 "--out", str(out)]) == 0
    report_files = list(out.glob("run-*/report-variational.txt"))
    assert len(report_files) == 1
    record = json.loads(report_files[0].read_text().splitlines()[0])
    assert record["passed"] is True
    assert "pass" in capsys.readouterr().out


def test_probe_reports_append(h_config, tmp_path):
    out = tmp_path / "runs"
    for _ in range(2):
        main(["probe", "variational", str(h_config), "--trials", "200",
              "--out", str(out)])
    report = next(out.glob("run-*/report-variational.txt"))
    assert len(report.read_text().splitlines()) == 2


def test_probe_gradcheck_ignores_system_details(h_config, tmp_path):
    assert main(["probe", "gradcheck", str(h_config),
                 "--out", str(tmp_path / "runs")]) == 0


def test_output_root_from_environment(h_config, tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "envruns"))
    assert main(["probe", "variational", str(h_config), "--trials", "200"]) == 0
    assert list((tmp_path / "envruns").glob("run-*/report-variational.txt"))


def test_threads_flag_pins_blas_pools(h_config, tmp_path, monkeypatch):
    monkeypatch.setattr(os, "environ", os.environ.copy())
    main(["--threads", "3", "probe", "variational", str(h_config),
          "--trials", "200", "--out", str(tmp_path / "runs")])
    for var in THREAD_VARS:
        assert os.environ[var] == "3"


def test_threads_flag_rejects_nonpositive(h_config, tmp_path):
    assert main(["--threads", "0", "probe", "variational", str(h_config),
                 "--out", str(tmp_path / "runs")]) == 2


def test_missing_config_is_a_usage_error(tmp_path):
    with pytest.raises(SystemExit, match="no such config"):
        main(["probe", "variational", str(tmp_path / "absent.yaml")])


def test_malformed_config_is_a_usage_error(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("system:\n  nuclei: []\n")
    with pytest.raises(SystemExit, match="bad config"):
        main(["probe", "variational", str(p)])


def test_unknown_probe_kind_rejected_by_parser(h_config):
    with pytest.raises(SystemExit):
        build_parser().parse_args(["probe", "slater", str(h_config)])


def test_train_resume_from_cli_checkpoint(h_config, tmp_path):
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    main(train_args(h_config, out_a))
    full = next(out_a.glob("run-*/checkpoints/step-00000004.npz"))
    mid = next(out_a.glob("run-*/checkpoints/step-00000002.npz"))
    assert main(train_args(h_config, out_b, extra=["--resume", str(mid)])) == 0
    resumed = next(out_b.glob("run-*/checkpoints/step-00000004.npz"))
    with np.load(full) as za, np.load(resumed) as zb:
        assert np.array_equal(za["theta"], zb["theta"])
        assert np.array_equal(za["positions"], zb["positions"])
