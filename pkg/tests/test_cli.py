import csv
import io

from sdnteleport.cli import main


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_validate_exit_codes(tmp_path, capsys):
    good = write(tmp_path, "good.conf", "delta_ms = 60\ndelta_sc_ms = 2\ndelta_ofdeny_ms = 3\n")
    assert main(["validate", "--config", good]) == 0
    assert capsys.readouterr().out.splitlines()[0] == "EQ3 ok slack=20ms"
    bad = write(tmp_path, "bad.conf", "delta_ms = 30\ndelta_sc_ms = 20\ndelta_ofdeny_ms = 3\n")
    assert main(["validate", "--config", bad]) == 1
    assert "EQ4 violated" in capsys.readouterr().out


def test_validate_measures_when_delays_absent(tmp_path, capsys):
    conf = write(tmp_path, "m.conf", "delta_ms = 60\ncalibration_probes = 3\n")
    assert main(["validate", "--config", conf]) == 0


def test_bad_config_returns_2(tmp_path, capsys):
    conf = write(tmp_path, "x.conf", "nonsense_key = 1\n")
    assert main(["validate", "--config", conf]) == 2
    assert "unknown keys" in capsys.readouterr().err
    assert main(["trial", "--scenario", str(tmp_path / "missing.conf")]) == 2


def test_trial_and_trace(tmp_path, capsys):
    conf = write(tmp_path, "t.conf", "message = Hi\nlatency_jitter = none\n")
    trace = tmp_path / "trace.txt"
    assert main(["trial", "--scenario", conf, "--repetitions", "2", "--trace", str(trace)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 3
    assert "accuracy=100.000" in out[0] and "termination=Eom" in out[0]
    assert out[-1].startswith("mean_accuracy=100.000")
    assert trace.read_text().startswith("interval=0 role=s")


def test_experiment_to_stdout(tmp_path, capsys):
    conf = write(tmp_path, "e.conf", "message = ab\nrepetitions = 1\n")
    grid = write(tmp_path, "g.conf", "intervals = 60,80\nframe_lengths = 7\n")
    assert main(["experiment", "--scenario", conf, "--sweep", grid, "--out", "-"]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert [r["delta_ms"] for r in rows] == ["60", "80"]
    assert all(r["mean_accuracy_pct"] == "100.000" for r in rows)
