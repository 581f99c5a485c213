import json
import shutil

import numpy as np
import pytest

from battmdp import __version__
from battmdp.cli import main
from battmdp.export import read_csv, read_tensor
from battmdp.mdp import N_STATES, PolicyStore


@pytest.fixture(scope="module")
def estimated(tmp_path_factory):
    out = tmp_path_factory.mktemp("est")
    assert main(["estimate", "--flights", "2", "--condition", "F1_F1_TH", "--seed", "3", "--out", str(out),
                 "--traces"]) == 0
    return out


def test_estimate_writes_only_requested_condition(estimated):
    assert sorted(p.name for p in (estimated / "tensors").iterdir()) == ["F1_F1_TH"]
    files = sorted(p.name for p in (estimated / "tensors" / "F1_F1_TH").iterdir())
    assert files == ["UseBatt1.csv", "UseBatt2.csv", "UseBoth.csv", "summary.json"]
    assert len(list((estimated / "traces" / "F1_F1_TH").iterdir())) == 2


def test_tensor_files_carry_metadata(estimated):
    meta, header, rows = read_csv(estimated / "tensors" / "F1_F1_TH" / "UseBoth.csv")
    assert meta["version"] == __version__ and meta["seed"] == "3" and len(meta["config_hash"]) == 16
    assert header == ["s", "a", "s_next", "p", "count"]
    t = read_tensor(estimated / "tensors" / "F1_F1_TH")
    t.validate()
    assert t.counts.sum() > 0


def test_estimate_rerun_byte_identical(estimated, tmp_path):
    assert main(["estimate", "--flights", "2", "--condition", "F1_F1_TH", "--seed", "3", "--out", str(tmp_path),
                 "--traces"]) == 0
    for p in estimated.rglob("*"):
        if p.is_file():
            assert p.read_bytes() == (tmp_path / p.relative_to(estimated)).read_bytes(), p


def test_solve_single_condition(estimated, tmp_path):
    store_path = tmp_path / "store.json"
    assert main(["solve", "--out", str(estimated), "--condition", "F1_F1_TH", "--store", str(store_path)]) == 0
    store = PolicyStore.load(store_path)
    assert store.keys() == ["F1_F1_TH"] and store.metadata["version"] == __version__
    doc = json.loads(store_path.read_text())
    assert len(doc["F1_F1_TH"]["actions"]) == N_STATES


def test_solve_tolerance_flag(estimated, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    main(["solve", "--out", str(estimated), "--condition", "F1_F1_TH", "--store", str(a)])
    main(["solve", "--out", str(estimated), "--condition", "F1_F1_TH", "--store", str(b), "--tol", "1e-3"])
    pa = PolicyStore.load(a).keys()[0]
    ja, jb = json.loads(a.read_text())[pa], json.loads(b.read_text())[pa]
    assert jb["iterations"] < ja["iterations"]
    assert ja["actions"] == jb["actions"]


def test_solve_missing_tensor_names_key(estimated, capsys):
    assert main(["solve", "--out", str(estimated), "--condition", "F1_F1_TH,F2_F3_TL"]) == 1
    assert "F2_F3_TL" in capsys.readouterr().err


def test_solve_all_conditions(estimated, tmp_path):
    src = estimated / "tensors" / "F1_F1_TH"
    from battmdp.mdp import all_conditions

    for c in all_conditions():
        shutil.copytree(src, tmp_path / "tensors" / c.key)
    assert main(["solve", "--out", str(tmp_path)]) == 0
    assert len(PolicyStore.load(tmp_path / "policies.json")) == 18


def test_case_study_errors(tmp_path, capsys):
    assert main(["case-study", "--case", "5", "--out", str(tmp_path)]) == 1
    assert main(["case-study", "--case", "2", "--out", str(tmp_path)]) == 1
    assert main(["case-study", "--case", "4", "--out", str(tmp_path),
                 "--policy-store", str(tmp_path / "nope.json")]) == 1
    assert "needs --policy-store" in capsys.readouterr().err


def test_case_study_three_reports(tmp_path):
    assert main(["case-study", "--case", "3", "--out", str(tmp_path), "--decimate", "200"]) == 0
    d = tmp_path / "case3"
    assert sorted(p.name for p in d.iterdir() if p.is_dir()) == ["F1F1", "F1F3", "F3F3"]
    meta, header, rows = read_csv(d / "summary.csv")
    assert meta["case"] == "3" and [r[0] for r in rows] == ["F1F1", "F1F3", "F3F3"]
    assert "case study 3" in (d / "summary.txt").read_text()
    for name in ("branch_currents.csv", "eod_vs_rfd.csv", "actions.csv", "battery.csv", "epochs.csv"):
        assert (d / "F1F3" / name).exists()


def test_case_study_timeline_has_switch_column(tmp_path):
    from battmdp.export import action_timeline
    from battmdp.mdp import Action
    from battmdp.montecarlo import FlightScenario, FlightTrace, EpochRecord

    tr = FlightTrace(FlightScenario(health=("F2", "F1")))
    for t, a in enumerate([Action.UseBoth, Action.UseBatt2, Action.UseBatt2]):
        tr.epochs.append(EpochRecord(float(t), 0, int(a), (1, 1), 1, 1, 1, 1, (4, 4), (True, True)))
    cols, rows = action_timeline(tr)
    assert cols == ["t", "action", "switch"]
    assert [r[2] for r in rows] == [0, 1, 0]


def write(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


def test_flight_hover_only(tmp_path):
    scen = write(tmp_path / "s.json", {"health": ["F1", "F1"], "destination": [0, 0], "altitude": 0,
                                       "hover_time": 8})
    assert main(["flight", scen, "--out", str(tmp_path / "a")]) == 0
    assert main(["flight", scen, "--out", str(tmp_path / "b")]) == 0
    meta, header, rows = read_csv(tmp_path / "a" / "vehicle.csv")
    ref = np.array([[float(v) for v in r[4:7]] for r in rows])
    assert len(rows) == 8 * 200 and not ref.any()
    for name in ("battery.csv", "vehicle.csv", "epochs.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_flight_errors(tmp_path):
    pol = write(tmp_path / "p.json", {"health": ["F1", "F1"], "action_source": "policy"})
    assert main(["flight", pol, "--out", str(tmp_path)]) == 1
    bad = write(tmp_path / "b.json", {"health": ["F1"]})
    assert main(["flight", bad, "--out", str(tmp_path)]) == 1
    (tmp_path / "garbled.json").write_text("{not json")
    assert main(["flight", str(tmp_path / "garbled.json"), "--out", str(tmp_path)]) == 1
    assert main(["flight", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 1


def test_bad_config_and_usage(tmp_path):
    cfg = write(tmp_path / "c.json", {"mdp": {"weights": [0.5, 0.5, 0.5]}})
    assert main(["estimate", "--config", cfg, "--out", str(tmp_path), "--flights", "1"]) == 1
    assert main(["estimate", "--out", str(tmp_path), "--condition", "F9_F1_TH"]) == 1
    assert main(["estimate", "--out", str(tmp_path), "--flights", "0"]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["nonsense"])
    assert exc.value.code == 1


def test_config_override_is_applied(tmp_path):
    cfg = write(tmp_path / "c.json", {"simulation": {"flights": 1}})
    assert main(["estimate", "--config", cfg, "--out", str(tmp_path), "--condition", "F3_F3_TL"]) == 0
    info = json.loads((tmp_path / "estimate.json").read_text())
    assert info["conditions"]["F3_F3_TL"]["flights"] == 1
