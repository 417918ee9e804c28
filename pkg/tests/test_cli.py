import json

import pytest

from lbo_detect.cli import EXIT_CONFIG, EXIT_DATA, EXIT_FS, EXIT_OK, EXIT_TRAIN, main
from lbo_detect.detection import EvaluationReport
from lbo_detect.io import load_json, read_csv

FAST_TRAIN = ["--epochs", "2", "--hidden", "4", "--dense", "2", "--batch-size", "256"]


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["generate", "--out", str(out), "--samples", "1500", "--seed", "3"]) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def lstm(data, tmp_path_factory):
    work = tmp_path_factory.mktemp("lstm")
    model = work / "model.json"
    assert main(["train", "--kind", "lstm", "--reference", str(data / "90slpm.json"), "--out", str(model),
                 "--seed", "1", *FAST_TRAIN]) == EXIT_OK
    thr = work / "thr.json"
    assert main(["calibrate", "--model", str(model), "--reference", str(data / "90slpm.json"),
                 "--out", str(thr)]) == EXIT_OK
    return work, model, thr


def _tests(data):
    return [str(data / f"{n}slpm.json") for n in (70, 75, 80, 85)]


def _edit_manifest(src, dst, fn):
    doc = json.loads(src.read_text())
    fn(doc)
    dst.write_text(json.dumps(doc))
    return dst


class TestGenerate:
    def test_manifests_and_run_record(self, data):
        assert sorted(p.name for p in data.glob("*slpm.json")) == [f"{n}slpm.json" for n in (70, 75, 80, 85, 90)]
        run = load_json(data / "run.json")
        assert run["verb"] == "generate" and run["resolved"]["base"]["seed"] == 3

    def test_deterministic_bytes(self, data, tmp_path):
        assert main(["generate", "--out", str(tmp_path), "--samples", "1500", "--seed", "3"]) == EXIT_OK
        for path in data.iterdir():
            if path.name != "run.json":
                assert (tmp_path / path.name).read_bytes() == path.read_bytes()

    def test_collision(self, data):
        assert main(["generate", "--out", str(data), "--samples", "1500"]) == EXIT_FS

    def test_bad_config(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("{not json")
        assert main(["generate", "--out", str(tmp_path / "o"), "--config", str(cfg)]) == EXIT_CONFIG

    def test_unknown_synth_key(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"synth": {"colour": "red"}}))
        assert main(["generate", "--out", str(tmp_path / "o"), "--config", str(cfg)]) == EXIT_CONFIG

    def test_missing_config_file(self, tmp_path):
        assert main(["generate", "--out", str(tmp_path / "o"), "--config", str(tmp_path / "no.json")]) == EXIT_FS


class TestTrain:
    def test_outputs(self, lstm):
        work, model, _ = lstm
        assert load_json(model)["kind"] == "lstm"
        assert len(read_csv(work / "model.history.csv")) == 2
        assert load_json(work / "model.run.json")["resolved"]["settings"]["train"]["epochs"] == 2

    def test_same_seed_same_bytes(self, data, lstm, tmp_path):
        _, model, _ = lstm
        again = tmp_path / "model.json"
        assert main(["train", "--kind", "lstm", "--reference", str(data / "90slpm.json"), "--out", str(again),
                     "--seed", "1", *FAST_TRAIN]) == EXIT_OK
        assert again.read_bytes() == model.read_bytes()

    def test_hmm_writes_bic(self, data, tmp_path):
        out = tmp_path / "hmm.json"
        assert main(["train", "--kind", "hmm", "--reference", str(data / "90slpm.json"), "--out", str(out),
                     "--n-min", "1", "--n-max", "2"]) == EXIT_OK
        rows = read_csv(tmp_path / "hmm.bic.csv")
        assert [r["n_states"] for r in rows] == ["1", "2"]

    def test_missing_blowout(self, data, tmp_path):
        ref = _edit_manifest(data / "90slpm.json", data / "noblowout.json",
                             lambda d: d.update(records=d["records"][1:]))
        try:
            assert main(["train", "--kind", "lstm", "--reference", str(ref), "--out", str(tmp_path / "m.json")]) == EXIT_TRAIN
        finally:
            ref.unlink()

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence(self, data, tmp_path):
        code = main(["train", "--kind", "rnn", "--reference", str(data / "90slpm.json"),
                     "--out", str(tmp_path / "m.json"), "--lr", "1e300", *FAST_TRAIN[:-2]])
        assert code == EXIT_TRAIN

    def test_existing_output(self, lstm, data):
        _, model, _ = lstm
        assert main(["train", "--kind", "lstm", "--reference", str(data / "90slpm.json"),
                     "--out", str(model)]) == EXIT_FS

    def test_missing_output_dir(self, data, tmp_path):
        assert main(["train", "--kind", "lstm", "--reference", str(data / "90slpm.json"),
                     "--out", str(tmp_path / "nope" / "m.json")]) == EXIT_FS

    def test_bad_hyperparameter(self, data, tmp_path):
        assert main(["train", "--kind", "lstm", "--reference", str(data / "90slpm.json"),
                     "--out", str(tmp_path / "m.json"), "--epochs", "0"]) == EXIT_CONFIG


class TestCalibrate:
    def test_threshold_matches_curve(self, lstm):
        work, _, thr = lstm
        doc = load_json(thr)
        curve = dict(zip(doc["curve"]["phi_ratios"], doc["curve"]["values"]))
        assert doc["threshold"]["value"] == curve[1.428]
        assert doc["threshold"]["direction"] == "below_is_unhealthy"
        rows = read_csv(work / "thr.curve.csv")
        ratios = [float(r["phi_ratio"]) for r in rows]
        assert ratios == sorted(ratios) and len(ratios) == 11

    def test_trans_error_without_model(self, data, tmp_path):
        out = tmp_path / "te.json"
        assert main(["calibrate", "--detector", "trans-error", "--reference", str(data / "90slpm.json"),
                     "--out", str(out)]) == EXIT_OK
        doc = load_json(out)
        assert doc["model"]["kind"] == "trans-error"
        assert doc["threshold"]["direction"] == "above_is_unhealthy"

    def test_model_required(self, data, tmp_path):
        assert main(["calibrate", "--reference", str(data / "90slpm.json"), "--out", str(tmp_path / "t.json")]) == EXIT_CONFIG

    def test_missing_transition(self, lstm, data, tmp_path):
        _, model, _ = lstm
        ref = _edit_manifest(data / "90slpm.json", data / "notransition.json",
                             lambda d: d.update(transition_ratio=1.4))
        try:
            assert main(["calibrate", "--model", str(model), "--reference", str(ref),
                         "--out", str(tmp_path / "t.json")]) == EXIT_DATA
        finally:
            ref.unlink()


class TestEvaluate:
    def test_report(self, lstm, data):
        work, model, thr = lstm
        out = work / "report.json"
        assert main(["evaluate", "--model", str(model), "--threshold", str(thr), "--tests", *_tests(data),
                     "--out", str(out)]) == EXIT_OK
        doc = load_json(out)
        assert len(doc["per_protocol"]) == 4
        assert EvaluationReport.from_dict(doc).to_dict() == doc
        assert 0.0 <= doc["overall_accuracy"] <= 1.0
        rows = read_csv(work / "report.curves.csv")
        assert len(rows) == 11 + 12 + 11 + 12

    def test_unlabelled(self, lstm, data, tmp_path):
        _, model, thr = lstm
        def strip(d):
            for rec in d["records"]:
                rec.pop("label", None)
        test = _edit_manifest(data / "80slpm.json", data / "unlabelled.json", strip)
        try:
            assert main(["evaluate", "--model", str(model), "--threshold", str(thr), "--tests", str(test),
                         "--out", str(tmp_path / "r.json")]) == EXIT_DATA
        finally:
            test.unlink()

    def test_not_a_threshold(self, lstm, data, tmp_path):
        _, model, _ = lstm
        assert main(["evaluate", "--model", str(model), "--threshold", str(model), "--tests", *_tests(data),
                     "--out", str(tmp_path / "r.json")]) == EXIT_CONFIG

    def test_missing_test_file(self, lstm, tmp_path):
        _, model, thr = lstm
        assert main(["evaluate", "--model", str(model), "--threshold", str(thr), "--tests",
                     str(tmp_path / "none.json"), "--out", str(tmp_path / "r.json")]) == EXIT_FS


class TestBench:
    def test_rows(self, lstm, data, tmp_path):
        _, model, _ = lstm
        out = tmp_path / "bench.csv"
        assert main(["bench", "--models", str(model), "--tests", str(data / "80slpm.json"),
                     "--out", str(out)]) == EXIT_OK
        rows = read_csv(out)
        assert len(rows) == 11 and all(r["detector"] == "lstm" for r in rows)
        assert all(float(r["median_s"]) > 0 for r in rows)
        assert load_json(tmp_path / "bench.run.json")["resolved"]["environment"]["timed_threads"] == 1

    def test_repeats_floor(self, lstm, data, tmp_path):
        _, model, _ = lstm
        assert main(["bench", "--models", str(model), "--tests", str(data / "80slpm.json"),
                     "--repeats", "2", "--out", str(tmp_path / "b.csv")]) == EXIT_CONFIG


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert capsys.readouterr().out.strip()
