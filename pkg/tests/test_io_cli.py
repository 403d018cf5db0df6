import csv
import io as stdio
import json

import numpy as np
import pytest

from silpose import io as fio
from silpose.benchmark import PairRecord, generate_sequence
from silpose.cli import RunConfig, main
from silpose.errors import InvalidArgumentError
from silpose.silhouette import BinaryMask, oriented_target

SMALL_MODEL = {"chains": 1, "bones_per_chain": 2, "cameras": 2, "image_size": [96, 96], "focal": 200.0}


class TestFormats:
    def test_model_roundtrip_bytes(self, small_model, tmp_path):
        fio.save_model(small_model, tmp_path / "m.json", tmp_path / "c.json")
        m2 = fio.load_model(tmp_path / "m.json", tmp_path / "c.json")
        fio.save_model(m2, tmp_path / "m2.json", tmp_path / "c2.json")
        assert (tmp_path / "m.json").read_bytes() == (tmp_path / "m2.json").read_bytes()
        assert (tmp_path / "c.json").read_bytes() == (tmp_path / "c2.json").read_bytes()
        assert np.array_equal(m2.mesh.weights, small_model.mesh.weights)
        assert np.array_equal(m2.mesh.rest_vertices, small_model.mesh.rest_vertices)
        assert np.array_equal(m2.cameras[1].K, small_model.cameras[1].K)

    def test_sequence_roundtrip(self, small_model):
        seq = generate_sequence(small_model, 5, 20)
        d = fio.sequence_to_json(seq, 5)
        again = fio.sequence_to_json(fio.sequence_from_json(json.loads(json.dumps(d))), 5)
        assert json.dumps(d) == json.dumps(again)

    def test_records_roundtrip(self):
        recs = [PairRecord(0, 1, "ch", 1 / 3, 0.1, 0.25, True), PairRecord(1, 5, "dch-thres", 2.0, 1e-17, 3.5, False)]
        text = fio.records_to_csv(recs)
        assert text.splitlines()[0] == "pair_id,gap,variant,initial_mm,final_mm,time_s,converged"
        assert fio.records_to_csv(fio.records_from_csv(text)) == text

    def test_records_malformed(self):
        with pytest.raises(InvalidArgumentError):
            fio.records_from_csv("")
        with pytest.raises(InvalidArgumentError):
            fio.records_from_csv("pair_id,gap\n1,x\n")

    def test_mask_pbm_roundtrip(self, rng):
        for w, h in ((13, 7), (16, 16), (1, 3)):
            m = BinaryMask(w, h, rng.random((h, w)) < 0.4)
            data = fio.mask_to_pbm(m)
            assert data.startswith(b"P4\n")
            back = fio.mask_from_pbm(data)
            assert np.array_equal(back.bits, m.bits)
            assert fio.mask_to_pbm(back) == data

    def test_contour_roundtrip(self):
        bits = np.zeros((12, 12), dtype=bool)
        bits[2:9, 3:10] = True
        oc = oriented_target(BinaryMask(12, 12, bits))
        text = fio.contour_to_csv(oc)
        assert fio.contour_to_csv(fio.contour_from_csv(text)) == text


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


class TestSynth:
    def test_default_and_determinism(self, tmp_path, capsys):
        assert main(["synth", "--out", str(tmp_path / "a")]) == 0
        out = capsys.readouterr().out
        assert "dof=16" in out and "cameras=4" in out and "frames=200" in out
        for f in ("model.json", "cameras.json", "sequence.json"):
            assert (tmp_path / "a" / f).exists()
        assert main(["synth", "--out", str(tmp_path / "b")]) == 0
        assert (tmp_path / "a" / "sequence.json").read_bytes() == (tmp_path / "b" / "sequence.json").read_bytes()
        m = fio.load_model(tmp_path / "a" / "model.json", tmp_path / "a" / "cameras.json")
        assert m.skeleton.dof_count == 16

    def test_bad_json(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"sequence": {"frames": }}')
        assert main(["synth", str(bad), "--out", str(tmp_path)]) == 2
        assert "line 1, column" in capsys.readouterr().err

    def test_unknown_model_key(self, tmp_path):
        spec = write(tmp_path / "s.json", {"model": {"fingers": 3}})
        assert main(["synth", spec, "--out", str(tmp_path)]) == 2


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    spec = d / "spec.json"
    spec.write_text(json.dumps({"model": SMALL_MODEL, "sequence": {"frames": 30, "seed": 2}}))
    assert main(["synth", str(spec), "--out", str(d)]) == 0
    return d


class TestMatch:
    def args(self, d, *extra):
        return ["match", "--model", str(d / "model.json"), "--cameras", str(d / "cameras.json"), *extra]

    def test_start_equals_target(self, synth_dir, tmp_path, capsys):
        seq = fio.load_json(synth_dir / "sequence.json")
        pose = write(tmp_path / "p.json", {"theta": seq["frames"][4]})
        out = tmp_path / "o"
        rc = main(self.args(synth_dir, "--start", pose, "--target", pose, "--out", str(out)))
        assert rc == 0
        text = capsys.readouterr().out
        assert "final_mm=0.0000" in text
        assert fio.load_json(out / "pose.json")["theta"] == pytest.approx(seq["frames"][4], abs=1e-12)
        assert (out / "target_0.pbm").exists() and (out / "final_1.pbm").exists()
        assert (out / "history.csv").read_text().startswith("iter,objective\n")

    def test_thres_echo(self, synth_dir, tmp_path, capsys):
        rc = main(
            self.args(synth_dir, "--sequence", str(synth_dir / "sequence.json"), "--start-frame", "3",
                      "--test-frame", "4", "--variant", "dch-thres", "--tau-deg", "22.5", "--mode", "signed",
                      "--out", str(tmp_path))
        )
        assert rc == 0
        line = next(s for s in capsys.readouterr().out.splitlines() if s.startswith("config "))
        cfg = json.loads(line[len("config "):])
        assert cfg["variant"] == "dch-thres" and cfg["tau_deg"] == 22.5 and cfg["mode"] == "signed"

    def test_dt3_echo(self, synth_dir, tmp_path, capsys):
        rc = main(
            self.args(synth_dir, "--sequence", str(synth_dir / "sequence.json"), "--start-frame", "3",
                      "--test-frame", "4", "--variant", "dch-dt3", "--lambda", "25", "--bins", "16",
                      "--out", str(tmp_path))
        )
        assert rc == 0
        line = next(s for s in capsys.readouterr().out.splitlines() if s.startswith("config "))
        cfg = json.loads(line[len("config "):])
        assert cfg["variant"] == "dch-dt3" and cfg["lambda"] == 25.0 and cfg["bins"] == 16

    def test_estimation_failure(self, synth_dir, tmp_path):
        seq = fio.load_json(synth_dir / "sequence.json")
        truth = seq["frames"][0]
        start = list(truth)
        start[1] += 25.0
        out = tmp_path / "o"
        rc = main(
            self.args(synth_dir, "--start", write(tmp_path / "s.json", {"theta": start}),
                      "--target", write(tmp_path / "t.json", {"theta": truth}),
                      "--variant", "dch-quant", "--bins", "8", "--K", "1", "--out", str(out))
        )
        assert rc == 3
        assert fio.load_json(out / "pose.json")["theta"] == start

    def test_missing_pose_args(self, synth_dir, tmp_path):
        assert main(self.args(synth_dir, "--out", str(tmp_path))) == 2


def bench_config(tmp_path, **over):
    cfg = {
        "model": SMALL_MODEL,
        "sequence": {"frames": 30, "seed": 1},
        "pairs": {"fraction": 0.1, "gaps": [1, 5], "seed": 3},
        "solver": {"max_outer_iterations": 2},
        "output": str(tmp_path / "out"),
    }
    cfg.update(over)
    return write(tmp_path / "run.json", cfg)


@pytest.fixture(scope="module")
def bench_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("bench")
    cfg = bench_config(d)
    assert main(["bench", cfg, "--timing"]) == 0
    assert main(["bench", cfg, "--out", str(d / "again"), "--jobs", "2"]) == 0
    return d


class TestBenchReport:
    def test_outputs(self, bench_run):
        out = bench_run / "out"
        rows = list(csv.DictReader(stdio.StringIO((out / "records.csv").read_text())))
        assert {r["variant"] for r in rows} == {"ch", "dch-thres", "dch-quant", "dch-quant2", "dch-dt3"}
        assert all(float(r["time_s"]) > 0 for r in rows)
        curves = list(csv.DictReader(stdio.StringIO((out / "curves.csv").read_text())))
        assert len({r["variant"] for r in curves}) == 5

    def test_rerun_identical_modulo_time(self, bench_run):
        def strip(p):
            rows = list(csv.reader(stdio.StringIO(p.read_text())))
            return [r[:5] + r[6:] for r in rows]

        assert strip(bench_run / "out" / "records.csv") == strip(bench_run / "again" / "records.csv")

    def test_report_matches_bench(self, bench_run, capsys):
        capsys.readouterr()
        assert main(["report", str(bench_run / "out" / "records.csv"), "--json"]) == 0
        rep = json.loads(capsys.readouterr().out)
        agg = fio.load_json(bench_run / "out" / "aggregate.json")
        assert rep["columns"] == agg["columns"] == ["1", "5", "All"]
        for name, entry in agg["table"].items():
            for col in agg["columns"]:
                for k in ("mean", "std"):
                    assert rep["table"][name][col][k] == pytest.approx(entry[col][k], abs=1e-9)
            assert rep["table"][name]["time_s"] == pytest.approx(entry["time_s"], abs=1e-9)
        for col in agg["columns"]:
            assert rep["initial"][col]["mean"] == pytest.approx(agg["initial"][col]["mean"], abs=1e-9)

    def test_report_table(self, bench_run, capsys):
        assert main(["report", str(bench_run / "out" / "records.csv")]) == 0
        out = capsys.readouterr().out
        assert "initial" in out and "dch-thres" in out and "All" in out

    def test_too_short_sequence(self, tmp_path, capsys):
        cfg = bench_config(tmp_path, sequence={"frames": 10}, pairs={"gaps": [1, 5, 10, 15]})
        assert main(["bench", cfg]) == 2
        assert "largest gap is 15" in capsys.readouterr().err

    def test_bad_variant(self, tmp_path):
        assert main(["bench", bench_config(tmp_path, variants=[{"variant": "nope"}])]) == 2

    def test_synth_ten_frames_then_bench_rejects(self, tmp_path):
        spec = write(tmp_path / "s.json", {"sequence": {"frames": 10}})
        assert main(["synth", spec, "--out", str(tmp_path)]) == 0
        with pytest.raises(InvalidArgumentError):
            RunConfig.from_json({"sequence": {"frames": 10}})

    def test_report_errors(self, tmp_path):
        empty = tmp_path / "e.csv"
        empty.write_text("")
        assert main(["report", str(empty)]) == 2
        header_only = tmp_path / "h.csv"
        header_only.write_text("pair_id,gap,variant,initial_mm,final_mm,time_s,converged\n")
        assert main(["report", str(header_only)]) == 2
        bad = tmp_path / "b.csv"
        bad.write_text("pair_id,gap,variant,initial_mm,final_mm,time_s,converged\n0,1,ch,x,1,1,1\n")
        assert main(["report", str(bad)]) == 2
        assert main(["report", str(tmp_path / "missing.csv")]) == 2

    def test_report_single_record(self, tmp_path, capsys):
        p = tmp_path / "one.csv"
        p.write_text("pair_id,gap,variant,initial_mm,final_mm,time_s,converged\n0,5,ch,3.0,1.5,0.2,1\n")
        assert main(["report", str(p), "--json"]) == 0
        rep = json.loads(capsys.readouterr().out)
        assert rep["table"]["ch"]["All"] == {"mean": 1.5, "std": 0.0, "count": 1}

    def test_runconfig_roundtrip(self):
        rc = RunConfig()
        assert RunConfig.from_json(rc.to_json()) == rc
        assert [v.name for v in rc.variants] == ["ch", "dch-thres", "dch-quant", "dch-quant2", "dch-dt3"]
