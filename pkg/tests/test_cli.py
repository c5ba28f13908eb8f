import csv
import io
import json

import pytest

from sstdma import cli, selfcheck
from sstdma.topology import write_edge_list, grid


def rows(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


def write(tmp_path, text, name="spec.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_run_grid_experiment(tmp_path, capsys):
    spec = write(tmp_path, '[[experiment]]\nname = "g4"\ntopology = "grid:4x4"\nseeds = 16\n')
    out = tmp_path / "out.csv"
    assert cli.main(["run", str(spec), "-o", str(out)]) == 0
    table = rows(out)
    runs = [r for r in table if r["row"] == "run"]
    summary = [r for r in table if r["row"] == "summary"]
    assert len(runs) == 16 and len(summary) == 1
    assert all(r["convergence_frame"] != "" for r in runs)
    assert summary[0]["converged"] == "16"
    assert float(summary[0]["mean_convergence"]) == pytest.approx(
        sum(int(r["convergence_frame"]) for r in runs) / 16, abs=1e-3
    )
    assert "16/16 converged" in capsys.readouterr().out


def test_expected_nonconvergence(tmp_path):
    spec = write(
        tmp_path,
        """
[[experiment]]
name = "blocked"
topology = "star:5"
tau = 9
seeds = [0]
max_frames = 50
initial_condition = "star_blocker"
expected_nonconvergence = true
""",
    )
    out = tmp_path / "out.csv"
    assert cli.main(["run", str(spec), "-o", str(out)]) == 0
    run_row = rows(out)[0]
    assert run_row["convergence_frame"] == ""


def test_unexpected_nonconvergence_fails(tmp_path):
    spec = write(tmp_path, '[[experiment]]\ntopology = "grid:3x3"\nseeds = 1\nmax_frames = 2\n')
    assert cli.main(["run", str(spec), "-o", str(tmp_path / "o.csv")]) == 1


@pytest.mark.parametrize(
    "text",
    [
        "[[experiment]\n",
        "x = 1\n",
        '[[experiment]]\ntopology = "grid:3x3"\nseeds = []\n',
        '[[experiment]]\ntopology = "grid:3x3"\nfrobnicate = 1\n',
        '[[experiment]]\ntopology = "hexagon:3"\n',
        '[[experiment]]\ntopology = "grid:3x3"\njitter = 9\n',
        '[[experiment]]\ntopology = "grid:3x3"\nfaults = [{scope = "all"}]\n',
        '[[experiment]]\nname = "a"\ntopology = "grid:2x2"\n[[experiment]]\nname = "a"\ntopology = "grid:2x2"\n',
    ],
)
def test_malformed_spec_exits_2_without_output(tmp_path, text):
    spec = write(tmp_path, text)
    out = tmp_path / "out.csv"
    assert cli.main(["run", str(spec), "-o", str(out)]) == 2
    assert not out.exists()


def test_missing_spec_file(tmp_path):
    assert cli.main(["run", str(tmp_path / "nope.toml"), "-o", str(tmp_path / "o.csv")]) == 2


def test_csv_is_byte_stable_across_worker_counts(tmp_path, monkeypatch):
    spec = write(tmp_path, '[[experiment]]\ntopology = "grid:3x3"\nseeds = 3\njitter = 2\n')
    outs = []
    for jobs in ("1", "2"):
        monkeypatch.setenv(cli.JOBS_ENV, jobs)
        out = tmp_path / f"o{jobs}.csv"
        assert cli.main(["run", str(spec), "-o", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_file_topology_and_traces(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.JOBS_ENV, "1")
    (tmp_path / "g.txt").write_text(write_edge_list(grid(2, 3)))
    spec = write(tmp_path, '[[experiment]]\nname = "f"\ntopology = "file:g.txt"\nseeds = [5]\n')
    traces = tmp_path / "traces"
    assert cli.main(["run", str(spec), "-o", str(tmp_path / "o.csv"), "--trace-dir", str(traces)]) == 0
    lines = (traces / "f-seed5.ndjson").read_text().splitlines()
    assert json.loads(lines[0])["kind"] == "header"
    assert rows(tmp_path / "o.csv")[0]["n"] == "6"


@pytest.mark.slow
def test_grid_sweep(tmp_path):
    out = tmp_path / "sweep.csv"
    assert cli.main(["sweep", "--family", "grid", "--sizes", "2x2,3x3,4x4", "--seeds", "16", "-o", str(out)]) == 0
    summary = [r for r in rows(out) if r["row"] == "summary"]
    assert [r["n"] for r in summary] == ["4", "9", "16"]
    assert all(r["mean_convergence"] != "" for r in summary)


def test_unit_disk_sweep(tmp_path):
    out = tmp_path / "udg.csv"
    assert cli.main(["sweep", "--family", "unit_disk", "--sizes", "8,16", "--seeds", "3", "-o", str(out)]) == 0
    summary = [r for r in rows(out) if r["row"] == "summary"]
    assert [r["tau"] for r in summary] == ["64", "64"]
    assert all(r["mean_convergence"] != "" for r in summary)


@pytest.mark.parametrize("sizes", ["", " , ", "3by3"])
def test_bad_sweep_sizes(tmp_path, sizes):
    out = tmp_path / "s.csv"
    assert cli.main(["sweep", "--family", "grid", "--sizes", sizes, "-o", str(out)]) == 2
    assert not out.exists()


def test_bad_arguments_exit_2(capsys):
    assert cli.main(["sweep", "--family", "torus", "--sizes", "2", "-o", "x.csv"]) == 2
    assert cli.main([]) == 2


def test_check_passes():
    assert cli.main(["check", "-q"]) == 0


def test_check_catches_off_by_one_slot(monkeypatch):
    import sstdma.frame_info as fi

    real = fi.slot_of
    monkeypatch.setattr(fi, "slot_of", lambda t, p: (real(t, p) + 1) % p.tau)
    assert selfcheck.check_slot_coverage() is not None
    assert cli.main(["check", "-q"]) == 1


def test_check_catches_medium_without_hidden_nodes(monkeypatch):
    import sstdma.engine as engine

    def near_only(tx, receiver, others, graph):
        zone = graph.adj[receiver] | {receiver}
        return [o.sender for o in others if o.sender != tx.sender and o.sender in zone and o.overlaps(tx)]

    monkeypatch.setattr(engine, "interferers", near_only)
    assert selfcheck.check_blocker() is not None


def test_parse_topology():
    assert cli.parse_topology("grid:3x2").n == 6
    assert cli.parse_topology("star:4").n == 5
    assert cli.parse_topology("path:7").n == 7
    assert cli.parse_topology("complete:4").n == 4
    a = cli.parse_topology("unit_disk:12", seed=3)
    assert a == cli.parse_topology("unit_disk:12", seed=3) and a.is_connected()
    for bad in ("grid:3", "ring:5", "star:x", "file:/nonexistent"):
        with pytest.raises(cli.SpecError):
            cli.parse_topology(bad)


def test_jobs_limit(monkeypatch):
    monkeypatch.setenv(cli.JOBS_ENV, "3")
    assert cli.jobs_limit() == 3
    monkeypatch.setenv(cli.JOBS_ENV, "0")
    assert cli.jobs_limit() == 1
    monkeypatch.setenv(cli.JOBS_ENV, "many")
    assert cli.jobs_limit() >= 1
