"""Command-line entry points: files, manifests, determinism, exit codes."""

import csv
import json
from pathlib import Path

import numpy as np
import pytest

from lcavqe import circuits, cli


def _run(tmp_path, *argv, name="run"):
    out = tmp_path / name
    code = cli.main(list(argv) + ["--out", str(out)])
    return code, out


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def _read_json(path):
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# expr single


def test_expr_single_outputs(tmp_path):
    code, out = _run(
        tmp_path,
        "expr", "single", "--circuit", "2", "--qubits", "2",
        "--pairs", "150", "--seed", "3",
    )
    assert code == 0
    manifest = _read_json(out / "manifest.json")
    assert manifest["command"].startswith("lcavqe expr single")
    assert manifest["master_seed"] == 3
    base = circuits.load_templates()
    extra = circuits.load_templates(circuits.extra_library_path())
    assert manifest["library_digest"] == f"{base.digest}+{extra.digest}"
    names = {Path(p).name for p in manifest["outputs"]}
    assert names == {"results.csv", "histogram.csv"}
    rows = _read_csv(out / "results.csv")
    assert rows[0] == ["Q", "L_or_M", "d_kl", "seed"]
    assert len(rows) == 2
    assert rows[1][0] == "2"
    assert float(rows[1][2]) > 0.0
    hist = _read_csv(out / "histogram.csv")
    assert hist[0] == ["bin_lo", "bin_hi", "p_est", "p_haar"]
    assert len(hist) == 76  # default bin count
    assert all(len(r) == 4 for r in hist[1:])


def test_expr_single_byte_identical_reruns(tmp_path):
    args = (
        "expr", "single", "--circuit", "1", "--qubits", "2",
        "--pairs", "120", "--seed", "9",
    )
    code_a, out_a = _run(tmp_path, *args, name="a")
    code_b, out_b = _run(tmp_path, *args, name="b")
    assert code_a == code_b == 0
    for name in ("results.csv", "histogram.csv"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes()


def test_expr_single_missing_circuit_exits_2(tmp_path):
    code, _ = _run(tmp_path, "expr", "single", "--qubits", "2")
    assert code == 2


def test_unknown_flag_exits_2(tmp_path):
    code, _ = _run(tmp_path, "expr", "single", "--circuit", "1", "--qubit", "2")
    assert code == 2


def test_version_exits_0(capsys):
    assert cli.main(["--version"]) == 0
    assert "0.1.0" in capsys.readouterr().out


# ---------------------------------------------------------------------------
# expr lca


def test_expr_lca_members_report(tmp_path, monkeypatch):
    monkeypatch.setenv("LCA_THREADS", "2")
    code, out = _run(
        tmp_path,
        "expr", "lca", "--set", "1,2", "--qubits", "2",
        "--pairs", "120", "--members", "--seed", "4",
    )
    assert code == 0
    results = _read_json(out / "results.json")
    assert results["set"] == [1, 2]
    assert results["d_kl"] > 0.0
    assert set(results["members"]) == {"1", "2"}
    assert all(v > 0.0 for v in results["members"].values())
    assert "improvement_R" in results
    members = _read_csv(out / "members.csv")
    assert len(members) == 3


def test_expr_lca_thread_count_invariant(tmp_path):
    base = (
        "expr", "lca", "--set", "1,2", "--qubits", "2",
        "--pairs", "100", "--members", "--seed", "5",
    )
    code_a, out_a = _run(tmp_path, *base, "--threads", "1", name="t1")
    code_b, out_b = _run(tmp_path, *base, "--threads", "4", name="t4")
    assert code_a == code_b == 0
    assert (out_a / "results.csv").read_bytes() == (out_b / "results.csv").read_bytes()
    assert (out_a / "members.csv").read_bytes() == (out_b / "members.csv").read_bytes()
    a = _read_json(out_a / "results.json")
    b = _read_json(out_b / "results.json")
    assert a == b


def test_expr_lca_sampled_coefficients_differ(tmp_path):
    base = ("expr", "lca", "--set", "1,2", "--qubits", "2", "--pairs", "100")
    _, out_fixed = _run(tmp_path, *base, name="fixed")
    _, out_sampled = _run(tmp_path, *base, "--sample-c", name="sampled")
    fixed = _read_json(out_fixed / "results.json")
    sampled = _read_json(out_sampled / "results.json")
    assert fixed["d_kl"] != sampled["d_kl"]
    fixed_manifest = _read_json(out_fixed / "manifest.json")
    sampled_manifest = _read_json(out_sampled / "manifest.json")
    assert fixed_manifest["config"]["sample_c"] is False
    assert sampled_manifest["config"]["sample_c"] is True


# ---------------------------------------------------------------------------
# expr scans


def test_expr_depth_scan_outputs(tmp_path):
    code, out = _run(
        tmp_path,
        "expr", "depth-scan", "--circuit", "2", "--qubits", "2,3",
        "--layers", "1..3", "--pairs", "100",
    )
    assert code == 0
    rows = _read_csv(out / "scan.csv")
    assert rows[0] == ["Q", "L_or_M", "d_kl", "seed"]
    assert len(rows) == 7  # two qubit counts, three depths each
    results = _read_json(out / "results.json")
    assert results["circuit"] == 2
    assert set(results["l_th"]) == {"2", "3"}
    for q in ("2", "3"):
        assert results["l_th"][q] in (1, 2, 3)
        assert results["plateau"][q] > 0.0
    assert set(results["fit"]) == {"a", "b"}


def test_expr_count_scan_outputs(tmp_path):
    code, out = _run(
        tmp_path,
        "expr", "count-scan", "--qubits", "2", "--max-m", "3",
        "--trials", "2", "--pairs", "80",
    )
    assert code == 0
    rows = _read_csv(out / "scan.csv")
    assert rows[0] == ["Q", "L_or_M", "d_kl", "seed", "trial"]
    assert len(rows) == 7  # 2 trials x 3 member counts
    results = _read_json(out / "results.json")
    entry = results["2"]
    assert len(entry["m_c"]) == 2
    assert all(1 <= m <= 3 for m in entry["m_c"])
    assert entry["mean_m_c"] == sum(entry["m_c"]) / 2
    assert len(entry["saturated"]) == 2


# ---------------------------------------------------------------------------
# vqe run


def test_vqe_run_outputs(tmp_path):
    code, out = _run(
        tmp_path,
        "vqe", "run", "--model", "xy", "--n", "2", "--set", "1,2",
        "--lr", "0.05", "--steps", "6", "--seed", "2",
    )
    assert code == 0
    results = _read_json(out / "results.json")
    assert results["ground_energy"] < 0.0
    assert results["lca_final_energy"] >= results["ground_energy"] - 1e-9
    assert set(results["member_final_energies"]) == {"1", "2"}
    assert len(results["final_c"]) == 2
    trace = _read_csv(out / "trace_lca.csv")
    assert trace[0] == ["step", "energy", "grad_norm"]
    assert len(trace) == 8  # 6 steps + final row + header
    assert trace[-1][2] == ""  # no gradient after the last update
    for member in (1, 2):
        assert (out / f"trace_member_{member}.csv").exists()


def test_vqe_run_pcm_shots(tmp_path):
    code, out = _run(
        tmp_path,
        "vqe", "run", "--model", "xy", "--n", "2", "--set", "1,2",
        "--lr", "0.05", "--steps", "2", "--mode", "pcm", "--shots", "512",
    )
    assert code == 0
    results = _read_json(out / "results.json")
    assert results["mode"] == "pcm"
    assert results["shots"] == 512


def test_vqe_run_oversized_register_exits_2(tmp_path):
    code, _ = _run(
        tmp_path,
        "vqe", "run", "--model", "xy", "--n", "20", "--set", "1,2",
        "--steps", "1",
    )
    assert code == 2


def test_vqe_run_non_pauli_template_exits_2(tmp_path):
    code, _ = _run(
        tmp_path,
        "vqe", "run", "--model", "xy", "--n", "2", "--set", "1,3",
        "--steps", "1",
    )
    assert code == 2


def test_vqe_run_unknown_model_exits_2(tmp_path):
    code, _ = _run(
        tmp_path,
        "vqe", "run", "--model", "ising", "--n", "2", "--set", "1,2",
    )
    assert code == 2


# ---------------------------------------------------------------------------
# pcm validate


def test_pcm_validate_exact(tmp_path):
    code, out = _run(
        tmp_path,
        "pcm", "validate", "--set", "1,2", "--qubits", "2", "--trials", "2",
    )
    assert code == 0
    rows = _read_csv(out / "trials.csv")
    assert rows[0] == ["trial", "status", "max_dev_s", "max_dev_hm", "energy_dev", "envelope"]
    assert len(rows) == 3
    for row in rows[1:]:
        assert row[1] == "ok"
        assert float(row[2]) < 1e-8
        assert float(row[3]) < 1e-8
        assert float(row[4]) < 1e-8
    results = _read_json(out / "results.json")
    assert results["worst_deviation"] < 1e-8
    assert results["failed"] == 0
    assert results["trials"] == 2


def test_pcm_validate_adversarial(tmp_path):
    code, out = _run(
        tmp_path,
        "pcm", "validate", "--adversarial", "--qubits", "2", "--trials", "2",
    )
    assert code == 0
    rows = _read_csv(out / "trials.csv")
    assert all(row[1] == "gauge_undefined" for row in rows[1:])
    results = _read_json(out / "results.json")
    assert results["gauge_undefined"] == 2


def test_pcm_validate_shot_mode(tmp_path):
    code, out = _run(
        tmp_path,
        "pcm", "validate", "--set", "1,2", "--qubits", "2", "--trials", "1",
        "--shots", "2048",
    )
    assert code == 0
    rows = _read_csv(out / "trials.csv")
    assert float(rows[1][5]) == pytest.approx(1.0 / np.sqrt(2048))


# ---------------------------------------------------------------------------
# gates count


def test_gates_count_outputs(tmp_path):
    code, out = _run(
        tmp_path,
        "gates", "count", "--set", "2,15", "--qubits", "4..6",
        "--depth", "1..4",
    )
    assert code == 0
    rows = _read_csv(out / "grid.csv")
    assert rows[0] == ["n", "d", "ht_cost", "pcm_cost"]
    assert len(rows) == 13  # 3 qubit counts x 4 depths
    results = _read_json(out / "results.json")
    crossover = results["crossover_depth"]
    assert set(crossover) == {"4", "5", "6"}
    # interference cost grows faster with depth, so beyond the crossover
    # the projection route must stay cheaper
    for row in rows[1:]:
        n, d, ht, pcm_cost = (int(v) for v in row)
        if crossover[str(n)] is not None and d >= crossover[str(n)]:
            assert pcm_cost < ht


def test_gates_count_custom_cost_model(tmp_path):
    model = {
        "toffoli_2q_cost": 6,
        "mcphase": {str(n): (0 if n == 1 else 6 if n == 3 else 2 * n * n - 6 * n + 6 if n > 3 else 1) for n in range(1, 21)},
    }
    path = tmp_path / "model.json"
    path.write_text(json.dumps(model))
    code, out = _run(
        tmp_path,
        "gates", "count", "--set", "2,15", "--qubits", "4",
        "--depth", "1..2", "--cost-model", str(path),
    )
    assert code == 0
    rows = _read_csv(out / "grid.csv")
    assert len(rows) == 3


def test_gates_count_bad_cost_model_exits_2(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"toffoli_2q_cost": 5, "mcphase": {"3": 4}}))
    code, _ = _run(
        tmp_path,
        "gates", "count", "--set", "2,15", "--qubits", "4",
        "--depth", "1", "--cost-model", str(path),
    )
    assert code == 2


def test_gates_count_wrong_arity_exits_2(tmp_path):
    code, _ = _run(
        tmp_path, "gates", "count", "--set", "1,2,7", "--qubits", "4", "--depth", "1"
    )
    assert code == 2


# ---------------------------------------------------------------------------
# config files


def test_config_file_supplies_defaults(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"circuit": 1, "qubits": 2, "pairs": 90}))
    code, out = _run(
        tmp_path, "expr", "single", "--config", str(cfg), "--seed", "1"
    )
    assert code == 0
    manifest = _read_json(out / "manifest.json")
    assert manifest["config"]["pairs"] == 90
    assert manifest["config"]["circuit"] == 1


def test_config_file_flag_overrides_file(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"circuit": 1, "qubits": 2, "pairs": 90}))
    code, out = _run(
        tmp_path,
        "expr", "single", "--config", str(cfg), "--pairs", "110",
    )
    assert code == 0
    manifest = _read_json(out / "manifest.json")
    assert manifest["config"]["pairs"] == 110


def test_config_file_unknown_key_exits_2(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"circuit": 1, "qubits": 2, "bogus_knob": 7}))
    code, _ = _run(tmp_path, "expr", "single", "--config", str(cfg))
    assert code == 2
