"""Reproducible experiment runner.

Four experiment families share one inventory of flags: expressibility
estimates (``expr``), gradient-descent energy minimization (``vqe``),
measurement-protocol validation against the exact oracle (``pcm``), and
two-qubit-gate budget tables (``gates``).

Every run writes a manifest (command, resolved config, master seed, library
digest, version, timestamp, output paths) before any result file.  Tabular
results are CSV with repr-formatted floats, so identical (config, seed)
pairs produce byte-identical files regardless of the worker-pool size.
Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, expressibility, pcm, sim, vqe
from .circuits import (
    AnsatzLibrary,
    GateCostModel,
    cross_term_budget,
    extra_library_path,
    generator_of,
    load_templates,
)
from .errors import GaugeUndefinedError
from .lca import (
    LcaConfig,
    LcaParams,
    apply_gauge_frame,
    build_matrices,
    energy_from_matrices,
    random_params,
)

_VALIDATE_TOL = 1e-8


class _ConfigError(Exception):
    """Bad flags or config file; maps to exit code 2."""


@contextmanager
def _config_phase():
    """Reinterpret validation failures during setup as config errors."""
    try:
        yield
    except (ValueError, KeyError, TypeError) as exc:
        raise _ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# Small parsing and formatting helpers


def _parse_int_list(value, name):
    """Accept 7, "7", "4,6,8", "4..20", or a JSON list of ints."""
    if isinstance(value, (list, tuple)):
        out = [int(v) for v in value]
    else:
        text = str(value).strip()
        if ".." in text:
            lo, hi = text.split("..", 1)
            lo, hi = int(lo), int(hi)
            if hi < lo:
                raise _ConfigError(f"{name}: empty range {text!r}")
            out = list(range(lo, hi + 1))
        else:
            out = [int(p) for p in text.split(",") if p.strip() != ""]
    if not out:
        raise _ConfigError(f"{name}: no values given")
    return out


def _parse_one_int(value, name):
    values = _parse_int_list(value, name)
    if len(values) != 1:
        raise _ConfigError(f"{name}: expected a single value, got {values}")
    return values[0]


def _need(args, *names):
    for name in names:
        if getattr(args, name, None) is None:
            raise _ConfigError(f"missing required option --{name.replace('_', '-')}")


def _require_positive(value, name):
    if value is None or value <= 0:
        raise _ConfigError(f"{name} must be positive")
    return value


def _fmt(value):
    """CSV cell formatting: repr for floats so files are byte-stable."""
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _jsonable(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, complex):
        return [value.real, value.imag]
    raise TypeError(f"not JSON-serializable: {type(value)}")


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Run plumbing: library, manifest, worker pool


def _library():
    """The shipped template catalog plus the extra single-rotation entry."""
    base = load_templates()
    extra = load_templates(extra_library_path())
    entries = dict(base.entries)
    entries.update(extra.entries)
    return AnsatzLibrary(
        entries=entries,
        digest=f"{base.digest}+{extra.digest}",
        source=f"{base.source}+{extra.source}",
    )


def _out_dir(args):
    out = Path(getattr(args, "out", None) or "runs")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out, args, library, outputs):
    snapshot = {
        k: v
        for k, v in sorted(vars(args).items())
        if not k.startswith("_") and k != "func"
    }
    manifest = {
        "command": "lcavqe " + " ".join(getattr(args, "_argv", [])),
        "config": snapshot,
        "master_seed": getattr(args, "seed", None),
        "library_digest": library.digest if library is not None else None,
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "outputs": [str(out / name) for name in outputs],
    }
    _write_json(out / "manifest.json", manifest)
    return manifest


def _pool_size(args):
    requested = getattr(args, "threads", None)
    if requested is None:
        requested = 4
    requested = int(requested)
    cap = os.environ.get("LCA_THREADS")
    if cap:
        try:
            cap = int(cap)
        except ValueError as exc:
            raise _ConfigError(f"LCA_THREADS must be an integer: {exc}") from exc
        requested = min(requested, cap)
    return max(1, requested)


def _run_indexed(fn, items, workers):
    """Map fn over items with output order fixed by item index."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _binning(args):
    name = str(getattr(args, "binning", "unfixed")).lower()
    if name == "fixed":
        return expressibility.FIXED
    if name == "unfixed":
        return expressibility.UNFIXED
    raise _ConfigError(f"unknown binning {name!r} (expected fixed or unfixed)")


def _histogram_rows(result, n_qubits):
    hist = result.histogram
    p_haar = expressibility.haar_masses(hist, 2 ** n_qubits)
    p_est = hist.counts / hist.total
    return [
        (hist.edges[k], hist.edges[k + 1], p_est[k], p_haar[k])
        for k in range(len(hist.counts))
    ]


# ---------------------------------------------------------------------------
# expr family


def cmd_expr_single(args):
    with _config_phase():
        library = _library()
        _need(args, "circuit", "qubits")
        circuit = _parse_one_int(args.circuit, "circuit")
        n_qubits = _parse_one_int(args.qubits, "qubits")
        layers = _parse_one_int(args.layers, "layers")
        binning = _binning(args)
        _require_positive(args.pairs, "pairs")
        _require_positive(args.bins, "bins")
        if circuit not in library:
            raise _ConfigError(f"unknown circuit id {circuit}")
    out = _out_dir(args)
    _write_manifest(out, args, library, ["results.csv", "histogram.csv"])
    result = expressibility.expr_single(
        library, circuit, n_qubits, layers,
        pairs=args.pairs, binning=binning, n_bin=args.bins, seed=args.seed,
    )
    _write_csv(
        out / "results.csv",
        ("Q", "L_or_M", "d_kl", "seed"),
        [(n_qubits, layers, result.d_kl, args.seed)],
    )
    _write_csv(
        out / "histogram.csv",
        ("bin_lo", "bin_hi", "p_est", "p_haar"),
        _histogram_rows(result, n_qubits),
    )
    print(f"circuit {circuit} Q={n_qubits} L={layers}: d_kl={result.d_kl!r}")
    return 0


def cmd_expr_lca(args):
    with _config_phase():
        library = _library()
        _need(args, "set", "qubits")
        ids = _parse_int_list(args.set, "set")
        n_qubits = _parse_one_int(args.qubits, "qubits")
        layers = _parse_one_int(args.layers, "layers")
        binning = _binning(args)
        _require_positive(args.pairs, "pairs")
        _require_positive(args.bins, "bins")
        for i in ids:
            if i not in library:
                raise _ConfigError(f"unknown circuit id {i}")
        c_mode = (
            expressibility.SAMPLED if args.sample_c else expressibility.FIXED_ONES
        )
    outputs = ["results.csv", "histogram.csv", "results.json"]
    if args.members:
        outputs.append("members.csv")
    out = _out_dir(args)
    _write_manifest(out, args, library, outputs)
    result = expressibility.expr_lca(
        library, ids, n_qubits, layers,
        pairs=args.pairs, binning=binning, n_bin=args.bins,
        c_mode=c_mode, seed=args.seed,
    )
    _write_csv(
        out / "results.csv",
        ("Q", "L_or_M", "d_kl", "seed"),
        [(n_qubits, len(ids), result.d_kl, args.seed)],
    )
    _write_csv(
        out / "histogram.csv",
        ("bin_lo", "bin_hi", "p_est", "p_haar"),
        _histogram_rows(result, n_qubits),
    )
    summary = {
        "set": ids,
        "d_kl": result.d_kl,
        "improvement_R": None,
        "members": None,
    }
    if args.members:
        workers = _pool_size(args)

        def one_member(member_id):
            return expressibility.expr_single(
                library, member_id, n_qubits, layers,
                pairs=args.pairs, binning=binning, n_bin=args.bins,
                seed=args.seed,
            ).d_kl

        member_d_kls = _run_indexed(one_member, ids, workers)
        summary["members"] = dict(zip(map(str, ids), member_d_kls))
        summary["improvement_R"] = expressibility.improvement_R(
            result.d_kl, member_d_kls
        )
        _write_csv(
            out / "members.csv",
            ("Q", "circuit", "d_kl", "seed"),
            [(n_qubits, i, d, args.seed) for i, d in zip(ids, member_d_kls)],
        )
        print(f"improvement_R={summary['improvement_R']!r}")
    _write_json(out / "results.json", summary)
    print(f"set {ids} Q={n_qubits}: d_kl={result.d_kl!r}")
    return 0


def cmd_expr_depth_scan(args):
    with _config_phase():
        library = _library()
        _need(args, "circuit", "qubits")
        circuit = _parse_one_int(args.circuit, "circuit")
        qubit_list = _parse_int_list(args.qubits, "qubits")
        l_values = _parse_int_list(args.layers, "layers")
        binning = _binning(args)
        _require_positive(args.pairs, "pairs")
        _require_positive(args.bins, "bins")
        if circuit not in library:
            raise _ConfigError(f"unknown circuit id {circuit}")
    out = _out_dir(args)
    _write_manifest(out, args, library, ["scan.csv", "results.json"])
    workers = _pool_size(args)

    def one_scan(n_qubits):
        return expressibility.depth_scan(
            library, circuit, n_qubits, l_values,
            pairs=args.pairs, binning=binning, n_bin=args.bins, seed=args.seed,
        )

    scans = _run_indexed(one_scan, qubit_list, workers)
    rows = []
    for scan in scans:
        for layers, d_kl in zip(scan.l_values, scan.d_kls):
            rows.append((scan.n_qubits, layers, d_kl, args.seed))
    _write_csv(out / "scan.csv", ("Q", "L_or_M", "d_kl", "seed"), rows)
    summary = {
        "circuit": circuit,
        "l_th": {str(s.n_qubits): s.l_th for s in scans},
        "plateau": {str(s.n_qubits): s.plateau for s in scans},
        "fit": None,
    }
    if len(set(qubit_list)) >= 2:
        a, b = expressibility.fit_threshold(scans)
        summary["fit"] = {"a": a, "b": b}
        print(f"fit: L_th = {a!r} * Q + {b!r}")
    for scan in scans:
        print(f"Q={scan.n_qubits}: L_th={scan.l_th} plateau={scan.plateau!r}")
    _write_json(out / "results.json", summary)
    return 0


def cmd_expr_count_scan(args):
    with _config_phase():
        library = _library()
        _need(args, "qubits")
        qubit_list = _parse_int_list(args.qubits, "qubits")
        layers = _parse_one_int(args.layers, "layers")
        binning = _binning(args)
        _require_positive(args.pairs, "pairs")
        _require_positive(args.bins, "bins")
        _require_positive(args.max_m, "max-m")
        _require_positive(args.trials, "trials")
    out = _out_dir(args)
    _write_manifest(out, args, library, ["scan.csv", "results.json"])
    workers = _pool_size(args)

    def one_scan(n_qubits):
        return expressibility.count_scan(
            library, n_qubits, max_m=args.max_m, trials=args.trials,
            pairs=args.pairs, binning=binning, n_bin=args.bins,
            layers=layers, seed=args.seed, eps_sat=args.eps_sat,
        )

    scans = _run_indexed(one_scan, qubit_list, workers)
    rows = []
    for scan in scans:
        for t in range(len(scan.m_c)):
            for k, m in enumerate(scan.m_values):
                rows.append((scan.n_qubits, m, scan.d_kls[t, k], args.seed, t))
    _write_csv(out / "scan.csv", ("Q", "L_or_M", "d_kl", "seed", "trial"), rows)
    summary = {}
    for scan in scans:
        summary[str(scan.n_qubits)] = {
            "m_c": [int(v) for v in scan.m_c],
            "saturated": [bool(v) for v in scan.saturated],
            "mean_m_c": float(np.mean(scan.m_c)),
        }
        print(
            f"Q={scan.n_qubits}: mean M_c={float(np.mean(scan.m_c))!r} "
            f"saturated={int(np.sum(scan.saturated))}/{len(scan.saturated)}"
        )
    _write_json(out / "results.json", summary)
    return 0


# ---------------------------------------------------------------------------
# vqe family


def cmd_vqe_run(args):
    with _config_phase():
        library = _library()
        _need(args, "set", "n")
        if args.model != "xy":
            raise _ConfigError(f"unknown model {args.model!r}")
        ids = _parse_int_list(args.set, "set")
        n = _parse_one_int(args.n, "n")
        layers = _parse_one_int(args.layers, "layers")
        mode = str(args.mode).lower()
        if mode not in (vqe.EXACT, vqe.PCM):
            raise _ConfigError(f"unknown mode {args.mode!r}")
        _require_positive(args.steps, "steps")
        _require_positive(args.lr, "lr")
        if args.shots is not None:
            _require_positive(args.shots, "shots")
        for i in ids:
            if i not in library:
                raise _ConfigError(f"unknown circuit id {i}")
        model = vqe.XYModelSpec(
            n_sites=n, j_xx=args.j_xx, j_yy=args.j_yy, j_x=args.j_x, j_z=args.j_z
        )
        hamiltonian = vqe.xy_hamiltonian(model)
        ground = sim.min_eigenvalue(hamiltonian, n)
        config = LcaConfig.from_library(library, ids, n, layers)
        for template in config.members:
            for gate in template.circuit().gates:
                if gate.slot is not None:
                    generator_of(gate)
        optimizer = vqe.OptimizerConfig(
            learning_rate=args.lr, steps=args.steps, mode=mode, seed=args.seed
        )
        settings = None
        if mode == vqe.PCM:
            settings = pcm.PcmSettings(shots=args.shots, seed=args.seed)
    trace_names = ["trace_lca.csv"] + [f"trace_member_{i}.csv" for i in ids]
    out = _out_dir(args)
    _write_manifest(out, args, library, trace_names + ["results.json"])
    workers = _pool_size(args)

    def train_one(member_ids):
        cfg = LcaConfig.from_library(library, member_ids, n, layers)
        return vqe.train(cfg, hamiltonian, optimizer, pcm_settings=settings)

    traces = _run_indexed(train_one, [ids] + [[i] for i in ids], workers)
    lca_trace, member_traces = traces[0], traces[1:]
    for name, trace in zip(trace_names, traces):
        rows = [
            (t, trace.energies[t], trace.grad_norms[t])
            for t in range(len(trace.grad_norms))
        ]
        rows.append((len(trace.grad_norms), trace.energies[-1], ""))
        _write_csv(out / name, ("step", "energy", "grad_norm"), rows)
    member_finals = {
        str(i): t.final_energy for i, t in zip(ids, member_traces)
    }
    gain = vqe.improvement_L(
        lca_trace.final_energy, list(member_finals.values()), ground
    )
    summary = {
        "model": args.model,
        "n": n,
        "set": ids,
        "mode": mode,
        "shots": args.shots,
        "learning_rate": args.lr,
        "steps": args.steps,
        "seed": args.seed,
        "ground_energy": ground,
        "lca_final_energy": lca_trace.final_energy,
        "member_final_energies": member_finals,
        "improvement_L": gain,
        "final_c": [[v.real, v.imag] for v in lca_trace.final_params.c],
        "final_thetas": [list(map(float, th)) for th in lca_trace.final_params.thetas],
    }
    _write_json(out / "results.json", summary)
    print(f"ground={ground!r}")
    print(f"lca final={lca_trace.final_energy!r}")
    for i, t in zip(ids, member_traces):
        print(f"member {i} final={t.final_energy!r}")
    print(f"improvement_L={gain!r}")
    return 0


# ---------------------------------------------------------------------------
# pcm family


def _adversarial_params(config, rng):
    """Member states orthogonal by construction: |0..0> against a flipped
    basis state (rx column at pi, any rz phases, entanglers permitting)."""
    thetas = []
    for k, template in enumerate(config.members):
        angles = np.zeros(template.param_count)
        if k == 1:
            q = template.n_qubits
            angles[:q] = np.pi
            angles[q:] = rng.uniform(0.0, 2.0 * np.pi, template.param_count - q)
        thetas.append(angles)
    return LcaParams(c=np.ones(config.size, dtype=complex), thetas=thetas)


def cmd_pcm_validate(args):
    with _config_phase():
        library = _library()
        _need(args, "qubits")
        n_qubits = _parse_one_int(args.qubits, "qubits")
        layers = _parse_one_int(args.layers, "layers")
        _require_positive(args.trials, "trials")
        if args.shots is not None:
            _require_positive(args.shots, "shots")
        if args.adversarial:
            ids = [1, 2]
        else:
            _need(args, "set")
            ids = _parse_int_list(args.set, "set")
            for i in ids:
                if i not in library:
                    raise _ConfigError(f"unknown circuit id {i}")
        config = LcaConfig.from_library(library, ids, n_qubits, layers)
        model = vqe.XYModelSpec(n_sites=n_qubits)
        hamiltonian = vqe.xy_hamiltonian(model)
    out = _out_dir(args)
    _write_manifest(out, args, library, ["trials.csv", "results.json"])
    workers = _pool_size(args)
    envelope = 0.0 if args.shots is None else 1.0 / np.sqrt(args.shots)

    def one_trial(t):
        rng = sim.rng_stream(args.seed, 205, t)
        if args.adversarial:
            params = _adversarial_params(config, rng)
        else:
            params = random_params(config, rng)
            c = rng.uniform(-1.0, 1.0, config.size) + 1j * rng.uniform(
                -1.0, 1.0, config.size
            )
            params = LcaParams(c=c, thetas=params.thetas)
        settings = pcm.PcmSettings(shots=args.shots, seed=int(args.seed) + t)
        try:
            matrices, _ = pcm.pcm_matrices(config, params, hamiltonian, settings)
        except GaugeUndefinedError:
            return (t, "gauge_undefined", "", "", "", envelope)
        exact = build_matrices(config, params, hamiltonian)
        alphas = pcm.gauge_alphas(config, params, anchor=settings.anchor)
        framed = apply_gauge_frame(exact, alphas)
        dev_s = float(np.max(np.abs(matrices.S - framed.S)))
        dev_h = float(np.max(np.abs(matrices.Hm - framed.Hm)))
        dev_e = abs(
            energy_from_matrices(matrices, params.c)
            - energy_from_matrices(framed, params.c)
        )
        return (t, "ok", dev_s, dev_h, dev_e, envelope)

    rows = _run_indexed(one_trial, list(range(args.trials)), workers)
    _write_csv(
        out / "trials.csv",
        ("trial", "status", "max_dev_s", "max_dev_hm", "energy_dev", "envelope"),
        rows,
    )
    ok_rows = [r for r in rows if r[1] == "ok"]
    undefined = len(rows) - len(ok_rows)
    worst = max((max(r[2], r[3], r[4]) for r in ok_rows), default=0.0)
    failed = args.shots is None and worst > _VALIDATE_TOL
    summary = {
        "trials": args.trials,
        "gauge_undefined": undefined,
        "worst_deviation": worst,
        "tolerance": _VALIDATE_TOL if args.shots is None else None,
        "envelope": envelope if args.shots is not None else None,
        "failed": bool(failed),
    }
    _write_json(out / "results.json", summary)
    print(f"trials={args.trials} gauge_undefined={undefined} worst={worst!r}")
    if args.shots is not None:
        print(f"shot envelope 1/sqrt(shots)={envelope!r} (informational)")
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# gates family


def _cost_model(path):
    if path is None:
        return GateCostModel()
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise ValueError("cost model file must hold a JSON object")
    toffoli = int(doc.get("toffoli_2q_cost", 5))
    table = doc.get("mcphase")
    if table is None:
        return GateCostModel(toffoli_2q_cost=toffoli)
    lut = {int(k): int(v) for k, v in table.items()}

    def mcphase(n):
        if n not in lut:
            raise ValueError(f"mcphase table has no entry for n={n}")
        return lut[n]

    return GateCostModel(toffoli_2q_cost=toffoli, mcphase_cost=mcphase)


def cmd_gates_count(args):
    with _config_phase():
        library = _library()
        _need(args, "set", "qubits", "depth")
        ids = _parse_int_list(args.set, "set")
        if len(ids) != 2:
            raise _ConfigError("gates count compares exactly two circuits")
        qubit_list = _parse_int_list(args.qubits, "qubits")
        depth_list = _parse_int_list(args.depth, "depth")
        for i in ids:
            if i not in library:
                raise _ConfigError(f"unknown circuit id {i}")
        try:
            model = _cost_model(args.cost_model)
        except OSError as exc:
            raise _ConfigError(f"cannot read cost model: {exc}") from exc
    out = _out_dir(args)
    _write_manifest(out, args, library, ["grid.csv", "results.json"])
    workers = _pool_size(args)

    def one_row(item):
        n, d = item
        t_i = library.instantiate(ids[0], n, d)
        t_j = library.instantiate(ids[1], n, d)
        ht, pc = cross_term_budget(t_i, t_j, model)
        return (n, d, ht, pc)

    grid = [(n, d) for n in qubit_list for d in depth_list]
    rows = _run_indexed(one_row, grid, workers)
    _write_csv(out / "grid.csv", ("n", "d", "ht_cost", "pcm_cost"), rows)
    crossover = {}
    for n in qubit_list:
        cheaper = [d for (rn, d, ht, pc) in rows if rn == n and pc < ht]
        crossover[str(n)] = min(cheaper) if cheaper else None
    _write_json(
        out / "results.json",
        {"set": ids, "crossover_depth": crossover},
    )
    for n in qubit_list:
        print(f"n={n}: pcm cheaper from d={crossover[str(n)]}")
    return 0


# ---------------------------------------------------------------------------
# Parser


def _add(parser, overrides, *names, **kw):
    dest = kw.get("dest") or names[0].lstrip("-").replace("-", "_")
    if dest in overrides:
        kw["default"] = overrides[dest]
    parser.add_argument(*names, **kw)


def _add_common(parser, overrides):
    _add(parser, overrides, "--out", default=None, help="output directory (default: runs)")
    _add(parser, overrides, "--seed", type=int, default=0, help="master seed")
    _add(parser, overrides, "--threads", type=int, default=None,
         help="worker pool size (capped by LCA_THREADS)")
    _add(parser, overrides, "--config", default=None,
         help="JSON file of flag defaults (keys mirror flag names)")


def _add_binning(parser, overrides):
    _add(parser, overrides, "--pairs", type=int, default=5000)
    _add(parser, overrides, "--bins", type=int, default=75)
    _add(parser, overrides, "--binning", default="unfixed",
         help="fixed or unfixed bin edges")


def _build_parser(overrides):
    parser = argparse.ArgumentParser(
        prog="lcavqe",
        description="Expressibility, combined-ansatz VQE, and measurement-protocol experiments.",
        allow_abbrev=False,
    )
    parser.add_argument("--version", action="version", version=__version__)
    families = parser.add_subparsers(dest="family", required=True)

    expr = families.add_parser("expr", help="expressibility experiments", allow_abbrev=False)
    expr_sub = expr.add_subparsers(dest="action", required=True)

    p = expr_sub.add_parser("single", help="one template's expressibility", allow_abbrev=False)
    _add(p, overrides, "--circuit", default=None, help="template id")
    _add(p, overrides, "--qubits", default=None)
    _add(p, overrides, "--layers", default=1)
    _add_binning(p, overrides)
    _add_common(p, overrides)
    p.set_defaults(func=cmd_expr_single)

    p = expr_sub.add_parser("lca", help="combined-ansatz expressibility", allow_abbrev=False)
    _add(p, overrides, "--set", default=None, help="comma-separated template ids")
    _add(p, overrides, "--qubits", default=None)
    _add(p, overrides, "--layers", default=1)
    _add(p, overrides, "--members", action="store_true",
         help="also run each member and report improvement_R")
    _add(p, overrides, "--sample-c", action="store_true",
         help="sample combination coefficients instead of fixing them at one")
    _add_binning(p, overrides)
    _add_common(p, overrides)
    p.set_defaults(func=cmd_expr_lca)

    p = expr_sub.add_parser("depth-scan", help="expressibility versus depth", allow_abbrev=False)
    _add(p, overrides, "--circuit", default=None)
    _add(p, overrides, "--qubits", default=None, help="e.g. 4,6")
    _add(p, overrides, "--layers", default="1..8", help="e.g. 1..8")
    _add_binning(p, overrides)
    _add_common(p, overrides)
    p.set_defaults(func=cmd_expr_depth_scan)

    p = expr_sub.add_parser("count-scan", help="expressibility versus member count", allow_abbrev=False)
    _add(p, overrides, "--qubits", default=None, help="e.g. 4,6,8")
    _add(p, overrides, "--max-m", type=int, default=14)
    _add(p, overrides, "--trials", type=int, default=5)
    _add(p, overrides, "--layers", default=1)
    _add(p, overrides, "--eps-sat", type=float, default=0.05)
    _add_binning(p, overrides)
    _add_common(p, overrides)
    p.set_defaults(func=cmd_expr_count_scan)

    vqe_p = families.add_parser("vqe", help="variational energy minimization", allow_abbrev=False)
    vqe_sub = vqe_p.add_subparsers(dest="action", required=True)

    p = vqe_sub.add_parser("run", help="train a combined ansatz and its members", allow_abbrev=False)
    _add(p, overrides, "--model", default="xy")
    _add(p, overrides, "--n", default=None, help="number of sites/qubits")
    _add(p, overrides, "--set", default=None)
    _add(p, overrides, "--layers", default=1)
    _add(p, overrides, "--lr", type=float, default=0.05)
    _add(p, overrides, "--steps", type=int, default=2000)
    _add(p, overrides, "--mode", default="exact", help="exact or pcm")
    _add(p, overrides, "--shots", type=int, default=None)
    _add(p, overrides, "--j-xx", type=float, default=1.0)
    _add(p, overrides, "--j-yy", type=float, default=1.0)
    _add(p, overrides, "--j-x", type=float, default=0.5)
    _add(p, overrides, "--j-z", type=float, default=0.5)
    _add_common(p, overrides)
    p.set_defaults(func=cmd_vqe_run)

    pcm_p = families.add_parser("pcm", help="measurement-protocol validation", allow_abbrev=False)
    pcm_sub = pcm_p.add_subparsers(dest="action", required=True)

    p = pcm_sub.add_parser("validate", help="protocol versus exact oracle", allow_abbrev=False)
    _add(p, overrides, "--qubits", default=None)
    _add(p, overrides, "--set", default=None)
    _add(p, overrides, "--layers", default=1)
    _add(p, overrides, "--trials", type=int, default=50)
    _add(p, overrides, "--shots", type=int, default=None)
    _add(p, overrides, "--adversarial", action="store_true",
         help="orthogonal member states; counts gauge-undefined trials")
    _add_common(p, overrides)
    p.set_defaults(func=cmd_pcm_validate)

    gates = families.add_parser("gates", help="two-qubit-gate budgets", allow_abbrev=False)
    gates_sub = gates.add_subparsers(dest="action", required=True)

    p = gates_sub.add_parser("count", help="budget grid for a circuit pair", allow_abbrev=False)
    _add(p, overrides, "--set", default=None, help="two template ids")
    _add(p, overrides, "--qubits", default=None, help="e.g. 4..20")
    _add(p, overrides, "--depth", default=None, help="e.g. 1..6")
    _add(p, overrides, "--cost-model", default=None,
         help="JSON with toffoli_2q_cost and an mcphase table")
    _add_common(p, overrides)
    p.set_defaults(func=cmd_gates_count)

    return parser


def main(argv=None):
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    pre = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    overrides = {}
    if known.config is not None:
        try:
            loaded = json.loads(Path(known.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            print(f"config error: cannot load {known.config}: {exc}", file=sys.stderr)
            return 2
        if not isinstance(loaded, dict):
            print("config error: config file must hold a JSON object", file=sys.stderr)
            return 2
        overrides = {str(k).replace("-", "_"): v for k, v in loaded.items()}
    parser = _build_parser(overrides)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    unknown = sorted(set(overrides) - set(vars(args)))
    if unknown:
        print(f"config error: unknown config keys {unknown}", file=sys.stderr)
        return 2
    args._argv = argv
    try:
        return args.func(args)
    except _ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
