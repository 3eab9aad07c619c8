"""Named experiments: config validation, runners and artifact emission."""
from __future__ import annotations

import json
import re
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .bloch import (bch_conjugate, bloch_from_rho, fig_header, fig_rows, operator_from_vector,
                    qubit_reverse_hamiltonian, qubit_reverse_jump, rho_from_bloch,
                    vector_from_operator)
from .codes import (CodeBasis, DriveTerm, NoiseModel, OptimizerConfig, average_fidelity,
                    five_qubit_code, noise_channel, optimize_code, petz_entanglement_fidelity,
                    strobe_run)
from .hardware import hardware_sweep
from .expm import expm
from .io import canonical_hash, file_hash, read_csv, write_csv, write_json, write_trajectory_csv
from .linalg import SM, SP, SX, SY, SZ
from .lindblad import IntegrationError
from .petz import ForwardSpec, build_reverse_generator, correction_hamiltonian, reversal_experiment, reverse_jumps

EXPERIMENTS = ("reverse-qubit", "reverse-unitary", "hardware-sweep", "code-optimize", "strobe",
               "bloch-check")

_REQUIRED = object()


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        where = f"{path}:{line}: " if path and line else (f"line {line}: " if line else "")
        super().__init__(where + message)
        self.line = line


# ---------------------------------------------------------------------------
# schema validation


@dataclass(frozen=True)
class Field:
    kind: str                      # number, int, bool, str, numbers, object, objects
    default: Any = _REQUIRED
    choices: tuple | None = None
    minimum: float | None = None
    exclusive_min: bool = False
    schema: dict | None = None     # nested fields for object / objects
    length: int | None = None      # fixed length for numbers


def _line_of(text: str, path: tuple) -> int | None:
    pos = 0
    found = False
    for comp in path:
        if isinstance(comp, int):
            continue
        m = re.search(r'"%s"\s*:' % re.escape(comp), text[pos:])
        if not m:
            break
        pos += m.start()
        found = True
    return text.count("\n", 0, pos) + 1 if found else None


class _Validator:
    def __init__(self, text: str, source: str | None):
        self.text = text
        self.source = source

    def fail(self, message: str, path: tuple):
        label = ".".join(str(p) for p in path) or "<root>"
        raise ConfigError(f"{label}: {message}", _line_of(self.text, path), self.source)

    def object(self, obj, schema: dict, path: tuple = ()) -> dict:
        if not isinstance(obj, dict):
            self.fail("expected a JSON object", path)
        for key in obj:
            if key not in schema:
                self.fail(f"unknown key {key!r} (allowed: {', '.join(sorted(schema))})", path + (key,))
        out = {}
        for key, spec in schema.items():
            if key not in obj:
                if spec.default is _REQUIRED:
                    self.fail(f"missing required key {key!r}", path)
                out[key] = (self.object(spec.default, spec.schema, path + (key,))
                            if spec.kind == "object" else spec.default)
                continue
            out[key] = self.value(obj[key], spec, path + (key,))
        return out

    def value(self, v, spec: Field, path: tuple):
        kind = spec.kind
        if kind == "bool":
            if not isinstance(v, bool):
                self.fail("expected true or false", path)
            return v
        if kind == "str":
            if not isinstance(v, str):
                self.fail("expected a string", path)
            if spec.choices and v not in spec.choices:
                self.fail(f"expected one of {list(spec.choices)}, got {v!r}", path)
            return v
        if kind in ("number", "int"):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                self.fail(f"expected a {'integer' if kind == 'int' else 'number'}", path)
            if kind == "int" and not float(v).is_integer():
                self.fail("expected an integer", path)
            v = int(v) if kind == "int" else float(v)
            if not np.isfinite(v):
                self.fail("expected a finite number", path)
            if spec.minimum is not None:
                if v < spec.minimum or (spec.exclusive_min and v == spec.minimum):
                    op = ">" if spec.exclusive_min else ">="
                    self.fail(f"must be {op} {spec.minimum:g}", path)
            return v
        if kind == "numbers":
            if not isinstance(v, list) or not v:
                self.fail("expected a non-empty list of numbers", path)
            if spec.length is not None and len(v) != spec.length:
                self.fail(f"expected {spec.length} numbers", path)
            item = Field("number", minimum=spec.minimum, exclusive_min=spec.exclusive_min)
            return [self.value(x, item, path + (i,)) for i, x in enumerate(v)]
        if kind == "object":
            return self.object(v, spec.schema, path)
        if kind == "objects":
            if not isinstance(v, list):
                self.fail("expected a list of objects", path)
            return [self.object(x, spec.schema, path + (i,)) for i, x in enumerate(v)]
        raise AssertionError(kind)


def parse_config(text: str, schema: dict, source: str | None = None) -> dict:
    try:
        raw = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (column {exc.colno})", exc.lineno, source) from None
    return _Validator(text, source).object(raw, schema)


# ---------------------------------------------------------------------------
# schemas

_JUMP_OPS = {"sigma_minus": SM, "sigma_plus": SP, "sigma_x": SX, "sigma_y": SY, "sigma_z": SZ}

QUBIT_SCHEMA = {
    "h": Field("numbers", [0.3, 0.0, 1.0], length=3),
    "jumps": Field("objects", [{"op": "sigma_minus", "rate": 0.4}], schema={
        "op": Field("str", choices=tuple(_JUMP_OPS)),
        "rate": Field("number", minimum=0.0),
    }),
    "initial": Field("numbers", [0.0, 0.0, 1.0], length=3),
    "tau": Field("number", 10.0, minimum=0.0, exclusive_min=True),
    "steps": Field("int", 10_000, minimum=2),
    "eps": Field("number", 1e-14, minimum=0.0, exclusive_min=True),
}

NOISE_SCHEMA = {
    "kind": Field("str", choices=("amplitude_damping", "dephasing", "correlated", "composite")),
    "g1": Field("number", minimum=0.0),
    "g2": Field("number", minimum=0.0),
    "n": Field("int", minimum=1),
    "both_orderings": Field("bool", True),
}

OPTIMIZER_SCHEMA = {
    "restarts": Field("int", 4, minimum=1),
    "iters": Field("int", 400, minimum=1),
    "max_evaluations": Field("int", 20_000, minimum=1),
    "init_scale": Field("number", 0.3, minimum=0.0, exclusive_min=True),
    "method": Field("str", "lbfgs", choices=("lbfgs", "nelder-mead")),
    "gradient": Field("str", "analytic", choices=("analytic", "central")),
}

SCHEMAS = {
    "reverse-qubit": {**QUBIT_SCHEMA,
                      "mode": Field("str", "full", choices=("full", "hamiltonian_only"))},
    "reverse-unitary": dict(QUBIT_SCHEMA),
    "hardware-sweep": {**QUBIT_SCHEMA,
                       "steps": Field("int", 2000, minimum=2),
                       "eps": Field("number", 1e-12, minimum=0.0, exclusive_min=True),
                       "gammas": Field("numbers", [10.0, 100.0, 1000.0, 10000.0], minimum=0.0,
                                       exclusive_min=True),
                       "xis": Field("numbers", [1.0], minimum=1.0),
                       "residual": Field("bool", False),
                       "step_per_decay": Field("number", 0.1, minimum=0.0, exclusive_min=True)},
    "code-optimize": {
        "noise": Field("object", schema=NOISE_SCHEMA),
        "dt": Field("number", 0.02, minimum=0.0),
        "d": Field("int", 2, minimum=1),
        "eps": Field("number", 1e-10, minimum=0.0, exclusive_min=True),
        "optimizer": Field("object", {}, schema=OPTIMIZER_SCHEMA),
        "compare_five_qubit": Field("bool", True),
    },
    "strobe": {
        "noise": Field("object", schema=NOISE_SCHEMA),
        "dt": Field("number", 0.02, minimum=0.0, exclusive_min=True),
        "T": Field("number", 2.0, minimum=0.0, exclusive_min=True),
        "substeps": Field("int", 10, minimum=1),
        "eps": Field("number", 1e-10, minimum=0.0, exclusive_min=True),
        "hamiltonian": Field("objects", schema={
            "coeff": Field("number"),
            "freq": Field("number", 0.0),
            "kind": Field("str", "cos", choices=("sin", "cos")),
            "pauli_string": Field("str"),
        }),
        "code": Field("object", {}, schema={
            "source": Field("str", "optimize",
                            choices=("optimize", "five_qubit", "computational", "file")),
            "path": Field("str", ""),
            "optimizer": Field("object", {}, schema=OPTIMIZER_SCHEMA),
        }),
    },
    "bloch-check": {**QUBIT_SCHEMA,
                    "eps": Field("number", 1e-12, minimum=0.0, exclusive_min=True),
                    "samples": Field("int", 10, minimum=1),
                    "conjugation_samples": Field("int", 1000, minimum=1)},
}


# ---------------------------------------------------------------------------
# builders


def qubit_spec(cfg: dict) -> ForwardSpec:
    h = np.einsum("i,ijk->jk", np.asarray(cfg["h"], dtype=complex), np.stack([SX, SY, SZ]))
    jumps = tuple(j["rate"] * _JUMP_OPS[j["op"]] for j in cfg["jumps"] if j["rate"] > 0)
    r = np.asarray(cfg["initial"], dtype=float)
    if np.linalg.norm(r) > 1 + 1e-12:
        raise ConfigError("initial: Bloch vector longer than 1")
    return ForwardSpec(h, jumps, rho_from_bloch(r), cfg["tau"], cfg["steps"])


def noise_model(cfg: dict) -> NoiseModel:
    try:
        return NoiseModel(cfg["kind"], cfg["g1"], cfg["g2"], cfg["n"], cfg["both_orderings"])
    except ValueError as exc:
        raise ConfigError(f"noise: {exc}") from None


def optimizer_config(cfg: dict, seed: int) -> OptimizerConfig:
    return OptimizerConfig(seed=seed, **cfg)


# ---------------------------------------------------------------------------
# runners; each returns (files written, summary dict, gnuplot recipe)


@dataclass
class Outcome:
    files: list
    summary: dict
    recipe: str


def _bloch_rows(times, rev):
    rows = []
    for t, hb, *lbs in zip(times, rev.h_b, *rev.jumps_b):
        row = [t, *np.real(vector_from_operator(hb - np.trace(hb) / 2 * np.eye(2)))]
        for lb in lbs:
            for z in vector_from_operator(lb - np.trace(lb) / 2 * np.eye(2)):
                row += [z.real, z.imag]
        rows.append(row)
    return rows


def _run_reversal(cfg: dict, out: Path, mode: str) -> Outcome:
    spec = qubit_spec(cfg)
    report = reversal_experiment(spec, cfg["eps"], cfg["steps"], mode)
    if not np.all(np.isfinite(report.fidelity)):
        bad = int(np.argmin(np.isfinite(report.fidelity)[::-1]))
        raise IntegrationError("non-finite fidelity", float(report.backward.times[max(bad - 1, 0)]))
    files = [
        write_trajectory_csv(out / "forward.csv", report.forward),
        write_trajectory_csv(out / "backward.csv", report.backward),
        write_csv(out / "fidelity.csv", ["t", "fidelity", "purity_forward", "purity_backward"],
                  report.rows()),
    ]
    if mode != "dissipation_only":
        rev = build_reverse_generator(report.forward, spec.hamiltonian, spec.jumps, cfg["eps"])
        files.append(write_csv(out / "generator.csv", ["t_backward"] + fig_header(len(spec.jumps))[1:],
                               _bloch_rows(rev.times, rev)))
    summary = report.summary()
    summary["deficit"] = report.deficit
    recipe = ("set datafile separator ','\nset key autotitle columnhead\nset xlabel 't'\n"
              "plot 'fidelity.csv' using 1:2 with lines, '' using 1:3 with lines, '' using 1:4 with lines\n")
    return Outcome(files, summary, recipe)


def run_reverse_qubit(cfg, out, seed, threads):
    return _run_reversal(cfg, out, cfg["mode"])


def run_reverse_unitary(cfg, out, seed, threads):
    return _run_reversal(cfg, out, "dissipation_only")


def run_hardware_sweep(cfg, out, seed, threads):
    spec = qubit_spec(cfg)
    result = hardware_sweep(spec, cfg["gammas"], cfg["xis"], cfg["residual"], cfg["eps"],
                            workers=threads, step_per_decay=cfg["step_per_decay"])
    files = [write_csv(out / "fidelity.csv", ["gamma", "xi", "t", "fidelity"], result.rows())]
    summary = result.summary()
    recipe = ("set datafile separator ','\nset key autotitle columnhead\nset xlabel 't'\n"
              "plot for [g in '" + " ".join(f"{g:g}" for g in cfg["gammas"]) + "'] "
              "'fidelity.csv' using 3:($1==g ? $4 : 1/0) with lines title 'Gamma='.g\n")
    return Outcome(files, {"gamma": summary}, recipe)


def run_code_optimize(cfg, out, seed, threads):
    model = noise_model(cfg["noise"])
    if model.n_physical > 5:
        raise ConfigError("noise.n: code optimization supports at most 5 physical qubits")
    if cfg["d"] > 2 ** model.n_physical:
        raise ConfigError("d: logical dimension exceeds the physical space")
    opt = optimizer_config(cfg["optimizer"], seed)
    channel = noise_channel(model, cfg["dt"])
    res = optimize_code(model, cfg["dt"], cfg["d"], opt, cfg["eps"], channel)
    summary = res.summary(opt)
    summary.pop("code_basis")
    summary["noise"] = cfg["noise"]
    summary["dt"] = cfg["dt"]
    if cfg["compare_five_qubit"] and model.n_physical == 5 and cfg["d"] == 2:
        fe5 = petz_entanglement_fidelity(channel, five_qubit_code(), cfg["eps"])
        summary["five_qubit_petz_infidelity"] = 1 - average_fidelity(fe5, 2)
    elif cfg["compare_five_qubit"] and cfg["d"] == 2:
        m5 = NoiseModel(model.kind, model.g1, model.g2, 5, model.both_orderings)
        fe5 = petz_entanglement_fidelity(noise_channel(m5, cfg["dt"]), five_qubit_code(), cfg["eps"])
        summary["five_qubit_petz_infidelity"] = 1 - average_fidelity(fe5, 2)
    code_rows = ([i, k, z.real, z.imag] for k in range(res.code.d)
                 for i, z in enumerate(res.code.vectors[:, k]))
    files = [write_csv(out / "code_basis.csv", ["index", "logical", "re", "im"], code_rows),
             write_csv(out / "history.csv", ["restart", "infidelity_e"], enumerate(res.history))]
    recipe = ("set datafile separator ','\nset key autotitle columnhead\n"
              "plot 'history.csv' using 1:2 with linespoints\n")
    return Outcome(files, summary, recipe)


def _load_code(path: str, n: int, d: int) -> CodeBasis:
    try:
        _, rows = read_csv(path)
    except OSError as exc:
        raise ConfigError(f"code.path: cannot read {path!r}: {exc.strerror}") from None
    v = np.zeros((2 ** n, d), dtype=complex)
    for i, k, re_, im in rows:
        v[int(i), int(k)] = float(re_) + 1j * float(im)
    return CodeBasis(v, Path(path).name)


def run_strobe(cfg, out, seed, threads):
    model = noise_model(cfg["noise"])
    drive = []
    for j, term in enumerate(cfg["hamiltonian"]):
        try:
            drive.append(DriveTerm(term["coeff"], term["freq"], term["kind"], term["pauli_string"].upper()))
        except ValueError as exc:
            raise ConfigError(f"hamiltonian.{j}: {exc}") from None
    if not drive:
        raise ConfigError("hamiltonian: at least one term is required")
    k = len(drive[0].pauli)
    if any(len(t.pauli) != k for t in drive):
        raise ConfigError("hamiltonian: all Pauli strings must have the same length")
    d = 2 ** k
    if d > 2 ** model.n_physical:
        raise ConfigError("hamiltonian: more logical qubits than physical qubits")
    src = cfg["code"]["source"]
    summary: dict = {"code_source": src}
    if src == "optimize":
        if model.n_physical > 5:
            raise ConfigError("noise.n: code optimization supports at most 5 physical qubits")
        opt = optimizer_config(cfg["code"]["optimizer"], seed)
        res = optimize_code(model, cfg["dt"], d, opt, cfg["eps"])
        code = res.code
        summary["optimizer"] = {key: val for key, val in res.summary(opt).items() if key != "code_basis"}
    elif src == "five_qubit":
        if model.n_physical != 5 or d != 2:
            raise ConfigError("code.source: five_qubit needs noise.n = 5 and one logical qubit")
        code = five_qubit_code()
    elif src == "computational":
        code = CodeBasis.computational(model.n_physical, d)
    else:
        code = _load_code(cfg["code"]["path"], model.n_physical, d)
    result = strobe_run(code, drive, model, cfg["dt"], cfg["T"], cfg["eps"], cfg["substeps"])
    files = [
        write_csv(out / "observables.csv", ["t", "observable", "value", "variant"], result.rows()),
        write_csv(out / "fidelity.csv", ["t", "noise_free", "noisy", "recovered"], result.fidelity_rows()),
    ]
    summary.update(result.summary())
    recipe = ("set datafile separator ','\nset key autotitle columnhead\nset xlabel 't'\n"
              "plot 'fidelity.csv' using 1:3 with lines, '' using 1:4 with points\n")
    return Outcome(files, summary, recipe)


def run_bloch_check(cfg, out, seed, threads):
    spec = qubit_spec(cfg)
    forward = spec.run()
    eps = cfg["eps"]
    h_vec = np.real(vector_from_operator(spec.hamiltonian - np.trace(spec.hamiltonian) / 2 * np.eye(2)))
    l_vecs = [vector_from_operator(ell - np.trace(ell) / 2 * np.eye(2)) for ell in spec.jumps]
    rows = fig_rows(forward.times, forward.states, h_vec, l_vecs)
    files = [write_csv(out / "closed_form.csv", fig_header(len(l_vecs)), rows)]
    usable = [j for j in range(len(forward)) if np.linalg.eigvalsh(forward.states[j])[0] > 1e-8]
    picks = [usable[i] for i in np.linspace(0, len(usable) - 1, cfg["samples"]).astype(int)] if usable else []
    cmp_rows = []
    worst_h = worst_l = 0.0
    for j in picks:
        gamma = forward.states[j]
        r = bloch_from_rho(gamma)
        hb_gen = -spec.hamiltonian + correction_hamiltonian(gamma, spec.jumps, eps)
        hb_cf = operator_from_vector(qubit_reverse_hamiltonian(r, h_vec, l_vecs))
        dh = float(np.max(np.abs(hb_gen - np.trace(hb_gen) / 2 * np.eye(2) - hb_cf)))
        dl = 0.0
        for ell, lb in zip(l_vecs, reverse_jumps(gamma, spec.jumps, eps)):
            dl = max(dl, float(np.max(np.abs(operator_from_vector(qubit_reverse_jump(r, ell)) - lb))))
        worst_h, worst_l = max(worst_h, dh), max(worst_l, dl)
        cmp_rows.append([forward.times[j], dh, dl])
    files.append(write_csv(out / "comparison.csv", ["t", "max_diff_hB", "max_diff_lB"], cmp_rows))
    rng = np.random.default_rng(seed)
    worst_conj = 0.0
    for _ in range(cfg["conjugation_samples"]):
        x = rng.normal()
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        v = rng.normal(size=3) + 1j * rng.normal(size=3)
        k = np.einsum("i,ijk->jk", n, np.stack([SX, SY, SZ])) * x / 2
        dense = expm(-k) @ operator_from_vector(v) @ expm(k)
        worst_conj = max(worst_conj, float(np.max(np.abs(operator_from_vector(bch_conjugate(x, n, v)) - dense))))
    summary = {"max_diff_hB": worst_h, "max_diff_lB": worst_l, "max_diff_conjugation": worst_conj,
               "points": len(picks)}
    recipe = ("set datafile separator ','\nset key autotitle columnhead\nset xlabel 't'\n"
              "plot for [c=2:4] 'closed_form.csv' using 1:c with lines\n")
    return Outcome(files, summary, recipe)


RUNNERS: dict[str, Callable] = {
    "reverse-qubit": run_reverse_qubit,
    "reverse-unitary": run_reverse_unitary,
    "hardware-sweep": run_hardware_sweep,
    "code-optimize": run_code_optimize,
    "strobe": run_strobe,
    "bloch-check": run_bloch_check,
}


def run_experiment(name: str, config_text: str, out_dir, seed: int, threads: int = 1,
                   source: str | None = None) -> dict:
    """Validate, run and write artifacts plus ``manifest.json``; returns the manifest."""
    if name not in RUNNERS:
        raise ConfigError(f"unknown experiment {name!r}; expected one of {', '.join(EXPERIMENTS)}")
    cfg = parse_config(config_text, SCHEMAS[name], source)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    outcome = RUNNERS[name](cfg, out, seed, threads)
    files = list(outcome.files)
    files.append(write_json(out / "summary.json", outcome.summary))
    recipe = out / "plot.gp"
    recipe.write_text(outcome.recipe)
    files.append(recipe)
    hashes = {p.name: file_hash(p) for p in sorted(files, key=lambda p: p.name)}
    manifest = {
        "experiment": name,
        "config": cfg,
        "config_sha256": canonical_hash(cfg),
        "seed": seed,
        "version": __version__,
        "wall_time_s": round(time.perf_counter() - start, 3),
        "files": hashes,
        "outputs_sha256": canonical_hash(hashes),
    }
    write_json(out / "manifest.json", manifest)
    return manifest
