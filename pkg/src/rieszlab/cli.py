"""Command-line driver: file-based experiment pipelines with reproducible,
provenance-stamped CSV/JSON outputs."""

from __future__ import annotations

import argparse
import hashlib
import json
import subprocess
import sys
from pathlib import Path

import numpy as np

from .core import CubeDomain, ParameterError, PeriodicConfiguration, PointConfiguration, RieszKernel, UniformMeasure

STOCHASTIC_COMMANDS = {"minimize", "swiss-cheese", "fg-split", "scan-s", "compare"}

COMMANDS = ("energy", "minimize", "lattice-const", "mmot", "monotone1d",
            "swiss-cheese", "fg-split", "scan-s", "compare", "limits")

_SCHEMAS = {
    "common": {
        "kernel": {"type": "object", "required": ["s", "d"]},
        "output": {"type": "string"},
    },
    "energy": {"required": ["kernel", "cube", "points"], "optional": ["mode"]},
    "minimize": {"required": ["kernel", "n_sequence"], "optional": ["restarts", "maxiter"]},
    "lattice-const": {"required": ["kernel", "lattice"], "optional": ["windows"]},
    "mmot": {"required": ["kernel", "n", "marginal"], "optional": []},
    "monotone1d": {"required": ["kernel", "n"], "optional": ["density"]},
    "swiss-cheese": {"required": ["cube_side", "dimension", "ladder"], "optional": ["max_tries"]},
    "fg-split": {"required": ["kernel", "points", "packing"], "optional": ["mc_samples", "kappa"]},
    "scan-s": {"required": ["kernel", "problem", "n", "s_grid"], "optional": ["restarts", "maxiter", "grid_sites"]},
    "compare": {"required": ["kernel", "jellium_n", "transport_n"], "optional": ["lattice", "restarts", "grid_sites"]},
    "limits": {"required": ["kernel", "cell", "windows"], "optional": []},
}


class SchemaError(ValueError):
    pass


def _check_schema(command: str, config: dict):
    spec = _SCHEMAS[command]
    for key in spec["required"]:
        if key not in config:
            raise SchemaError(f"config field '{key}' is required for command '{command}'")
    allowed = set(spec["required"]) | set(spec.get("optional", [])) | {"kernel", "output", "seed",
                                                                       "tolerance", "threads"}
    for key in config:
        if key not in allowed:
            raise SchemaError(f"config field '{key}' is not recognized for command '{command}'")
    if "kernel" in spec["required"]:
        kern = config.get("kernel")
        if not isinstance(kern, dict) or "s" not in kern or "d" not in kern:
            raise SchemaError("config field 'kernel' must be an object with 's' and 'd'")


def _kernel(config) -> RieszKernel:
    return RieszKernel(float(config["kernel"]["s"]), int(config["kernel"]["d"]))


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _write_csv(path: Path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _git_revision() -> str | None:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True,
                             text=True, cwd=Path(__file__).parent, timeout=5)
        if out.returncode == 0:
            return out.stdout.strip()
    except Exception:
        pass
    return None


def _summary(path: Path, command: str, config: dict, results: dict):
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    doc = {
        "command": command,
        "config": config,
        "config_sha256": hashlib.sha256(canonical.encode()).hexdigest(),
        "seed": config.get("seed"),
        "git_revision": _git_revision(),
        "results": results,
    }
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _cube_from(config_cube, d: int) -> CubeDomain:
    return CubeDomain(tuple(config_cube.get("center", [0.0] * d)), float(config_cube["side"]), d)


def _require_seed(command: str, config: dict):
    if command in STOCHASTIC_COMMANDS and config.get("seed") is None:
        raise SchemaError(f"config field 'seed' is mandatory for stochastic command '{command}'")


def run(command: str, config: dict, out_dir: Path) -> dict:
    """Execute one subcommand; returns the results dict written to the summary."""
    if command not in COMMANDS:
        raise SchemaError(f"unknown command '{command}'")
    _check_schema(command, config)
    _require_seed(command, config)
    out_dir.mkdir(parents=True, exist_ok=True)
    name = config.get("output", command.replace("-", "_"))
    csv_path = out_dir / f"{name}.csv"
    json_path = out_dir / f"{name}.summary.json"
    seed = config.get("seed")
    threads = int(config.get("threads", 1))

    if command == "energy":
        from .jellium import e_jel, e_ueg

        k = _kernel(config)
        K = _cube_from(config["cube"], k.d)
        pts = PointConfiguration.from_array(np.asarray(config["points"], dtype=float), k.d)
        mode = config.get("mode", "jellium")
        br = e_jel(k, K, pts) if mode == "jellium" else e_ueg(k, UniformMeasure(K, 1.0), pts)
        rows = [(mode, br.pair_sum, br.attraction, br.background_self, br.total)]
        _write_csv(csv_path, ["mode", "pair_sum", "attraction", "background_self", "total"], rows)
        results = {"mode": mode, "total": br.total, "pair_sum": br.pair_sum,
                   "attraction": br.attraction, "background_self": br.background_self}

    elif command == "minimize":
        from .analysis import extrapolate_constant
        from .jellium import minimize_jellium

        k = _kernel(config)
        rows = []
        series = []
        for N in config["n_sequence"]:
            K = CubeDomain.centered(float(N) ** (1.0 / k.d), k.d)
            res = minimize_jellium(k, K, int(N), seed=int(seed),
                                   restarts=int(config.get("restarts", 8)),
                                   maxiter=int(config.get("maxiter", 300)), threads=threads)
            rows.append((int(N), res.energy.total, res.energy.total / N,
                         res.separation, int(res.converged)))
            series.append((N, res.energy.total / N))
        _write_csv(csv_path, ["n", "energy", "energy_per_point", "separation", "converged"], rows)
        results = {"series": [[n, v] for n, v in series]}
        if len(series) >= 4:
            est = extrapolate_constant(series, d=k.d)
            results["extrapolated_per_point"] = est.value
            results["extrapolated_constant"] = est.value / 2.0
            results["error_bar"] = est.error / 2.0

    elif command == "lattice-const":
        from .lattice import Lattice, periodic_energy_per_point

        k = _kernel(config)
        lat = Lattice.from_json(config["lattice"]) if isinstance(config["lattice"], dict) \
            else getattr(Lattice, config["lattice"].lower())()
        est = periodic_energy_per_point(k, lat, window_sequence=config.get("windows"))
        _write_csv(csv_path, ["n", "energy_per_point"],
                   [(n, v) for n, v in est.series] or [(0, est.value)])
        results = {"value": est.value, "error": est.error, "method": est.method,
                   "pair_normalization": "per-particle"}

    elif command == "mmot":
        from .transport import GridMarginal, exc, mmot_bruteforce

        k = _kernel(config)
        marg = config["marginal"]
        if isinstance(marg, str):
            mu = GridMarginal.from_csv(marg)
        else:
            mu = GridMarginal(np.asarray(marg["sites"], dtype=float),
                              np.asarray(marg["weights"], dtype=float))
        plan, cost = mmot_bruteforce(k, mu, int(config["n"]))
        rows = [(list(T), w) for T, w in zip(plan.support, plan.weights)]
        _write_csv(csv_path, ["tuple", "weight"],
                   [("|".join(str(i) for i in T), w) for T, w in zip(plan.support, plan.weights)])
        results = {"cost": cost, "exc": exc(k, mu, int(config["n"]), cost),
                   "certificate_residual": plan.certificate_residual,
                   "support_size": len(plan.support)}

    elif command == "monotone1d":
        from .transport import Density1D, exc, monotone_1d

        k = _kernel(config)
        dens_cfg = config.get("density")
        dens = Density1D.uniform() if dens_cfg is None else Density1D(
            np.asarray(dens_cfg["breaks"], dtype=float), np.asarray(dens_cfg["values"], dtype=float))
        cost = monotone_1d(k, dens, int(config["n"]))
        _write_csv(csv_path, ["n", "cost"], [(int(config["n"]), cost)])
        results = {"cost": cost, "exc": exc(k, dens, int(config["n"]), cost)}

    elif command == "swiss-cheese":
        from .decomposition import swiss_cheese

        d = int(config["dimension"])
        Q = CubeDomain.centered(float(config["cube_side"]), d)
        pack = swiss_cheese(Q, config["ladder"], seed=int(seed),
                            max_tries=int(config.get("max_tries", 8)))
        _write_csv(csv_path, ["x" + str(i) for i in range(d)] + ["radius", "family"],
                   [tuple(c) + (r, int(f)) for c, r, f in
                    zip(pack.centers, pack.radii, pack.family)])
        (out_dir / f"{name}.packing.json").write_text(json.dumps(pack.to_json()) + "\n")
        results = {"n_balls": int(len(pack.radii)), "densities": pack.densities().tolist(),
                   "content_hash": pack.content_hash(),
                   "disjoint": pack.check_disjoint(), "inside": pack.check_inside(),
                   "density_window_ok": pack.check_density_window()}

    elif command == "fg-split":
        from .decomposition import BallPacking, fg_energy_split, swiss_cheese

        k = _kernel(config)
        pack_cfg = config["packing"]
        if isinstance(pack_cfg, str):
            pack = BallPacking.from_json(Path(pack_cfg).read_text())
        else:
            Q = CubeDomain.centered(float(pack_cfg["cube_side"]), k.d)
            pack = swiss_cheese(Q, pack_cfg["ladder"], seed=int(seed))
        pts = PointConfiguration.from_array(np.asarray(config["points"], dtype=float), k.d)
        res = fg_energy_split(k, pts, pack, kappa=float(config.get("kappa", 0.5)),
                              mc_samples=int(config.get("mc_samples", 2000)),
                              seed=int(seed), threads=threads)
        _write_csv(csv_path, ["localized", "localized_se", "residual", "pair_total"],
                   [(res.localized, res.localized_se, res.residual, res.pair_total)])
        results = {"localized": res.localized, "localized_se": res.localized_se,
                   "residual": res.residual, "pair_total": res.pair_total,
                   "n_samples": res.n_samples}

    elif command == "scan-s":
        from .analysis import scan_s

        k_cfg = config["kernel"]
        table = scan_s(config["problem"], int(config["n"]),
                       np.asarray(config["s_grid"], dtype=float), d=int(k_cfg["d"]),
                       seed=int(seed), restarts=int(config.get("restarts", 4)),
                       grid_sites=int(config.get("grid_sites", 24)))
        _write_csv(csv_path, ["s", "value"], list(zip(table.s_values, table.values)))
        results = {"max_jump": table.max_jump,
                   "values": [[float(s), float(v)] for s, v in zip(table.s_values, table.values)]}

    elif command == "compare":
        from .analysis import compare_constants
        from .lattice import Lattice

        k = _kernel(config)
        lat = None
        if config.get("lattice"):
            lat = getattr(Lattice, config["lattice"].lower())()
        rep = compare_constants(k, jellium_N=config["jellium_n"],
                                transport_N=config["transport_n"], seed=int(seed),
                                restarts=int(config.get("restarts", 4)),
                                grid_sites=int(config.get("grid_sites", 24)), lattice=lat)
        rows = [("jellium", rep.jellium.value, rep.jellium.error),
                ("transport", rep.transport.value, rep.transport.error),
                ("lattice", rep.lattice_value, rep.lattice_error)]
        _write_csv(csv_path, ["channel", "constant", "error"], rows)
        results = {
            "jellium": {"value": rep.jellium.value, "error": rep.jellium.error,
                        "series": [[n, v] for n, v in rep.jellium.series]},
            "transport": {"value": rep.transport.value, "error": rep.transport.error,
                          "series": [[n, v] for n, v in rep.transport.series]},
            "lattice": {"value": rep.lattice_value, "error": rep.lattice_error},
            "pair_normalization": "per-particle",
            "inequality_ok": rep.inequality_ok,
            "all_negative": rep.all_negative,
            "d1_agreement": rep.d1_agreement,
        }

    elif command == "limits":
        from .analysis import comparison_limits

        k = _kernel(config)
        cell_cfg = config["cell"]
        cell = PeriodicConfiguration(
            CubeDomain.centered(float(cell_cfg["side"]), k.d),
            PointConfiguration.from_array(np.asarray(cell_cfg["points"], dtype=float), k.d),
            zero_barycenter=bool(cell_cfg.get("zero_barycenter", True)),
        )
        rep = comparison_limits(k, cell, [float(R) for R in config["windows"]])
        _write_csv(csv_path, ["R", "n", "ueg_minus_jel_per_point", "averaged_minus_sharp_per_point"],
                   [(r.R, r.n_points, r.ueg_minus_jel_per_point, r.averaged_minus_sharp_per_point)
                    for r in rep.rows])
        results = {"rhs_sharp": rep.rhs_sharp, "rhs_averaged": rep.rhs_averaged,
                   "converging": rep.converging}

    _summary(json_path, command, config, results)
    return results


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="rieszlab",
                                     description="Riesz/Coulomb point-energy laboratory")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON experiment config")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="seed override")
    parser.add_argument("--threads", type=int, default=None, help="worker cap")
    parser.add_argument("--tolerance", type=float, default=None, help="tolerance override")
    args = parser.parse_args(argv)

    try:
        config = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as ex:
        print(f"error: cannot read config: {ex}", file=sys.stderr)
        return 2
    if args.seed is not None:
        config["seed"] = args.seed
    if args.threads is not None:
        config["threads"] = args.threads
    if args.tolerance is not None:
        config["tolerance"] = args.tolerance

    try:
        run(args.command, config, Path(args.out))
    except SchemaError as ex:
        print(f"config error: {ex}", file=sys.stderr)
        return 2
    except Exception as ex:  # numeric/module failure
        print(f"error [{type(ex).__name__}]: {ex}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
