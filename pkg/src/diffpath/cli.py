"""Command-line entry points.

Subcommands: ``generate``, ``invert``, ``edit``, ``sweep``, ``demo`` produce
CSV artifacts (plus SVG scatter plots for two-dimensional models) in the
configured output directory; ``serve`` exposes the configured model over the
wire protocol.  Every run prints its seed and config digest.  Exit codes:
0 success, 1 validation failure, 2 runtime failure; no partial artifacts
survive a failed run.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import metrics as metrics_mod
from .config import (RunConfig, apply_overrides, canonical_json, config_digest)
from .edits import prompt_switch, run_edit
from .errors import ConfigError, ParameterError
from .metrics import SweepScenario, inversion_report, run_sweep, score_edit
from .output import path_csv, svg_scatter, sweep_table_csv, table_csv
from .presets import demo_config_dict, preset_manipulation
from .remote import RemoteDenoiser, serve_stream, serve_tcp
from .rng import standard_normals, substream
from .sampler import ddim_invert, generate

DEMO_SCENARIOS = ("prompt-switch", "window-grid", "schedule-grid", "guidance-grid")


class ArtifactWriter:
    """Collects written files so a failed run can remove them all."""

    def __init__(self, directory: str):
        self.directory = Path(directory)
        self.written: list[Path] = []

    def write_text(self, name: str, text: str) -> Path:
        self.directory.mkdir(parents=True, exist_ok=True)
        path = self.directory / name
        path.write_text(text, encoding="utf-8")
        self.written.append(path)
        return path

    def discard(self) -> None:
        for path in self.written:
            path.unlink(missing_ok=True)
        self.written.clear()


def _load_config(args) -> RunConfig:
    if args.config is not None:
        data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if not isinstance(data, dict):
            raise ConfigError("config root must be an object")
    else:
        data = demo_config_dict()
    if getattr(args, "preset", None):
        manip = preset_manipulation(args.preset)
        base = data.get("manipulation", {})
        manip.setdefault("condition_a", base.get("condition_a", "a"))
        manip.setdefault("condition_b", base.get("condition_b", "b"))
        data["manipulation"] = manip
    apply_overrides(data, args.set or [])
    if getattr(args, "output", None):
        data.setdefault("output", {})["directory"] = args.output
    return RunConfig.from_dict(data)


def _announce(config: RunConfig, writer: ArtifactWriter) -> None:
    print(f"seed={config.seed} config_digest={config_digest(config)}")
    for path in writer.written:
        print(f"wrote {path}")


def _pick_denoiser(args, config: RunConfig):
    """The configured analytic model, or a protocol peer when --remote is given."""
    spec = getattr(args, "remote", None)
    if not spec:
        return config.build_denoiser()
    d, m = config.model.d, config.model.m
    if spec.startswith("tcp:"):
        try:
            _, host, port = spec.split(":")
            return RemoteDenoiser.from_address(host, int(port), d, m)
        except ValueError as err:
            raise ConfigError(f"bad --remote address {spec!r}: {err}") from err
    if spec.startswith("cmd:"):
        import shlex
        argv = shlex.split(spec[4:])
        if not argv:
            raise ConfigError("--remote cmd: needs a command line")
        return RemoteDenoiser.from_command(argv, d, m)
    raise ConfigError("--remote must be 'tcp:HOST:PORT' or 'cmd:ARGV...'")


def _close_denoiser(denoiser) -> None:
    close = getattr(denoiser, "close", None)
    if close is not None:
        close()


def _latent_steps(config: RunConfig):
    grid = config.build_grid()
    t = grid.t_sample
    sampling = [t - i for i in range(t + 1)]
    levels = [grid.level(i) for i in range(t)] + [0]
    return grid, sampling, levels


def cmd_generate(args) -> int:
    config = _load_config(args)
    denoiser = _pick_denoiser(args, config)
    conditions = config.build_conditions()
    if args.condition not in conditions:
        raise ConfigError(f"unknown condition {args.condition!r}")
    schedule = config.build_noise_schedule()
    grid, sampling, levels = _latent_steps(config)
    x_top = standard_normals(substream(config.seed, "x_top"), config.model.d)
    writer = ArtifactWriter(config.output.directory)
    try:
        path = generate(denoiser, x_top, conditions[args.condition], grid, schedule)
        if "csv" in config.output.formats:
            writer.write_text("path.csv", path_csv(path.latents, path.noises,
                                                   sampling, levels, config.seed))
        if "svg" in config.output.formats and config.model.d == 2:
            writer.write_text("path.svg", svg_scatter(
                [("trajectory", np.array(path.latents)),
                 ("endpoint", path.x0[None, :])],
                title=f"generation under {args.condition!r} (seed {config.seed})",
                connect=True))
    except BaseException:
        writer.discard()
        raise
    finally:
        _close_denoiser(denoiser)
    _announce(config, writer)
    return 0


def cmd_invert(args) -> int:
    config = _load_config(args)
    denoiser = config.build_denoiser()
    conditions = config.build_conditions()
    if args.condition not in conditions:
        raise ConfigError(f"unknown condition {args.condition!r}")
    c = conditions[args.condition]
    schedule = config.build_noise_schedule()
    grid, sampling, levels = _latent_steps(config)
    x0 = denoiser.sample_clean(c, 1, substream(config.seed, "x0"))[0]
    inv = ddim_invert(denoiser, x0, c, grid, schedule)
    regen = generate(denoiser, inv.x_top, c, grid, schedule)
    rel_err = float(np.linalg.norm(regen.x0 - x0) / np.linalg.norm(x0))
    writer = ArtifactWriter(config.output.directory)
    try:
        if "csv" in config.output.formats:
            writer.write_text("inversion.csv", path_csv(
                inv.latents, inv.noises, sampling[::-1], levels[::-1], config.seed))
            writer.write_text("reconstruction.csv", table_csv(
                ["t_sample", "rel_error", "seed"],
                [[grid.t_sample, rel_err, config.seed]]))
        if "svg" in config.output.formats and config.model.d == 2:
            writer.write_text("inversion.svg", svg_scatter(
                [("inversion", np.array(inv.latents)),
                 ("regenerated", np.array(regen.latents))],
                title=f"round trip under {args.condition!r} (seed {config.seed})",
                connect=True))
    except BaseException:
        writer.discard()
        raise
    _announce(config, writer)
    print(f"round-trip relative error: {rel_err:.6e}")
    return 0


def _edit_setup(config: RunConfig, denoiser):
    if config.manipulation is None:
        raise ConfigError("this command needs a manipulation section (or --preset)")
    conditions = config.build_conditions()
    c_a = conditions[config.manipulation.condition_a]
    c_b = conditions[config.manipulation.condition_b]
    schedule = config.build_noise_schedule()
    grid = config.build_grid()
    return denoiser, c_a, c_b, grid, schedule


def cmd_edit(args) -> int:
    config = _load_config(args)
    denoiser = _pick_denoiser(args, config)
    writer = ArtifactWriter(config.output.directory)
    try:
        denoiser, c_a, c_b, grid, schedule = _edit_setup(config, denoiser)
        manip = config.build_manipulation()
        x_top = standard_normals(substream(config.seed, "x_top"), config.model.d)
        path_b = generate(denoiser, x_top, c_b, grid, schedule)
        result = run_edit(denoiser, x_top, c_a, c_b, manip, grid, schedule, path_b=path_b)
        scores = score_edit(result, path_b, config.build_model())
        row = metrics_mod.SweepRow(
            kind=manip.kind, schedule_kind=manip.schedule.kind,
            t_max=manip.schedule.t_max, t_min=manip.schedule.t_min,
            weight=manip.schedule.amplitude, beta=manip.beta,
            seed=config.seed, metrics=scores)
        table = metrics_mod.SweepTable(rows=(row,), seed=config.seed,
                                       digest=config_digest(config))
        if "csv" in config.output.formats:
            writer.write_text("edit.csv", sweep_table_csv(table))
            divergence = metrics_mod.path_divergence(result)
            t = grid.t_sample
            writer.write_text("edit_profile.csv", table_csv(
                ["index", "sampling_step", "divergence_from_reference", "seed"],
                [[i, t - i, div, config.seed] for i, div in enumerate(divergence)]))
        if "svg" in config.output.formats and config.model.d == 2:
            writer.write_text("edit.svg", svg_scatter(
                [("path A endpoint", result.path_a.x0[None, :]),
                 ("path B endpoint", path_b.x0[None, :]),
                 ("edited endpoint", result.path.x0[None, :])],
                title=f"{manip.kind} edit (seed {config.seed})"))
    except BaseException:
        writer.discard()
        raise
    finally:
        _close_denoiser(denoiser)
    _announce(config, writer)
    return 0


def _parse_axes(args, config: RunConfig) -> dict:
    axes: dict[str, tuple] = {}
    for item in args.axis or []:
        if "=" not in item:
            raise ConfigError(f"--axis {item!r} is not of the form name=v1,v2,...")
        name, raw = item.split("=", 1)
        values = []
        for chunk in raw.split(","):
            chunk = chunk.strip()
            try:
                values.append(json.loads(chunk))
            except json.JSONDecodeError:
                values.append(chunk)
        axes[name.strip()] = tuple(values)
    if not axes:
        total = config.sampler.t_sample
        axes = {"t_max": (total, total - 2, total - 4, total - 6, total - 8),
                "t_m": (5, 10, 15, 20, 25)}
    return axes


def _sweep_and_write(config: RunConfig, denoiser, axes: dict, writer: ArtifactWriter,
                     csv_name: str, svg_name: str) -> metrics_mod.SweepTable:
    denoiser, c_a, c_b, grid, schedule = _edit_setup(config, denoiser)
    scenario = SweepScenario(denoiser=denoiser, score_params=config.build_model(),
                             c_a=c_a, c_b=c_b, grid=grid, noise_schedule=schedule,
                             base=config.build_manipulation())
    table = run_sweep(scenario, axes, config.seed)
    if "csv" in config.output.formats:
        writer.write_text(csv_name, sweep_table_csv(table))
    if "svg" in config.output.formats and config.model.d == 2:
        points = np.array([[row.metrics.layout_preservation,
                            row.metrics.semantic_alignment] for row in table.rows])
        writer.write_text(svg_name, svg_scatter(
            [("grid points (layout vs alignment)", points)],
            title=f"sweep (seed {config.seed})"))
    return table


def cmd_sweep(args) -> int:
    config = _load_config(args)
    axes = _parse_axes(args, config)
    denoiser = _pick_denoiser(args, config)
    writer = ArtifactWriter(config.output.directory)
    try:
        table = _sweep_and_write(config, denoiser, axes, writer, "sweep.csv", "sweep.svg")
    except BaseException:
        writer.discard()
        raise
    finally:
        _close_denoiser(denoiser)
    _announce(config, writer)
    print(f"rows={len(table.rows)} sweep_digest={table.digest}")
    return 0


def cmd_demo(args) -> int:
    config = _load_config(args)
    denoiser = _pick_denoiser(args, config)
    writer = ArtifactWriter(config.output.directory)
    try:
        if args.scenario == "prompt-switch":
            denoiser, c_a, c_b, grid, schedule = _edit_setup(config, denoiser)
            x_top = standard_normals(substream(config.seed, "x_top"), config.model.d)
            t = grid.t_sample
            endpoints = []
            pure_a = prompt_switch(denoiser, x_top, c_a, c_b, t, grid, schedule).x0
            pure_b = prompt_switch(denoiser, x_top, c_a, c_b, 0, grid, schedule).x0
            rows = []
            for k in range(t, -1, -1):
                x0 = prompt_switch(denoiser, x_top, c_a, c_b, k, grid, schedule).x0
                endpoints.append(x0)
                rows.append([k, *x0,
                             float(np.linalg.norm(x0 - pure_a)),
                             float(np.linalg.norm(x0 - pure_b)), config.seed])
            d = config.model.d
            header = ["k"] + [f"x{j}" for j in range(d)] \
                + ["dist_to_pure_a", "dist_to_pure_b", "seed"]
            if "csv" in config.output.formats:
                writer.write_text("prompt_switch.csv", table_csv(header, rows))
            if "svg" in config.output.formats and d == 2:
                writer.write_text("prompt_switch.svg", svg_scatter(
                    [("switch endpoints", np.array(endpoints)),
                     ("pure A", pure_a[None, :]), ("pure B", pure_b[None, :])],
                    title=f"condition switch sweep (seed {config.seed})",
                    connect=True))
        else:
            total = config.sampler.t_sample
            if args.scenario == "window-grid":
                axes = {"t_max": (total, total - 2, total - 4, total - 6, total - 8),
                        "t_m": (5, 10, 15, 20, 25)}
            elif args.scenario == "schedule-grid":
                axes = {"schedule": ("linear", "cosine", "exponential"),
                        "t_m": (20, 25, 30, 35, 40, 45, 50)}
            else:  # guidance-grid
                data = config.to_dict()
                data["manipulation"] = {
                    "kind": "guidance",
                    "schedule": {"kind": "constant", "t_min": 0, "t_max": total,
                                 "amplitude": 1.0},
                    "beta": -0.3,
                    "condition_a": data["manipulation"]["condition_a"],
                    "condition_b": data["manipulation"]["condition_b"],
                }
                config = RunConfig.from_dict(data)
                axes = {"beta": (0.7, 0.3, 0.0, -0.3, -0.7),
                        "t_m": (10, 20, 30, 40, 50)}
            name = args.scenario.replace("-", "_")
            _sweep_and_write(config, denoiser, axes, writer, f"{name}.csv", f"{name}.svg")
    except BaseException:
        writer.discard()
        raise
    finally:
        _close_denoiser(denoiser)
    _announce(config, writer)
    return 0


def cmd_serve(args) -> int:
    config = _load_config(args)
    denoiser = config.build_denoiser()
    if args.tcp is not None:
        serve_tcp(denoiser, port=args.tcp)
        return 0
    serve_stream(denoiser, sys.stdin, sys.stdout)
    return 0


def cmd_report(args) -> int:
    config = _load_config(args)
    denoiser = config.build_denoiser()
    conditions = config.build_conditions()
    c = conditions[args.condition]
    schedule = config.build_noise_schedule()
    t_values = tuple(int(v) for v in (args.t_sample or [50, 100, 200]))
    rows = inversion_report(denoiser, c, schedule, t_values, args.samples, config.seed)
    writer = ArtifactWriter(config.output.directory)
    try:
        if "csv" in config.output.formats:
            writer.write_text("inversion_report.csv", table_csv(
                ["t_sample", "mean_rel_error", "max_rel_error", "seed"],
                [[r.t_sample, r.mean_rel_error, r.max_rel_error, config.seed]
                 for r in rows]))
    except BaseException:
        writer.discard()
        raise
    _announce(config, writer)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diffpath",
        description="deterministic sampling-path engine with editing operators")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, preset=False, condition=False, remote=False):
        p.add_argument("--config", help="path to a JSON run config (default: bundled demo)")
        p.add_argument("--set", action="append", metavar="PATH=VALUE",
                       help="override a config entry by dotted path")
        p.add_argument("--output", help="override the output directory")
        if preset:
            p.add_argument("--preset", help="named manipulation preset")
        if condition:
            p.add_argument("--condition", default="a", help="condition name (default: a)")
        if remote:
            p.add_argument("--remote", metavar="SPEC",
                           help="use a remote denoiser: 'tcp:HOST:PORT' or 'cmd:ARGV...'")

    p = sub.add_parser("generate", help="run one generation pass")
    common(p, condition=True, remote=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("invert", help="invert a sampled clean latent and report the round trip")
    common(p, condition=True)
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("edit", help="run the configured manipulation once and score it")
    common(p, preset=True, remote=True)
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("sweep", help="evaluate a grid of manipulation parameters")
    common(p, preset=True, remote=True)
    p.add_argument("--axis", action="append", metavar="NAME=V1,V2,...",
                   help="sweep axis (t_max, t_min, t_m, schedule, weight, beta)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("demo", help="run a canned scenario")
    common(p, preset=True, remote=True)
    p.add_argument("--scenario", choices=DEMO_SCENARIOS, default="prompt-switch")
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("report", help="inversion round-trip error table")
    common(p, condition=True)
    p.add_argument("--samples", type=int, default=8)
    p.add_argument("--t-sample", type=int, action="append", dest="t_sample",
                   help="grid size to test (repeatable)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("serve", help="answer wire-protocol requests for the configured model")
    common(p)
    p.add_argument("--tcp", type=int, default=None, metavar="PORT",
                   help="listen on TCP instead of stdio")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("config", help="print the canonical form of a config")
    common(p, preset=True)
    p.set_defaults(func=cmd_config)
    return parser


def cmd_config(args) -> int:
    config = _load_config(args)
    sys.stdout.write(canonical_json(config))
    print(f"seed={config.seed} config_digest={config_digest(config)}", file=sys.stderr)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParameterError, KeyError, FileNotFoundError,
            json.JSONDecodeError) as err:
        detail = str(err).replace("\n", " ")
        print(f'diffpath-error kind=validation message="{detail}"', file=sys.stderr)
        return 1
    except BrokenPipeError:
        return 2
    except Exception as err:
        detail = str(err).replace("\n", " ")
        print(f'diffpath-error kind=runtime message="{detail}"', file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
