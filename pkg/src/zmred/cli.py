"""Command-line front end.

Every run validates its arguments fully before any computation, builds
all output text in memory, and only then writes files, so a failed run
never leaves partial outputs.  Each output gets a flat key=value
manifest sidecar that fully determines the run.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import os
import sys

import numpy as np

from . import __version__
from .analysis import (
    basin_map,
    compare_timecourses,
    hopf_scan,
    memory_amplitude_map,
)
from .channels import ChannelKey, decompose_zms, enumerate_channels, rank_channels
from .dsl import DslError, parse_model, config_to_spec
from .memory import (
    integrate_full,
    integrate_qss,
    integrate_zmn,
    integrate_zms,
    memory_zmn,
)
from .qss import QssError
from .system import NonFiniteError
from .variants import linearize_memory, memory_gouasmi, memory_gqss
from .zoo import list_models, zoo, _ZOO

SOBOL_SEED = 12345


class UsageError(Exception):
    pass


class NumericalError(Exception):
    pass


def _fmt(x):
    return f"{x:.17g}"


def _build_model(args):
    """Resolve --model (zoo id or DSL file) plus overrides into a spec."""
    name = args.model
    overrides = {}
    if getattr(args, "position", None) is not None:
        overrides["p"] = args.position
    if name in _ZOO:
        if overrides and "p" not in _ZOO[name].default_params:
            raise UsageError(f"model {name!r} has no positional parameter")
        spec = zoo(name, params=overrides or None)
        ident = name
    elif os.path.exists(name):
        text = open(name, "r", encoding="utf-8").read()
        try:
            cfg = parse_model(text)
            spec = config_to_spec(cfg, params=overrides or None)
        except (DslError, KeyError) as exc:
            raise UsageError(f"cannot parse model file {name}: {exc}")
        ident = "file:" + hashlib.sha256(text.encode()).hexdigest()[:16]
    else:
        raise UsageError(f"unknown model {name!r} (not a zoo id or file)")
    return spec, ident


def _parse_ic(spec, text):
    """--ic "name=value,..." over subnetwork species; rest default."""
    xs = (spec.default_state[spec.sub].astype(float)
          if spec.default_state is not None else np.ones(spec.n_sub))
    if not text:
        return xs
    sub_names = [spec.species[i] for i in spec.sub]
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        if "=" not in item:
            raise UsageError(f"bad initial condition entry {item!r}")
        k, v = item.split("=", 1)
        k = k.strip()
        if k not in sub_names:
            raise UsageError(
                f"{k!r} is not a subnetwork species (choose from {sub_names})"
            )
        try:
            xs[sub_names.index(k)] = float(v)
        except ValueError:
            raise UsageError(f"bad numeric value {v!r} for {k}")
    return xs


def _parse_channels(spec, text):
    by_label = {k.label(spec): k for k in enumerate_channels(spec)}
    keys = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        if item not in by_label:
            raise UsageError(
                f"unknown channel {item!r}; available: {sorted(by_label)}"
            )
        keys.append(by_label[item])
    if not keys:
        raise UsageError("empty channel keep set")
    return keys


def _parse_ranges(spec, text):
    if not text:
        return None
    sub_names = [spec.species[i] for i in spec.sub]
    box = np.array(spec.sub_box() if spec.box is not None
                   else [[0.0, 1.0]] * spec.n_sub)
    for item in text.split(","):
        item = item.strip()
        if "=" not in item or ":" not in item:
            raise UsageError(f"bad range entry {item!r} (want name=lo:hi)")
        k, v = item.split("=", 1)
        if k.strip() not in sub_names:
            raise UsageError(f"{k.strip()!r} is not a subnetwork species")
        lo, hi = v.split(":", 1)
        try:
            box[sub_names.index(k.strip())] = [float(lo), float(hi)]
        except ValueError:
            raise UsageError(f"bad range bounds {v!r}")
    return box


def _parse_pair(text, what):
    try:
        lo, hi = text.split(":", 1)
        return float(lo), float(hi)
    except ValueError:
        raise UsageError(f"bad {what} {text!r} (want lo:hi)")


def _write_outputs(outputs):
    """outputs: list of (path, text); atomic per file."""
    for path, text in outputs:
        tmp = path + ".tmp"
        with open(tmp, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)


def _manifest(subcommand, spec, ident, extra, out_files):
    lines = [
        f"subcommand={subcommand}",
        f"model={ident}",
        f"version={__version__}",
        f"seed={SOBOL_SEED}",
    ]
    for k in sorted(spec.params):
        lines.append(f"param.{k}={_fmt(float(spec.params[k]))}")
    for k, v in extra.items():
        lines.append(f"{k}={v}")
    lines.append("outputs=" + ",".join(out_files))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

_SIM = {
    "full": integrate_full,
    "qss": integrate_qss,
    "zmn": integrate_zmn,
    "zms": integrate_zms,
}


def _cmd_simulate(args):
    spec, ident = _build_model(args)
    xs0 = _parse_ic(spec, args.ic)
    if args.t_end <= 0:
        raise UsageError("--t-end must be positive")
    if args.method == "zms-star":
        keep = _parse_channels(spec, args.keep_channels or "")
        from .channels import integrate_zms_star

        traj = integrate_zms_star(spec, xs0, args.t_end, keep)
    elif args.method in _SIM:
        traj = _SIM[args.method](spec, xs0, args.t_end)
    else:
        raise UsageError(f"unknown method {args.method!r}")

    buf = io.StringIO()
    names = [spec.species[i] for i in spec.sub] + [
        spec.species[i] for i in spec.bulk
    ]
    cols = [traj.states_sub, traj.states_bulk]
    if traj.aux_m is not None:
        names += [f"m_{spec.species[i]}" for i in spec.bulk]
        cols.append(traj.aux_m)
    data = np.concatenate(cols, axis=1)
    buf.write("t," + ",".join(names) + "\n")
    for t, row in zip(traj.times, data):
        buf.write(",".join([_fmt(t)] + [_fmt(v) for v in row]) + "\n")

    extra = {
        "method": args.method,
        "ic": ",".join(_fmt(v) for v in xs0),
        "t_end": _fmt(args.t_end),
    }
    if args.method == "zms-star":
        extra["keep_channels"] = ",".join(k.label(spec) for k in keep)
    _write_outputs([
        (args.out, buf.getvalue()),
        (args.out + ".manifest",
         _manifest("simulate", spec, ident, extra, [args.out])),
    ])
    return 0


def _cmd_basins(args):
    spec, ident = _build_model(args)
    method = {"zms-star": "zms"}.get(args.method, args.method)
    if method not in ("full", "qss", "zms"):
        raise UsageError(f"basins does not support method {args.method!r}")
    ranges = _parse_ranges(spec, args.range)
    if args.grid < 2:
        raise UsageError("--grid must be at least 2")
    grid = basin_map(spec, method, resolution=args.grid, ranges=ranges)
    buf = io.StringIO()
    xi, yi = np.meshgrid(grid.x_values, grid.y_values)
    buf.write("x1,x2,label,time_to_steady\n")
    for x, y, lab, tts in zip(xi.ravel(), yi.ravel(),
                              grid.labels.ravel(), grid.time_to_steady.ravel()):
        name = "timeout" if lab < 0 else str(int(lab))
        buf.write(f"{_fmt(x)},{_fmt(y)},{name},{_fmt(tts)}\n")
    extra = {"method": method, "grid": str(args.grid)}
    _write_outputs([
        (args.out, buf.getvalue()),
        (args.out + ".manifest",
         _manifest("basins", spec, ident, extra, [args.out])),
    ])
    return 0


def _cmd_hopf(args):
    spec, ident = _build_model(args)
    if args.method not in ("full", "qss", "zms"):
        raise UsageError(f"hopf does not support method {args.method!r}")
    a_range = _parse_pair(args.a_range, "--a-range")
    n_range = _parse_pair(args.n_range, "--n-range")
    if args.steps < 1:
        raise UsageError("--steps must be at least 1")
    curve = hopf_scan(spec, args.method, a_range, n_range, args.steps)
    buf = io.StringIO()
    buf.write("n,a_critical,method\n")
    for a, n in curve.points:
        buf.write(f"{_fmt(n)},{_fmt(a)},{curve.system_kind}\n")
    extra = {
        "method": args.method,
        "a_range": f"{_fmt(a_range[0])}:{_fmt(a_range[1])}",
        "n_range": f"{_fmt(n_range[0])}:{_fmt(n_range[1])}",
        "steps": str(args.steps),
        "no_bifurcation": "true" if not curve.points else "false",
    }
    _write_outputs([
        (args.out, buf.getvalue()),
        (args.out + ".manifest",
         _manifest("hopf", spec, ident, extra, [args.out])),
    ])
    return 0


def _cmd_memory_map(args):
    spec, ident = _build_model(args)
    ranges = _parse_ranges(spec, args.range)
    if args.grid < 2:
        raise UsageError("--grid must be at least 2")
    amp = memory_amplitude_map(spec, resolution=args.grid, ranges=ranges)
    buf = io.StringIO()
    names = [spec.species[i] for i in spec.sub]
    buf.write(f"{names[0]},{names[1]},amplitude\n")
    xi, yi = np.meshgrid(amp.x_values, amp.y_values)
    for x, y, a in zip(xi.ravel(), yi.ravel(), amp.amplitude.ravel()):
        buf.write(f"{_fmt(x)},{_fmt(y)},{_fmt(a)}\n")
    extra = {"grid": str(args.grid)}
    _write_outputs([
        (args.out, buf.getvalue()),
        (args.out + ".manifest",
         _manifest("memory-map", spec, ident, extra, [args.out])),
    ])
    return 0


def _cmd_decompose(args):
    spec, ident = _build_model(args)
    xs0 = _parse_ic(spec, args.ic)
    if args.t_end <= 0:
        raise UsageError("--t-end must be positive")
    series = decompose_zms(spec, xs0, args.t_end)
    ranked = rank_channels(series)

    buf = io.StringIO()
    labels = [s.key.label(spec) for s in series]
    buf.write("t," + ",".join(labels) + "\n")
    times = series[0].times
    data = np.column_stack([s.contribution for s in series])
    for t, row in zip(times, data):
        buf.write(",".join([_fmt(t)] + [_fmt(v) for v in row]) + "\n")

    sbuf = io.StringIO()
    sbuf.write("rank,channel,score\n")
    for i, s in enumerate(ranked, start=1):
        sbuf.write(f"{i},{s.key.label(spec)},{_fmt(s.score)}\n")

    extra = {"ic": ",".join(_fmt(v) for v in xs0), "t_end": _fmt(args.t_end)}
    outs = [args.out, args.summary]
    _write_outputs([
        (args.out, buf.getvalue()),
        (args.summary, sbuf.getvalue()),
        (args.out + ".manifest",
         _manifest("decompose", spec, ident, extra, outs)),
    ])
    return 0


def _cmd_kernel(args):
    spec, ident = _build_model(args)
    try:
        xs = np.array([float(v) for v in args.state.split(",")])
    except ValueError:
        raise UsageError(f"bad --state {args.state!r}")
    if len(xs) != spec.n_sub:
        raise UsageError(
            f"--state needs {spec.n_sub} subnetwork values, got {len(xs)}"
        )
    if args.tau_max <= 0:
        raise UsageError("--tau-max must be positive")
    taus = np.linspace(0.0, args.tau_max, args.points)
    sub_names = [spec.species[i] for i in spec.sub]
    if args.variant == "zmn":
        vals = memory_zmn(spec, xs, taus)
        names = sub_names
    elif args.variant == "gqss":
        vals = memory_gqss(spec, xs, taus)
        names = sub_names
    elif args.variant == "gouasmi":
        vals = memory_gouasmi(spec, xs, taus)
        names = sub_names
    elif args.variant == "linear":
        kern = linearize_memory(spec, xs)
        K = kern(taus)
        vals = K.reshape(len(taus), -1)
        names = [f"{a}_{b}" for a in sub_names for b in sub_names]
    else:
        raise UsageError(f"unknown kernel variant {args.variant!r}")
    buf = io.StringIO()
    buf.write("tau," + ",".join(names) + "\n")
    vals = np.atleast_2d(vals)
    for t, row in zip(taus, vals):
        buf.write(",".join([_fmt(t)] + [_fmt(v) for v in np.atleast_1d(row)]) + "\n")
    extra = {
        "variant": args.variant,
        "state": ",".join(_fmt(v) for v in xs),
        "tau_max": _fmt(args.tau_max),
    }
    _write_outputs([
        (args.out, buf.getvalue()),
        (args.out + ".manifest",
         _manifest("kernel", spec, ident, extra, [args.out])),
    ])
    return 0


def _cmd_list_models(args):
    for entry in list_models():
        sub = ",".join(entry.species[i] for i in entry.default_sub)
        bulk = ",".join(entry.species[i] for i in entry.default_bulk)
        prm = ",".join(f"{k}={v}" for k, v in sorted(entry.default_params.items()))
        print(f"{entry.id}: species=[{' '.join(entry.species)}] "
              f"sub=[{sub}] bulk=[{bulk}] params=[{prm}]")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_model_args(p, position=True):
    p.add_argument("--model", required=True, help="zoo id or model file path")
    if position:
        p.add_argument("--position", type=float, default=None,
                       help="positional input parameter p")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="zmred",
        description="Model order reduction with memory for reaction networks",
    )
    parser.add_argument("--jobs", type=int, default=1,
                        help="bound on internal parallel sweeps")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("simulate", help="integrate one trajectory")
    _add_model_args(p)
    p.add_argument("--method", required=True,
                   choices=["full", "qss", "zmn", "zms", "zms-star"])
    p.add_argument("--ic", default="", help='initial condition "x1=1.4,..."')
    p.add_argument("--t-end", type=float, required=True)
    p.add_argument("--keep-channels", default=None,
                   help='zms-star keep set "s:b:b\':s\',..."')
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("basins", help="basin-of-attraction map")
    _add_model_args(p)
    p.add_argument("--method", required=True, choices=["full", "qss", "zms"])
    p.add_argument("--axes", default=None, help="two subnetwork species")
    p.add_argument("--range", default=None, help='"x1=lo:hi,x2=lo:hi"')
    p.add_argument("--grid", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_basins)

    p = sub.add_parser("hopf", help="Hopf bifurcation scan")
    _add_model_args(p, position=False)
    p.add_argument("--method", required=True, choices=["full", "qss", "zms"])
    p.add_argument("--a-range", required=True)
    p.add_argument("--n-range", required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_hopf)

    p = sub.add_parser("memory-map", help="zero-lag memory amplitude map")
    _add_model_args(p)
    p.add_argument("--axes", default=None)
    p.add_argument("--range", default=None)
    p.add_argument("--grid", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_memory_map)

    p = sub.add_parser("decompose", help="channel decomposition of a run")
    _add_model_args(p)
    p.add_argument("--ic", default="")
    p.add_argument("--t-end", type=float, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--summary", required=True)
    p.set_defaults(func=_cmd_decompose)

    p = sub.add_parser("kernel", help="memory kernel along the lag axis")
    _add_model_args(p)
    p.add_argument("--state", required=True, help="subnetwork state values")
    p.add_argument("--tau-max", type=float, required=True)
    p.add_argument("--points", type=int, default=201)
    p.add_argument("--variant", required=True,
                   choices=["zmn", "gqss", "gouasmi", "linear"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_kernel)

    p = sub.add_parser("list-models", help="show the model registry")
    p.set_defaults(func=_cmd_list_models)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 2
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (QssError, NonFiniteError, NumericalError, RuntimeError,
            np.linalg.LinAlgError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
