"""Command-line front end: curves, engine cross-checks, branch logs and Monte Carlo runs."""

from __future__ import annotations

import argparse
import csv
import io
import sys
from dataclasses import dataclass, fields, replace
from decimal import ROUND_HALF_EVEN, Context, Decimal
from fractions import Fraction
from pathlib import Path

from . import engine
from .ensembles import (
    CurvePoint,
    GhzDiagonalEnsemble,
    PhaseEnsemble,
    as_fraction,
    channel_to_ensemble,
    iter_grid,
    load_ensemble,
    symmetric_ensemble,
    yields_and_fidelities,
)
from .montecarlo import McConfig, compare, exact_statistics, mc_run, sweep_config
from .register import BellLabel, GhzLabel

PROTOCOLS = ("conventional", "recycling", "link", "phaseflip", "full-mepp")
ENGINES = ("analytic", "enumerate", "montecarlo")
DIGITS = 12
MC_SIGMAS = 4

EXIT_OK, EXIT_MISMATCH, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    protocol: str = "full-mepp"
    n: int = 3
    f: tuple | None = None
    f0: Fraction | None = None
    p: Fraction | None = None
    q: Fraction | None = None
    p0: Fraction | None = None
    pair_f0: Fraction | None = None
    ensemble: str | None = None
    ensemble_b: str | None = None
    junction: str | None = None
    engines: tuple = ("analytic", "enumerate")
    sweep: tuple | None = None
    trials: int = 100000
    seed: int = 0
    out: str | None = None


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key in ("n", "trials", "seed"):
        v = int(raw)
        if key == "seed" and not 0 <= v < 2 ** 64:
            raise ValueError("seed must fit in 64 unsigned bits")
        return v
    if key in ("f0", "p", "q", "p0", "pair_f0"):
        return as_fraction(raw)
    if key == "f":
        return tuple(as_fraction(x) for x in raw.replace(",", " ").split())
    if key == "engines":
        engines = tuple(x.strip() for x in raw.split(",") if x.strip())
        if engines == ("all",):
            return ENGINES
        bad = [x for x in engines if x not in ENGINES]
        if bad or not engines:
            raise ValueError(f"engines must be a nonempty subset of {', '.join(ENGINES)}")
        return engines
    if key == "sweep":
        parts = [x.strip() for x in raw.split(",")]
        if len(parts) != 3:
            raise ValueError("sweep needs start, stop, steps")
        start, stop, steps = as_fraction(parts[0]), as_fraction(parts[1]), int(parts[2])
        list(iter_grid(start, stop, steps))  # validates the range
        return (start, stop, steps)
    if key == "protocol":
        if raw not in PROTOCOLS:
            raise ValueError(f"unknown protocol; choose from {', '.join(PROTOCOLS)}")
        return raw
    return raw


KEYS = {f.name for f in fields(ScenarioConfig)}


def parse_config_text(text: str, where: str = "<config>") -> dict:
    """``key = value`` lines with ``#`` comments into typed fields."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        key, sep, raw = body.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"{where}:{lineno}: expected 'key = value', got {body!r}")
        if key not in KEYS:
            raise ConfigError(f"{where}:{lineno}: unknown field {key!r}")
        if key in values:
            raise ConfigError(f"{where}:{lineno}: field {key!r} given twice")
        try:
            values[key] = _parse_value(key, raw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{where}:{lineno}: field {key!r}: {exc}") from None
    return values


def build_config(args: argparse.Namespace) -> ScenarioConfig:
    values = {}
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc.strerror}") from None
        values.update(parse_config_text(text, args.config))
    for key in ("protocol", "n", "f0", "engines", "trials", "seed", "out", "sweep"):
        raw = getattr(args, key, None)
        if raw is not None:
            try:
                values[key] = _parse_value(key, str(raw))
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"--{key}: {exc}") from None
    cfg = ScenarioConfig(**values)
    if cfg.trials < 1:
        raise ConfigError("field 'trials': must be positive")
    if cfg.sweep and any(getattr(cfg, k) is not None for k in ("f", "p", "q", "ensemble", "ensemble_b")):
        raise ConfigError("field 'sweep': sweeps need symmetric-noise input, not an explicit ensemble")
    return cfg


# -- inputs --------------------------------------------------------------------

def _load(path: str) -> GhzDiagonalEnsemble:
    try:
        return load_ensemble(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read ensemble {path}: {exc.strerror}") from None
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def resolve_input(cfg: ScenarioConfig, point=None):
    """Ensemble(s) for the configured protocol; ``point`` overrides the swept value."""
    proto = cfg.protocol
    try:
        if proto == "phaseflip":
            if point is not None:
                return PhaseEnsemble.from_p0(point)
            if cfg.p0 is not None:
                return PhaseEnsemble.from_p0(cfg.p0)
            if cfg.q is not None:
                return channel_to_ensemble(cfg.n, 0, cfg.q)[1]
            raise ConfigError("phaseflip needs 'p0' or 'q'")
        if proto == "link":
            if point is not None or cfg.pair_f0 is not None:
                f = point if point is not None else cfg.pair_f0
                a, b = sweep_config("link", f, 1, 0).input
                return a, b
            if cfg.ensemble and cfg.ensemble_b:
                return _load(cfg.ensemble), _load(cfg.ensemble_b)
            raise ConfigError("link needs 'pair_f0' or both 'ensemble' and 'ensemble_b'")
        if point is not None:
            return symmetric_ensemble(point, cfg.n)
        if cfg.f is not None:
            try:
                return GhzDiagonalEnsemble.from_vector(cfg.f)
            except ValueError as exc:
                raise ConfigError(f"field 'f': {exc}") from None
        if cfg.f0 is not None:
            return symmetric_ensemble(cfg.f0, cfg.n)
        if cfg.p is not None or cfg.q is not None:
            return channel_to_ensemble(cfg.n, cfg.p or 0, cfg.q or 0)[0]
        if cfg.ensemble:
            return _load(cfg.ensemble)
        raise ConfigError(f"{proto} needs one of 'f', 'f0', 'p'/'q' or 'ensemble'")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def _mc_config(cfg: ScenarioConfig, inp, point_index: int = 0) -> McConfig:
    n = cfg.n if cfg.protocol == "phaseflip" else (inp[0].n if cfg.protocol == "link" else inp.n)
    return McConfig(cfg.protocol, cfg.trials, cfg.seed, inp, n=n, junction=cfg.junction,
                    point=point_index)


# -- engines -------------------------------------------------------------------

def analytic_stats(cfg: ScenarioConfig, inp) -> dict:
    return exact_statistics(_mc_config(replace(cfg, trials=1), inp))


def _label_key(final: GhzLabel) -> str:
    return str(BellLabel.from_ghz(final)) if final.n == 2 else str(final)


def enumerate_stats(cfg: ScenarioConfig, inp) -> dict:
    proto = cfg.protocol
    out: dict = {}
    if proto == "full-mepp":
        cp = engine.run_full_mepp(inp)
        return {k: getattr(cp, k) for k in ("Y_c", "P_3to2", "Y_2to3", "Y_e", "F_c", "F_2", "F_2to3", "F_e")
                if getattr(cp, k) is not None}
    if proto == "recycling":
        rec = engine.run_recycling(inp)
        subs = {ps: s for ps, s in rec.subsystems.items() if s.total}
        out["yield"] = rec.recycled_weight
        for parties, s in subs.items():
            out[f"P:{''.join(parties)}"] = s.total
            out[f"F:{''.join(parties)}"] = s.fidelity()
        return out
    if proto == "conventional":
        rep = engine.run_conventional_bitflip(inp)
    elif proto == "link":
        a, b = inp
        rep = engine.run_link(a, b, cfg.junction or _shared(a, b))
    else:
        rep = engine.run_phaseflip(inp, cfg.n)
    out["yield"] = rep.kept_weight
    for lab, w in rep.output.items():
        out[f"F:{_label_key(lab)}"] = w
    return out


def _shared(a, b):
    return tuple(sorted(set(a.parties) & set(b.parties)))


def fmt(x) -> str:
    """12 significant digits, round half even, plain positional notation."""
    ctx = Context(prec=DIGITS, rounding=ROUND_HALF_EVEN)
    if isinstance(x, float):
        d = ctx.plus(Decimal(repr(x)))
    else:
        x = Fraction(x)
        d = ctx.divide(Decimal(x.numerator), Decimal(x.denominator))
    if d == 0:
        return "0." + "0" * (DIGITS - 1)
    return format(d.quantize(Decimal(1).scaleb(d.adjusted() - (DIGITS - 1))), "f")


def _cell(values: dict, key: str) -> str:
    # blank when the statistic is undefined (nothing was kept to average over)
    return fmt(values[key]) if key in values else ""


def _exact_str(x: Fraction) -> str:
    return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"


# -- subcommands ----------------------------------------------------------------

def _grid(cfg: ScenarioConfig):
    if not cfg.sweep:
        raise ConfigError("field 'sweep': this command needs a sweep (start, stop, steps)")
    return list(iter_grid(*cfg.sweep))


def curve_rows(cfg: ScenarioConfig) -> tuple[list[str], list[list[str]], bool]:
    """CSV header and rows; the flag reports engine agreement."""
    header = list(CurvePoint.CSV_FIELDS)
    keys = header[1:]
    mc = "montecarlo" in cfg.engines
    if mc:
        header += [f"mc_{k}" for k in keys] + [f"stderr_{k}" for k in keys]
    rows, agree = [], True
    for i, f0 in enumerate(_grid(cfg)):
        cp = yields_and_fidelities(f0)
        row = [fmt(v) for v in cp.row().values()]
        if "enumerate" in cfg.engines:
            en = engine.run_full_mepp(symmetric_ensemble(f0))
            agree &= all(getattr(en, k) in (None, getattr(cp, k)) for k in keys)
        if mc:
            est = mc_run(McConfig("full-mepp", cfg.trials, cfg.seed, symmetric_ensemble(f0), point=i))
            row += [_cell(est.stats, k) for k in keys] + [_cell(est.stderr, k) for k in keys]
            agree &= all(d.sigmas <= MC_SIGMAS for d in compare(est, exact_statistics(
                McConfig("full-mepp", 1, 0, symmetric_ensemble(f0)))) if d.key in keys)
        rows.append(row)
    return header, rows, agree


def _emit(text: str, out: str | None):
    if out is None:
        sys.stdout.write(text)
        return
    try:
        Path(out).write_text(text)
    except OSError as exc:
        raise ConfigError(f"cannot write {out}: {exc.strerror}") from None


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def cmd_curves(cfg: ScenarioConfig) -> int:
    header, rows, agree = curve_rows(cfg)
    _emit(_csv_text(header, rows), cfg.out)
    if not agree:
        print("engines disagree on at least one curve point", file=sys.stderr)
    return EXIT_OK if agree else EXIT_MISMATCH


def run_point(cfg: ScenarioConfig, inp, index: int = 0) -> tuple[list[str], bool]:
    lines, ok = [], True
    results = {}
    if "analytic" in cfg.engines:
        results["analytic"] = analytic_stats(cfg, inp)
    if "enumerate" in cfg.engines:
        results["enumerate"] = enumerate_stats(cfg, inp)
    for name, stats in results.items():
        for key, v in stats.items():
            lines.append(f"{name} {key} {fmt(v)} ({_exact_str(Fraction(v))})")
    if "analytic" in results and "enumerate" in results:
        a, e = results["analytic"], results["enumerate"]
        for key in sorted(set(a) | set(e)):
            if a.get(key, Fraction(0)) != e.get(key, Fraction(0)):
                ok = False
                lines.append(f"MISMATCH {key}: analytic {a.get(key)} enumerate {e.get(key)}")
    if "montecarlo" in cfg.engines:
        est = mc_run(_mc_config(cfg, inp, index))
        reference = results.get("analytic") or results.get("enumerate") or analytic_stats(cfg, inp)
        for d in compare(est, reference):
            lines.append(f"montecarlo {d.key} {fmt(d.estimate)} +- {fmt(d.stderr)} ({d.sigmas:.2f} sigma)")
            if d.sigmas > MC_SIGMAS:
                ok = False
                lines.append(f"MISMATCH {d.key}: Monte Carlo beyond {MC_SIGMAS} sigma")
        lines.append(f"montecarlo rng {est.rng} seed {cfg.seed} trials {est.trials}")
    return lines, ok


def cmd_run(cfg: ScenarioConfig) -> int:
    points = [(None, i) for i in range(1)] if not cfg.sweep else [(v, i) for i, v in enumerate(_grid(cfg))]
    out, ok = [], True
    for value, i in points:
        inp = resolve_input(cfg, value)
        if value is not None:
            out.append(f"# point {fmt(value)}")
        lines, good = run_point(cfg, inp, i)
        out += lines
        ok &= good
    out.append("agreement" if ok else "DISAGREEMENT")
    _emit("\n".join(out) + "\n", cfg.out)
    return EXIT_OK if ok else EXIT_MISMATCH


def explain_report(cfg: ScenarioConfig):
    inp = resolve_input(cfg)
    proto = cfg.protocol
    if proto == "conventional":
        return engine.run_conventional_bitflip(inp)
    if proto == "recycling":
        return engine.run_recycling(inp).report
    if proto == "link":
        a, b = inp
        return engine.run_link(a, b, cfg.junction or _shared(a, b))
    if proto == "phaseflip":
        return engine.run_phaseflip(inp, cfg.n)
    raise ConfigError("explain covers conventional, recycling, link and phaseflip")


def cmd_explain(cfg: ScenarioConfig) -> int:
    try:
        rep = explain_report(cfg)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    lines = rep.log_lines()
    total = rep.total_probability
    lines.append(f"# branches={len(rep.branches)} total_p={_exact_str(total)} "
                 f"kept={_exact_str(rep.kept_weight)}")
    _emit("\n".join(lines) + "\n", cfg.out)
    return EXIT_OK if total == 1 else EXIT_MISMATCH


def cmd_mc(cfg: ScenarioConfig) -> int:
    proto = cfg.protocol
    axis = {"phaseflip": "p0", "link": "F0b"}.get(proto, "F0")
    if cfg.sweep:
        points = [(v, resolve_input(cfg, v)) for v in _grid(cfg)]
    else:
        points = [(None, resolve_input(cfg))]
    ests = [(v, inp, mc_run(_mc_config(cfg, inp, i))) for i, (v, inp) in enumerate(points)]
    if proto == "full-mepp":
        keys = list(CurvePoint.CSV_FIELDS[1:])
    else:
        keys = sorted({k for _, _, e in ests for k in e.stats})
    header = [axis] + keys + [f"stderr_{k}" for k in keys] + ["trials", "seed", "rng"]
    rows, ok = [], True
    for v, inp, est in ests:
        ref = analytic_stats(cfg, inp)
        ok &= all(d.sigmas <= MC_SIGMAS for d in compare(est, ref))
        rows.append([fmt(v) if v is not None else ""]
                    + [_cell(est.stats, k) for k in keys]
                    + [_cell(est.stderr, k) for k in keys]
                    + [str(est.trials), str(cfg.seed), est.rng])
    _emit(_csv_text(header, rows), cfg.out)
    return EXIT_OK if ok else EXIT_MISMATCH


COMMANDS = {"curves": cmd_curves, "run": cmd_run, "explain": cmd_explain, "mc": cmd_mc}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ghz-purify", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value scenario file")
        p.add_argument("--f0", help="target fidelity under symmetric noise (rational or decimal)")
        p.add_argument("--n", type=int, help="photon count")
        p.add_argument("--protocol", choices=PROTOCOLS)
        p.add_argument("--engines", help="comma list of analytic, enumerate, montecarlo (or 'all')")
        p.add_argument("--trials", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--sweep", help="start,stop,steps over F0 (steps = number of intervals)")
        p.add_argument("--out", help="output path (default: stdout)")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = build_config(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
