"""Command-line entry points.

Subcommands wire the store, calibration, mixed-model, and analysis layers
into reproducible runs: ``sweep`` (temperature vs. log-likelihood gain),
``calibrate`` (ECE/CECE/HCE at a temperature), ``analyze`` (residual and
factor breakdowns at a chosen T*), and ``check`` (property verification on
random distributions).

Outputs are plain-text reports plus flat CSV tables for plotting; no
figures are rendered. Every output embeds the effective semantic
configuration (flags > config file > defaults). Execution-only knobs such
as the worker count are excluded from the echo so reruns at any
parallelism are byte-identical.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import analysis
from .analysis import (
    factor_partition,
    fit_at_temperature,
    model_specs,
    normalized_delta_mse,
    paper_grid,
    per_word_report,
    selective_sweep,
    surprisal_histograms,
    sweep,
    validate_grid,
    verify_theorems,
)
from .calibration import BinningScheme, EceAccumulator, empirical_log_upper, evaluate_stream
from .distrib import softmax_t
from .errors import SurpscaleError
from .lme import delta_llh
from .store import load_tables, read_archive

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2

_MODEL_FLAG = {"1": "model1", "2": "model2", "3": "model3",
               "surprisal-only": "surprisal_only"}
_SCOPE_FLAG = {"all": analysis.SCOPE_ALL, "single": analysis.SCOPE_SINGLE,
               "multi": analysis.SCOPE_MULTI}


@dataclass
class RunConfig:
    archive: str | None = None
    words: str | None = None
    rts: str | None = None
    out: str | None = None
    grid: str = "paper"
    model: str = "1"
    bins: int = 15
    scheme: str = "log"
    t: float = 1.0
    tstar: float | None = None
    scope: str = "all"
    seed: int = 0
    workers: int = 1
    trials: int = 10000
    top_n: int = 15

    def echo(self) -> str:
        """Deterministic provenance string; omits execution-only fields
        (worker count, output location) so reruns compare byte-identical."""
        payload = {
            f.name: getattr(self, f.name)
            for f in fields(self)
            if f.name not in ("workers", "out")
        }
        return json.dumps(payload, sort_keys=True)

    def grid_values(self) -> tuple[float, ...]:
        if self.grid == "paper":
            return paper_grid()
        try:
            values = [float(v) for v in self.grid.split(",") if v.strip()]
        except ValueError as exc:
            raise SurpscaleError(f"cannot parse grid {self.grid!r}") from exc
        return validate_grid(values)


def _build_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise SurpscaleError(f"config file not found: {path}")
        loaded = json.loads(path.read_text())
        for key, value in loaded.items():
            if not hasattr(cfg, key):
                raise SurpscaleError(f"unknown config key {key!r}")
            setattr(cfg, key, value)
    for f in fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            setattr(cfg, f.name, value)
    return cfg


def _require(cfg: RunConfig, *names: str) -> None:
    for name in names:
        value = getattr(cfg, name)
        if value is None:
            raise SurpscaleError(f"--{name.replace('_', '-')} is required")
        if name in ("archive", "words", "rts") and not Path(value).is_file():
            raise SurpscaleError(f"{name} file not found: {value}")


def _load_inputs(cfg: RunConfig, need_rts: bool = True):
    archive = read_archive(cfg.archive)
    rt_path = cfg.rts
    words, rts = load_tables(cfg.words, rt_path, token_count=len(archive))
    if need_rts and not rts:
        raise SurpscaleError("reading-time table is empty")
    return archive, words, rts


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fmt(value) -> str:
    if value is None:
        return "*"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, config_echo: str, header: list[str], rows) -> None:
    lines = [f"# config: {config_echo}", ",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _calibration_lines(tag: str, rep) -> list[str]:
    lines = [
        f"calibration [{tag}]",
        f"  scheme: {rep.scheme.kind} bins={rep.scheme.num_bins}"
        + (f" log_upper={rep.scheme.log_upper!r}" if rep.scheme.log_upper else ""),
        f"  n_samples: {rep.n_samples}",
        f"  ece: {rep.ece!r}",
        f"  cece: {rep.cece!r}",
    ]
    if rep.hce_ts is not None:
        lines.append(f"  hce_ts: {rep.hce_ts!r}")
    lines.append("  bin, lo, hi, mean_confidence, accuracy, count")
    for i, b in enumerate(rep.per_bin):
        lines.append(
            f"  {i}, {b.lo!r}, {b.hi!r}, {_fmt(b.mean_confidence)}, "
            f"{_fmt(b.accuracy)}, {b.count}"
        )
    return lines


def cmd_sweep(cfg: RunConfig) -> int:
    _require(cfg, "archive", "words", "rts", "out")
    archive, words, rts = _load_inputs(cfg)
    grid = cfg.grid_values()
    base_spec, target_spec = model_specs(
        _MODEL_FLAG[cfg.model], with_zones=all(w.zones for w in words)
    )
    report = sweep(
        archive, words, rts, base_spec, target_spec, grid,
        scope=_SCOPE_FLAG[cfg.scope], workers=cfg.workers, bins=cfg.bins,
        scheme_kind=cfg.scheme,
    )
    out = _out_dir(cfg)

    _write_csv(
        out / "sweep_curve.csv",
        cfg.echo(),
        ["t", "delta_llh_x1000", "converged"],
        [(p.t, p.delta_llh_x1000, int(p.target_converged)) for p in report.points],
    )

    lines = ["temperature sweep", f"config: {cfg.echo()}", ""]
    lines.append(f"n_obs: {report.n_obs}")
    lines.append(f"base_converged: {report.base_converged}")
    lines.append(f"scope: {report.scope}")
    lines.append("")
    lines.append("T, delta_llh_x1000")
    for p in report.points:
        mark = "" if p.target_converged else " *"
        lines.append(f"{p.t:g}, {p.delta_llh_x1000!r}{mark}")
    lines.append("")
    lines.append(f"t_star: {_fmt(report.t_star)}")
    lines.append(f"delta_llh_improvement_pct: {_fmt(report.improvement_pct)}")
    lines.append("")
    if report.calibration_t1 is not None:
        lines.extend(_calibration_lines("T=1", report.calibration_t1))
        lines.append("")
    if report.calibration_tstar is not None:
        lines.extend(_calibration_lines("T=T*", report.calibration_tstar))
    (out / "sweep_report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")

    all_converged = report.base_converged and all(p.target_converged for p in report.points)
    return EXIT_OK if all_converged else EXIT_NOT_CONVERGED


def _token_stream(archive, mask=None):
    for i, tok in enumerate(archive.iter_tokens()):
        if mask is None or mask[i]:
            yield np.asarray(tok.logits, dtype=np.float64), tok.gold_id


def _scheme_for(archive, kind: str, bins: int, t: float, mask=None) -> BinningScheme:
    if kind == "equal":
        return BinningScheme.equal(bins)
    confs = [float(np.max(softmax_t(z, t))) for z, _ in _token_stream(archive, mask)]
    return BinningScheme.log(bins, log_upper=empirical_log_upper(confs))


def _subset_ece(archive, mask, t: float, scheme: BinningScheme) -> float | None:
    acc = EceAccumulator(scheme)
    seen = False
    for z, gold in _token_stream(archive, mask):
        p = softmax_t(z, t)
        pred = int(np.argmax(p))
        acc.add(float(p[pred]), float(pred == gold))
        seen = True
    return acc.value() if seen else None


def cmd_calibrate(cfg: RunConfig) -> int:
    _require(cfg, "archive", "words", "rts", "out")
    archive, words, _ = _load_inputs(cfg, need_rts=False)
    out = _out_dir(cfg)
    t = float(cfg.t)

    token_multi = np.zeros(len(archive), dtype=bool)
    for w in words:
        if w.n_tokens > 1:
            token_multi[w.token_start : w.token_end] = True

    rows = []
    reports = {}
    for kind in ("equal", "log"):
        scheme = _scheme_for(archive, kind, cfg.bins, t)
        rep = evaluate_stream(_token_stream(archive), t, scheme, t_star=cfg.tstar)
        reports[kind] = rep
        rows.append(("ece", kind, "all", rep.ece))
        rows.append(("cece", kind, "all", rep.cece))
        if rep.hce_ts is not None:
            rows.append(("hce_ts", kind, "all", rep.hce_ts))
        rows.append(("ece", kind, "single_token_words",
                     _subset_ece(archive, ~token_multi, t, scheme)))
        rows.append(("ece", kind, "multi_token_words",
                     _subset_ece(archive, token_multi, t, scheme)))

    _write_csv(out / "calibration_metrics.csv", cfg.echo(),
               ["metric", "scheme", "subset", "value"], rows)

    lines = ["calibration", f"config: {cfg.echo()}", "", f"t: {t!r}",
             f"tstar: {_fmt(cfg.tstar)}", ""]
    for kind in ("equal", "log"):
        lines.extend(_calibration_lines(kind, reports[kind]))
        lines.append("")
    (out / "calibration_report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_analyze(cfg: RunConfig) -> int:
    _require(cfg, "archive", "words", "rts", "out", "tstar")
    archive, words, rts = _load_inputs(cfg)
    out = _out_dir(cfg)
    t_star = float(cfg.tstar)
    variant = _MODEL_FLAG[cfg.model]
    _, target_spec = model_specs(variant, with_zones=all(w.zones for w in words))

    fit_t1, obs = fit_at_temperature(archive, words, rts, target_spec, 1.0)
    fit_ts, _ = fit_at_temperature(archive, words, rts, target_spec, t_star)

    subsets = factor_partition(words, archive, t_star)
    down_ids = {
        wid for wid, down in analysis.probability_direction(words, archive, t_star).items()
        if down
    }
    mse_rows = []
    direction_rows = []
    for s in subsets:
        dmse = analysis.delta_mse(fit_t1, fit_ts, s, obs.word_ids)
        ndmse = None if dmse is None else normalized_delta_mse(dmse, s.ratio)
        n_rows = int(np.isin(obs.word_ids, list(s.word_ids)).sum())
        mse_rows.append((s.name, len(s.word_ids), s.ratio, s.marker, n_rows, dmse, ndmse))
        if not s.name.endswith(("_p_down", "_p_up")) and s.name not in ("p_down", "p_up"):
            total = len(s.word_ids)
            down = len(s.word_ids & down_ids)
            direction_rows.append(
                (s.name, total, s.marker, down / total if total else None)
            )

    _write_csv(out / "delta_mse_by_factor.csv", cfg.echo(),
               ["factor", "n_words", "ratio", "marker", "n_rows", "delta_mse",
                "normalized_delta_mse"], mse_rows)
    _write_csv(out / "probability_direction.csv", cfg.echo(),
               ["factor", "n_words", "marker", "p_down_ratio"], direction_rows)

    top = per_word_report(words, fit_t1, fit_ts, obs.word_ids, archive, t_star, cfg.top_n)
    _write_csv(out / "per_word_top.csv", cfg.echo(),
               ["text", "frequency", "is_ne", "p_down", "p_up", "beneficial",
                "unbeneficial"],
               [(r.text, r.frequency, int(r.is_ne), r.p_down, r.p_up, r.beneficial,
                 r.unbeneficial) for r in top])

    grid = cfg.grid_values()
    base_spec, target_spec = model_specs(variant, with_zones=all(w.zones for w in words))
    curve_rows = []
    non_converged = not (fit_t1.converged and fit_ts.converged)
    for scope_flag, scope in _SCOPE_FLAG.items():
        rep = selective_sweep(archive, words, rts, base_spec, target_spec, grid,
                              scope=scope, workers=cfg.workers, with_calibration=False)
        for p in rep.points:
            curve_rows.append((scope_flag, p.t, p.delta_llh_x1000, int(p.target_converged)))
        non_converged = non_converged or not all(p.target_converged for p in rep.points)
    _write_csv(out / "selective_curves.csv", cfg.echo(),
               ["scope", "t", "delta_llh_x1000", "converged"], curve_rows)

    hist = surprisal_histograms(words, archive, t_star, bins=30)
    _write_csv(out / "surprisal_histograms.csv", cfg.echo(),
               ["token_group", "temperature", "lo", "hi", "count"], hist)

    if fit_t1.converged and fit_ts.converged:
        llh_line = f"delta_llh_tstar_vs_t1_x1000: {(delta_llh(fit_ts, fit_t1) * 1000.0)!r}"
    else:
        llh_line = "delta_llh_tstar_vs_t1_x1000: *"
    lines = ["analysis", f"config: {cfg.echo()}", "",
             f"t_star: {t_star!r}",
             f"n_obs: {obs.n}",
             f"fit_t1_converged: {fit_t1.converged}",
             f"fit_tstar_converged: {fit_ts.converged}",
             llh_line,
             "",
             "factor, ratio, marker, delta_mse (insufficient subsets marked)"]
    for name, n_words_, ratio, marker, n_rows, dmse, _ in mse_rows:
        lines.append(f"{name}, {ratio!r}, {marker or '-'}, {_fmt(dmse)}")
    (out / "analysis_report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return EXIT_NOT_CONVERGED if non_converged else EXIT_OK


def cmd_check(cfg: RunConfig) -> int:
    archive = None
    if cfg.archive is not None:
        _require(cfg, "archive")
        archive = read_archive(cfg.archive)
    report = verify_theorems(
        seed=cfg.seed,
        trials=cfg.trials,
        archive=archive,
        t_star=cfg.tstar if cfg.tstar is not None else 2.5,
    )
    lines = ["theorem checks", f"config: {cfg.echo()}", "",
             f"trials_per_k: {report.trials}",
             f"k_values: {list(report.k_values)}",
             f"monotonicity_violations: {report.monotonicity_violations}",
             f"limit_violations: {report.limit_violations}",
             f"bound_violations: {report.bound_violations}"]
    if report.alignment is not None:
        a = report.alignment
        lines.append(f"mean_scaled_surprisal: {a.mean_s}")
        lines.append(f"mean_renyi_entropy: {a.mean_h}")
        lines.append(f"tstar_closest_to_alpha_half: {a.closest_to_half}")
    for kind, k, dist in report.examples:
        lines.append(f"violation[{kind}] K={k}: {dist[:8]}...")
    lines.append(f"passed: {report.passed}")
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if cfg.out:
        (_out_dir(cfg) / "theorem_report.txt").write_text(text, encoding="utf-8")
    return EXIT_OK if report.passed else EXIT_ERROR


def _positive_int(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return n


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--archive", help="logit archive path")
    p.add_argument("--words", help="word table path")
    p.add_argument("--rts", help="reading-time table path")
    p.add_argument("--out", help="output directory")
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("--grid", help="'paper' or comma-separated temperatures")
    p.add_argument("--model", choices=sorted(_MODEL_FLAG), help="model variant")
    p.add_argument("--bins", type=_positive_int, help="calibration bin count M")
    p.add_argument("--scheme", choices=["equal", "log"], help="binning scheme")
    p.add_argument("--t", type=float, help="evaluation temperature")
    p.add_argument("--tstar", type=float, help="reading-time-optimal temperature")
    p.add_argument("--scope", choices=sorted(_SCOPE_FLAG), help="scaling scope")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--workers", type=_positive_int, help="parallel grid workers")
    p.add_argument("--trials", type=_positive_int, help="verification trials per K")
    p.add_argument("--top-n", dest="top_n", type=int, help="rows in per-word report")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="surpscale",
        description="Temperature-scaled surprisal, calibration, and "
                    "reading-time regression toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func in (
        ("sweep", cmd_sweep),
        ("calibrate", cmd_calibrate),
        ("analyze", cmd_analyze),
        ("check", cmd_check),
    ):
        p = sub.add_parser(name)
        _add_common(p)
        p.set_defaults(func=func)

    args = parser.parse_args(argv)
    try:
        cfg = _build_config(args)
        return args.func(cfg)
    except (SurpscaleError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
