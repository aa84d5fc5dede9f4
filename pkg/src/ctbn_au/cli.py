"""
Command-line entry point ``ctbn-au``.

Every subcommand reads its options from flags, then from the JSON file given
with ``--config`` (top-level keys, or keys under a section named after the
subcommand), then from built-in defaults.  Output goes to ``--output-dir``,
whose default comes from ``CTBN_AU_OUTPUT_DIR`` (else the current
directory).  Files are written atomically.

Failures print one JSON record on standard error, for example
``{"error": "ParseError", "message": "...", "file": "m.json", "line": 3}``,
followed by a human-readable line, and exit with status 1.
"""
import argparse
import json
import logging
import os
import sys
import tempfile
import warnings
from pathlib import Path

import numpy as np

from . import aurec, metrics
from .errors import CtbnError, EmptyData, LengthMismatch, ParseError, ZeroDwellWarning
from .inference import GibbsConfig, exact_posterior, format_track, gibbs_posterior, parse_track, track_columns
from .learning import fit
from .model import loads_model, dumps_model
from .trajectory import DEFAULT_FRAME_RATE, format_trajectory, frame_midpoints, parse_trajectory, sample_trajectory

log = logging.getLogger("ctbn_au")

OUTPUT_DIR_ENV = "CTBN_AU_OUTPUT_DIR"


class CommandError(Exception):
    """An error attributed to an input file."""

    def __init__(self, exc, path=None):
        super().__init__(str(exc))
        self.exc = exc
        self.path = path


# --------------------------------------------------------------------------
# I/O helpers
# --------------------------------------------------------------------------


def write_atomic(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read(path):
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CommandError(ParseError(f"cannot read file: {exc.strerror}"), path) from None


def _load(path, parser, *args):
    text = _read(path)
    try:
        return parser(text, *args)
    except CtbnError as exc:
        raise CommandError(exc, path) from None


def _stem(path):
    name = Path(path).name
    return name.split(".", 1)[0]


def _out(args, name):
    return Path(args.output_dir) / name


def _gibbs(args):
    return GibbsConfig(
        n_samples=args.n_samples,
        burn_in=args.burn_in,
        thinning=args.thinning,
        rng_seed=args.seed,
        uniformization_factor=args.uniformization_factor,
    )


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def cmd_sample(args):
    model = _load(args.model, loads_model)
    rng = np.random.default_rng(args.seed)
    width = max(4, len(str(max(args.count - 1, 0))))
    for i in range(args.count):
        traj = sample_trajectory(model, args.horizon, rng)
        write_atomic(_out(args, f"{args.prefix}{i:0{width}d}.traj"), format_trajectory(traj, model))
    log.info("wrote %d trajectories", args.count)


def cmd_learn(args):
    structure = _load(args.structure, loads_model)
    if not args.trajectories:
        raise EmptyData("no trajectory files given")
    data = [_load(p, parse_trajectory, structure) for p in args.trajectories]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ZeroDwellWarning)
        model, stats = fit(structure, data, args.pseudo_dwell, args.pseudo_count)
    write_atomic(_out(args, args.out), dumps_model(model))
    write_atomic(_out(args, args.stats), stats.dumps())
    lines = [
        f"trajectories,{stats.n_trajectories}",
        f"total_time,{format(stats.total_time, '.9g')}",
        f"pseudo_dwell,{format(args.pseudo_dwell, '.9g')}",
        f"pseudo_count,{format(args.pseudo_count, '.9g')}",
    ]
    for name, ctx, state in stats.zero_dwell_contexts():
        lines.append(f"zero_dwell,{name},{ctx},{model.node(name).state_labels[state]}")
    write_atomic(_out(args, args.report), "\n".join(lines) + "\n")
    for w in caught:
        log.warning("%s", w.message)


def _segments(path, alphabet):
    sf = _load(path, aurec.parse_segment_file)
    try:
        _, filled = aurec.segments_to_path(sf.segments, alphabet, sf.horizon)
        ev = aurec.load_segments(sf, alphabet)
    except CtbnError as exc:
        raise CommandError(exc, path) from None
    if filled:
        log.info("%s: %d uncovered interval(s) filled with %s", path, filled, alphabet.silence)
    return (sf.utterance or _stem(path)), ev


def cmd_recognize(args):
    model = _load(args.model, loads_model)
    alphabet = aurec.alphabet_of(model)
    for path in args.segments:
        utt, ev = _segments(path, alphabet)
        rec = aurec.recognize(
            model, ev, args.frame_rate, args.threshold, backend=args.backend, gibbs=_gibbs(args)
        )
        times = frame_midpoints(ev.horizon, args.frame_rate)
        write_atomic(_out(args, f"{utt}.prob"), format_track(times, rec.probabilities))
        write_atomic(_out(args, f"{utt}.au"), aurec.format_au_labels(rec.labels(utt)))


def cmd_infer(args):
    model = _load(args.model, loads_model)
    ev = _load(args.evidence, parse_trajectory, model)
    rate = args.query_rate
    queries = frame_midpoints(ev.horizon, rate)
    queries = queries[queries < ev.horizon]
    if args.backend == "exact":
        track = exact_posterior(model, ev, queries)
    else:
        track = gibbs_posterior(model, ev, _gibbs(args), queries)
    text = format_track(track.times, track_columns(track))
    if track.log_evidence is not None:
        text = f"# log_evidence,{format(track.log_evidence, '.9g')}\n" + text
    write_atomic(_out(args, args.out or f"{_stem(args.evidence)}.post"), text)


def _label_dir(directory, suffix):
    d = Path(directory)
    if not d.is_dir():
        raise CommandError(ParseError("not a directory"), directory)
    return {p.name[: -len(suffix)]: p for p in sorted(d.glob(f"*{suffix}"))}


def _paired(args):
    pred = _label_dir(args.pred, ".au")
    truth = _label_dir(args.truth, ".au")
    if set(pred) != set(truth):
        only_p = sorted(set(pred) - set(truth))
        only_t = sorted(set(truth) - set(pred))
        raise LengthMismatch(f"utterance sets differ: only in pred {only_p}, only in truth {only_t}")
    if not truth:
        raise EmptyData("no .au label files found")
    out = []
    for utt in sorted(truth):
        p = _load(pred[utt], aurec.parse_au_labels)
        t = _load(truth[utt], aurec.parse_au_labels)
        if set(p.aus) != set(t.aus):
            raise CommandError(LengthMismatch(f"AU sets differ for {utt}"), pred[utt])
        if len(p.frames) != len(t.frames):
            raise CommandError(
                LengthMismatch(f"{utt}: {len(p.frames)} predicted frames vs {len(t.frames)} labeled"), pred[utt]
            )
        out.append((utt, p, t))
    return out


def _roc_curves(args, pairs):
    curves = {}
    probs = {}
    for utt, p, t in pairs:
        path = Path(args.pred) / f"{utt}.prob"
        if not path.exists():
            return {}
        _, cols = _load(path, _parse_track_checked)
        for au in t.aus:
            probs.setdefault(au, ([], []))
            probs[au][0].append(cols[au])
            probs[au][1].append(t.track(au))
    for au, (ps, ts) in probs.items():
        curves[au] = metrics.roc_curve(np.concatenate(ps), np.concatenate(ts), args.n_thresholds)
    return curves


def _parse_track_checked(text):
    try:
        return parse_track(text)
    except ValueError as exc:
        raise ParseError(str(exc)) from None


def cmd_eval(args):
    pairs = _paired(args)
    aus = pairs[0][2].aus
    pred = {a: [p.track(a) for _, p, _ in pairs] for a in aus}
    truth = {a: [t.track(a) for _, _, t in pairs] for a in aus}
    table = metrics.evaluate_run(pred, truth)
    write_atomic(_out(args, "metrics.csv"), metrics.format_metrics_table(table))
    for au, curve in _roc_curves(args, pairs).items():
        write_atomic(_out(args, f"roc_{au}.csv"), metrics.format_roc(curve))


def cmd_roc(args):
    pairs = _paired(args)
    curves = _roc_curves(args, pairs)
    if not curves:
        raise EmptyData("ROC needs a .prob file for every utterance in the prediction directory")
    for au, curve in curves.items():
        write_atomic(_out(args, f"roc_{au}.csv"), metrics.format_roc(curve))


def cmd_convert(args):
    for path in args.textgrids:
        utt = args.utterance or _stem(path)
        text = _read(path)
        try:
            sf = aurec.textgrid_to_segments(text, tier=args.tier, utterance=utt)
        except CtbnError as exc:
            raise CommandError(exc, path) from None
        write_atomic(_out(args, f"{utt}.seg"), aurec.format_segment_file(sf))


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


def _add_gibbs(p):
    p.add_argument("--backend", choices=("exact", "gibbs"), default="gibbs")
    p.add_argument("--n-samples", type=int, default=2000)
    p.add_argument("--burn-in", type=int, default=None, help="default: 10%% of --n-samples")
    p.add_argument("--thinning", type=int, default=1)
    p.add_argument("--uniformization-factor", type=float, default=2.0)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with option defaults")
    common.add_argument("--output-dir", default=os.environ.get(OUTPUT_DIR_ENV, "."))
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ctbn-au", description="Continuous-time Bayesian network tools.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", parents=[common], help="sample trajectories from a model")
    p.add_argument("--model", required=True)
    p.add_argument("--horizon", type=float, required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--prefix", default="sample_")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("learn", parents=[common], help="fit CIMs from complete trajectories")
    p.add_argument("--structure", required=True, help="model file (CIMs ignored)")
    p.add_argument("trajectories", nargs="*")
    p.add_argument("--pseudo-dwell", type=float, default=0.01)
    p.add_argument("--pseudo-count", type=float, default=0.01)
    p.add_argument("--out", default="model.json")
    p.add_argument("--stats", default="stats.json")
    p.add_argument("--report", default="learn_report.csv")
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("recognize", parents=[common], help="per-AU tracks from phoneme segment files")
    p.add_argument("--model", required=True)
    p.add_argument("segments", nargs="+")
    p.add_argument("--frame-rate", type=float, default=DEFAULT_FRAME_RATE)
    p.add_argument("--threshold", type=float, default=0.5)
    _add_gibbs(p)
    p.set_defaults(func=cmd_recognize)

    p = sub.add_parser("infer", parents=[common], help="posterior marginals given an evidence trajectory")
    p.add_argument("--model", required=True)
    p.add_argument("--evidence", required=True)
    p.add_argument("--query-rate", type=float, default=DEFAULT_FRAME_RATE)
    p.add_argument("--out", default=None)
    _add_gibbs(p)
    p.set_defaults(func=cmd_infer)

    for name, func, text in (
        ("eval", cmd_eval, "frame metrics of predicted against labeled AU files"),
        ("roc", cmd_roc, "ROC curves from .prob files"),
    ):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--pred", required=True, help="directory of predicted .au (and .prob) files")
        p.add_argument("--truth", required=True, help="directory of labeled .au files")
        p.add_argument("--n-thresholds", type=int, default=1000)
        p.set_defaults(func=func)

    p = sub.add_parser("convert", parents=[common], help="Praat TextGrid to segment files")
    p.add_argument("textgrids", nargs="+")
    p.add_argument("--tier", default="phones")
    p.add_argument("--utterance", default=None, help="utterance id (default: file stem)")
    p.set_defaults(func=cmd_convert)
    return parser, sub


def _apply_config(parser, sub, argv):
    """Parse ``argv`` with config-file values installed as defaults (flags still win)."""
    argv = sys.argv[1:] if argv is None else list(argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    command = next((a for a in argv if a in sub.choices), None)
    if not known.config or command is None:
        return parser.parse_args(argv)
    text = _read(known.config)
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CommandError(ParseError(f"invalid config JSON: {exc.msg}", line=exc.lineno), known.config) from None
    if not isinstance(cfg, dict):
        raise CommandError(ParseError("config must be a JSON object"), known.config)
    values = {k: v for k, v in cfg.items() if not isinstance(v, dict)}
    values.update(cfg.get(command, {}))
    values = {k.replace("-", "_"): v for k, v in values.items()}
    subparser = sub.choices[command]
    known_dests = {a.dest for a in subparser._actions}
    unknown = sorted(set(values) - known_dests)
    if unknown:
        raise CommandError(ParseError(f"unknown config keys: {', '.join(unknown)}"), known.config)
    for action in subparser._actions:
        if action.dest in values:
            action.required = False
    subparser.set_defaults(**values)
    return parser.parse_args(argv)


def _report(exc, path=None):
    record = {"error": getattr(exc, "kind", type(exc).__name__), "message": str(exc)}
    if path is not None:
        record["file"] = str(path)
    line = getattr(exc, "line", None)
    if line is not None:
        record["line"] = line
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    where = f"{path}:{line}: " if path and line else (f"{path}: " if path else "")
    print(f"ctbn-au: error: {where}{exc}", file=sys.stderr)


def _run(args):
    """Run a subcommand, logging each distinct warning once."""
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            args.func(args)
        finally:
            seen = set()
            for w in caught:
                text = f"{w.category.__name__}: {w.message}"
                if text not in seen:
                    seen.add(text)
                    log.warning("%s", text)


def main(argv=None):
    parser, sub = build_parser()
    try:
        args = _apply_config(parser, sub, argv)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.INFO, format="ctbn-au: %(message)s", stream=sys.stderr
        )
        _run(args)
    except CommandError as err:
        _report(err.exc, err.path)
        return 1
    except (CtbnError, ValueError, OSError) as exc:
        _report(exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
