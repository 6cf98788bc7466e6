"""Command-line entry point.

Every subcommand resolves a run configuration (file, then ``--override``,
then ``--seed``), writes ``config.resolved.ini`` next to its outputs and
exits 0 on success. Failures print one JSON line on stderr and exit with
2 (bad config or usage), 3 (numeric divergence) or 4 (missing input).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .config import RunConfig, load_config, parse_floats
from .errors import DsslError, MissingInputError, UsageError
from .evaluation import (
    DecoderConfig,
    probe_all,
    reconstruction_gain,
    retrieval,
    shared_representation,
    sweep,
    write_frontier_csv,
)
from .oracle import DiscreteJoint, ib_curve, mni_check, verify_prop4
from .synthdata import SynthDataset, generate
from .training import (
    JointOptModel,
    Step1Model,
    Step2Model,
    encode_shared,
    encode_specific,
    train_jointopt,
    train_step1,
    train_step2,
)

log = logging.getLogger("dssl")

REPORT_FORMAT = "dssl-report-v1"


@dataclass
class RunReport:
    command: str
    config: dict
    metrics: dict
    artifacts: dict = field(default_factory=dict)
    seed: int = 0
    format: str = REPORT_FORMAT

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        d = json.loads(text)
        if d.get("format") != REPORT_FORMAT:
            raise UsageError(f"not a run report (format {d.get('format')!r})")
        return cls(**d)

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json())
        return path

    @classmethod
    def read(cls, path) -> "RunReport":
        path = Path(path)
        if not path.exists():
            raise MissingInputError(f"missing report {path}")
        return cls.from_json(path.read_text())


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --- helpers ----------------------------------------------------------------------

def _resolve(args) -> RunConfig:
    return load_config(args.config, args.override or (), args.seed)


def _finish(args, cfg: RunConfig, report: RunReport | None, t0: float) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out / "config.resolved.ini")
    # wall time lives beside the report so reports stay bit-identical across reruns
    (out / "timing.json").write_text(json.dumps({"wall_time_s": time.perf_counter() - t0}) + "\n")
    if report is not None:
        report.write(out / "report.json")
    return out


def _load_dataset(stem) -> SynthDataset:
    return SynthDataset.load(stem)


def _parse_joint(args) -> DiscreteJoint:
    if args.joint_file:
        path = Path(args.joint_file)
        if not path.exists():
            raise MissingInputError(f"missing joint file {path}")
        text = path.read_text().strip().replace("\n", ";")
    elif args.joint:
        text = args.joint
    else:
        raise UsageError("give --joint or --joint-file")
    try:
        rows = [[float(v) for v in r.split(",")] for r in text.split(";") if r.strip()]
        table = np.array(rows, dtype=np.float64)
    except ValueError:
        raise UsageError(f"cannot parse joint table {text!r}") from None
    if table.ndim != 2:
        raise UsageError("joint rows must all have the same length")
    return DiscreteJoint.normalized(table)


def _probe_metrics(results) -> dict:
    return {label: asdict(r) for label, r in results.items()}


def _probe_kw(cfg: RunConfig) -> dict:
    e = cfg["eval"]
    return {"reg": e.probe_reg, "steps": e.probe_steps, "lr": e.probe_lr}


# --- subcommands ----------------------------------------------------------------------

def cmd_synth(args) -> int:
    t0 = time.perf_counter()
    overrides = list(args.override or ())
    for key in ("n", "variant"):
        if getattr(args, key) is not None:
            overrides.append(f"data.{key}={getattr(args, key)}")
    cfg = load_config(args.config, overrides, args.seed)
    d = cfg["data"]
    ds = generate(d.n, d.seed, d.variant)
    stem = Path(args.out) / "dataset"
    ds.save(stem)
    digest = io.content_hash(stem)
    report = RunReport("synth", cfg.to_dict(), {"n": ds.n, "variant": ds.variant},
                       {"dataset": digest}, d.seed)
    _finish(args, cfg, report, t0)
    print(json.dumps({"dataset": str(stem), "sha256": digest}))
    return 0


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    cfg = _resolve(args)
    ds = _load_dataset(args.data)
    out = Path(args.out)
    artifacts = {"dataset": io.content_hash(args.data)}
    if args.which == "step1":
        model = train_step1(ds, cfg["step1"])
        stem = out / "step1"
        seed = cfg["step1"].seed
    elif args.which == "step2":
        if not args.step1:
            raise UsageError("train step2 needs --step1 <checkpoint>")
        step1 = Step1Model.load(args.step1)
        artifacts["step1"] = io.content_hash(args.step1)
        model = train_step2(ds, step1, cfg["step2"])
        stem = out / "step2"
        seed = cfg["step2"].seed
    else:
        model = train_jointopt(ds, cfg["jointopt"])
        stem = out / "jointopt"
        seed = cfg["jointopt"].seed
    model.save(stem)
    artifacts["checkpoint"] = io.content_hash(stem)
    metrics = {"loss_trace": list(model.loss_trace), "loss_se_trace": list(model.loss_se_trace),
               "final_loss": model.loss_trace[-1]}
    report = RunReport(f"train {args.which}", cfg.to_dict(), metrics, artifacts, seed)
    _finish(args, cfg, report, t0)
    print(json.dumps({"checkpoint": str(stem), "sha256": artifacts["checkpoint"]}))
    return 0


def _specific_for(args, step1):
    if args.step2:
        return Step2Model.load(args.step2, step1)
    return None


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    cfg = _resolve(args)
    ds = _load_dataset(args.data)
    artifacts = {"dataset": io.content_hash(args.data)}
    if args.jointopt:
        joint = JointOptModel.load(args.jointopt)
        step1, step2 = joint.as_step1(), joint.as_step2()
        artifacts["jointopt"] = io.content_hash(args.jointopt)
    else:
        if not args.step1:
            raise UsageError("eval needs --step1 or --jointopt")
        step1 = Step1Model.load(args.step1)
        artifacts["step1"] = io.content_hash(args.step1)
        step2 = _specific_for(args, step1)
        if step2 is not None:
            artifacts["step2"] = io.content_hash(args.step2)

    if args.which == "probe":
        kw = _probe_kw(cfg)
        metrics = {"zc": _probe_metrics(probe_all(shared_representation(step1, ds, "train"),
                                                  shared_representation(step1, ds, "test"),
                                                  ds, **kw))}
        if step2 is not None:
            for m, X in ((1, ds.X1), (2, ds.X2)):
                ztr = encode_specific(step2, X[ds.train_idx], m)
                zte = encode_specific(step2, X[ds.test_idx], m)
                metrics[f"zs{m}"] = _probe_metrics(probe_all(ztr, zte, ds, **kw))
    elif args.which == "retrieval":
        x1, x2 = ds.split("test")
        res = retrieval(encode_shared(step1, x1, 1), encode_shared(step1, x2, 2))
        metrics = {"top_n": {str(k): v for k, v in res.top_n.items()}, "mrr": res.mrr,
                   "gallery_size": res.gallery_size,
                   "random_top1": 1.0 / res.gallery_size}
    else:
        if step2 is None:
            raise UsageError("eval rg needs --step2 (or --jointopt)")
        m = args.modality
        X = (ds.X1, ds.X2)[m - 1]
        tr, te = X[ds.train_idx], X[ds.test_idx]
        e = cfg["eval"]
        dec = DecoderConfig(hidden=e.decoder_hidden, epochs=e.decoder_epochs, seed=e.seed)
        res = reconstruction_gain(encode_shared(step1, tr, m), encode_specific(step2, tr, m), tr,
                                  encode_shared(step1, te, m), encode_specific(step2, te, m), te,
                                  dec)
        metrics = asdict(res)
        metrics["modality"] = m
    report = RunReport(f"eval {args.which}", cfg.to_dict(), metrics, artifacts, cfg["eval"].seed)
    _finish(args, cfg, report, t0)
    print(json.dumps({"report": str(Path(args.out) / "report.json")}))
    return 0


def cmd_sweep(args) -> int:
    t0 = time.perf_counter()
    cfg = _resolve(args)
    ds = _load_dataset(args.data)
    seeds = [int(s) for s in parse_floats(args.seeds)] if args.seeds else [cfg["step1"].seed]
    out = Path(args.out)
    points = sweep(ds, parse_floats(args.betas), parse_floats(args.lambdas), seeds,
                   cfg["step1"], cfg["step2"], workers=args.workers, out_dir=out / "runs")
    csv_path = write_frontier_csv(points, out / "frontier.csv")
    _finish(args, cfg, None, t0)
    print(json.dumps({"frontier": str(csv_path), "rows": len(points)}))
    return 0


def cmd_oracle(args) -> int:
    t0 = time.perf_counter()
    cfg = _resolve(args)
    o = cfg["oracle"]
    joint = _parse_joint(args)
    z_size = o.z_size or None
    if args.which == "curve":
        curve = ib_curve(joint, parse_floats(o.betas), z_size, restarts=o.restarts,
                         seed=o.seed, iters=o.iters)
        cols = ("beta", "i_zx1", "i_zx2", "i_x1x2", "i_zx1_given_x2", "delta_c")
        lines = [",".join(cols)]
        for c in curve.points:
            d = c.as_dict()
            lines.append(",".join(format(d[k], ".17g") for k in cols))
        text = "\n".join(lines) + "\n"
        metrics = {"points": [c.as_dict() for c in curve.points],
                   "hull": [list(h) for h in curve.hull], "hull_slopes": curve.hull_slopes}
    elif args.which == "mni":
        verdict = mni_check(joint)
        text = verdict.to_json() + "\n"
        metrics = asdict(verdict)
    else:
        rep = verify_prop4(joint, o.beta, z_size, n_encoders=o.n_encoders, seed=o.seed,
                           restarts=o.restarts)
        metrics = {**asdict(rep), "holds": rep.holds()}
        text = json.dumps(metrics, sort_keys=True) + "\n"
    if args.out:
        report = RunReport(f"oracle {args.which}", cfg.to_dict(), metrics, {}, o.seed)
        out = _finish(args, cfg, report, t0)
        name = "curve.csv" if args.which == "curve" else f"{args.which}.json"
        (out / name).write_text(text)
    sys.stdout.write(text)
    return 0


def _flatten(prefix, obj, out):
    if isinstance(obj, dict):
        for k in sorted(obj):
            _flatten(f"{prefix}.{k}" if prefix else str(k), obj[k], out)
    elif isinstance(obj, (int, float)) and not isinstance(obj, bool):
        out[prefix] = obj


def render_table(reports: dict[str, RunReport]) -> str:
    """Plain-text table: one row per scalar metric, one column per report."""
    flat = {}
    for name, rep in reports.items():
        row: dict = {}
        _flatten("", {k: v for k, v in rep.metrics.items() if not k.endswith("_trace")}, row)
        flat[name] = row
    keys = sorted({k for row in flat.values() for k in row})
    names = list(reports)
    width = max([len("metric")] + [len(k) for k in keys])
    colw = [max(len(n), 12) for n in names]
    lines = ["metric".ljust(width) + "  " + "  ".join(n.rjust(w) for n, w in zip(names, colw))]
    for k in keys:
        cells = []
        for n, w in zip(names, colw):
            v = flat[n].get(k)
            cells.append(("-" if v is None else f"{v:.4f}" if isinstance(v, float) else str(v))
                         .rjust(w))
        lines.append(k.ljust(width) + "  " + "  ".join(cells))
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    reports = {}
    for p in args.reports:
        path = Path(p)
        if path.is_dir():
            path = path / "report.json"
        reports[str(p)] = RunReport.read(path)
    sys.stdout.write(render_table(reports))
    return 0


# --- parser -----------------------------------------------------------------------------

def _common(p, out_required=True):
    p.add_argument("--config", help="INI run configuration")
    p.add_argument("--override", action="append", metavar="SECTION.KEY=VALUE",
                   help="override one config value (repeatable)")
    p.add_argument("--seed", type=int, help="override every seed in the config")
    p.add_argument("--out", required=out_required, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="dssl", description="Two-step shared/specific representation learning.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic paired dataset")
    _common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--variant", choices=("plain", "mixed"))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train step1, step2 or the jointopt baseline")
    p.add_argument("which", choices=("step1", "step2", "jointopt"))
    _common(p)
    p.add_argument("--data", required=True, help="dataset stem")
    p.add_argument("--step1", help="step-1 checkpoint stem (step2 only)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="linear probes, retrieval or reconstruction gain")
    p.add_argument("which", choices=("probe", "retrieval", "rg"))
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--step1")
    p.add_argument("--step2")
    p.add_argument("--jointopt")
    p.add_argument("--modality", type=int, choices=(1, 2), default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="beta x lambda grid to a frontier CSV")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--betas", required=True, help="comma-separated")
    p.add_argument("--lambdas", default="0", help="comma-separated")
    p.add_argument("--seeds", help="comma-separated; default is the config seed")
    p.add_argument("--workers", type=int, help="parallel workers (default: DSSL_THREADS or cores)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle", help="exact discrete information-bottleneck checks")
    p.add_argument("which", choices=("curve", "mni", "prop-check"))
    _common(p, out_required=False)
    p.add_argument("--joint", help='joint table, rows separated by ";" e.g. "1,1;1,5"')
    p.add_argument("--joint-file", help="CSV file with one table row per line")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("report", help="plain-text table from run reports")
    p.add_argument("reports", nargs="+", help="report.json files or run directories")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except DsslError as exc:
        code = exc.exit_code
        err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
        print(json.dumps(err), file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
