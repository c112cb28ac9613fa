"""Command-line entry point: ``dynloss generate | train | compare``.

Exit codes: 0 success, 2 usage or input error, 3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nifti_io
from .errors import GenerationError, InvariantViolation, NiftiError
from .metrics import POOR_THRESHOLD, mean_dice
from .scheduler import SchedulerConfig, Strategy
from .synthgen import PhantomConfig, generate_phantom
from .toytrainer import TrainConfig, run_experiment

log = logging.getLogger("dynloss")

MANIFEST = "manifest.json"


class UsageError(Exception):
    pass


def _dims(text: str) -> tuple[int, int, int]:
    parts = [int(p) for p in text.replace("x", ",").split(",") if p]
    if len(parts) == 1:
        parts *= 3
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected N or NX,NY,NZ, got {text!r}")
    return tuple(parts)


# --------------------------------------------------------------------------
# generate
# --------------------------------------------------------------------------


def cmd_generate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    base = PhantomConfig(dims=args.dims, seed=args.seed, noise_sigma=args.sigma)
    entries = []
    for i in range(args.count):
        cfg = PhantomConfig(**{**base.__dict__, "seed": args.seed + i})
        image, labels = generate_phantom(cfg)
        stem = f"phantom_{i:03d}"
        (out / f"{stem}_image.nii").write_bytes(nifti_io.write_volume(image, nifti_io.FLOAT32))
        (out / f"{stem}_labels.nii").write_bytes(nifti_io.write_volume(labels, nifti_io.UINT8))
        entries.append({"seed": cfg.seed, "image": f"{stem}_image.nii", "labels": f"{stem}_labels.nii"})
    manifest = {
        "schema_version": 1,
        "base_seed": args.seed,
        "count": args.count,
        "config": base.to_dict(),
        "phantoms": entries,
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    print(f"wrote {args.count} phantom(s) to {out}")
    return 0


def load_dataset(path: Path):
    """Read (image, labels) pairs and class names from a generated directory."""
    path = Path(path)
    manifest_path = path / MANIFEST
    if not manifest_path.is_file():
        raise UsageError(f"{path} has no {MANIFEST}")
    manifest = json.loads(manifest_path.read_text())
    names = manifest.get("config", {}).get("class_names")
    n = len(names) if names else None
    pairs = []
    for entry in manifest["phantoms"]:
        image = nifti_io.load(path / entry["image"])
        labels = nifti_io.load(path / entry["labels"], labels=True, num_classes=n)
        pairs.append((image, labels))
    return pairs, names


# --------------------------------------------------------------------------
# train
# --------------------------------------------------------------------------


def cmd_train(args) -> int:
    if args.data:
        volumes, names = load_dataset(Path(args.data))
    else:
        cfg = PhantomConfig(dims=args.dims, seed=args.seed)
        volumes, names = [generate_phantom(cfg)], list(cfg.class_names)

    defaults = SchedulerConfig()
    sched = SchedulerConfig(
        strategy=Strategy(args.strategy),
        freeze_threshold=args.threshold if args.threshold is not None else defaults.freeze_threshold,
        window=args.delta if args.delta is not None else defaults.window,
        plateau_tol=args.eps if args.eps is not None else defaults.plateau_tol,
        stabilizer=args.zeta if args.zeta is not None else defaults.stabilizer,
    )
    overrides = {k: v for k, v in {"learning_rate": args.lr, "hidden": args.hidden}.items() if v is not None}
    config = TrainConfig(epochs=args.epochs, seed=args.seed, scheduler=sched, **overrides)
    report = run_experiment(config, volumes, class_names=names)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_bytes(nifti_io.write_report(report))
    (out / "run_log.csv").write_bytes(nifti_io.write_run_log(nifti_io.run_log_rows(report)))
    print(f"{args.strategy}: mean Dice {mean_dice(report.final_dice):.3f}, {len(report.events)} trigger(s); wrote {out}")
    return 0


# --------------------------------------------------------------------------
# compare
# --------------------------------------------------------------------------


@dataclass
class CompareTable:
    class_names: list[str]
    prevalence: list[float] | None
    columns: list[str]
    scores: np.ndarray  # (N, K)

    @property
    def means(self) -> list[float]:
        return [mean_dice(self.scores[:, k]) for k in range(self.scores.shape[1])]

    def star(self, value: float) -> bool:
        return value < POOR_THRESHOLD

    def improved(self, value: float, baseline: float, k: int) -> bool:
        return k > 0 and round(value, 3) > round(baseline, 3)


def build_table(reports: list[dict], labels: list[str] | None = None) -> CompareTable:
    if len(reports) < 2:
        raise UsageError("compare needs at least two reports")
    n = len(reports[0]["final_dice"])
    if any(len(r["final_dice"]) != n for r in reports):
        raise UsageError("reports have different class counts")
    first = reports[0]
    names = first.get("class_names") or [f"class {i + 1}" for i in range(n)]
    columns = labels or [r.get("label") or r.get("strategy") or f"run {i}" for i, r in enumerate(reports)]
    seen: dict[str, int] = {}
    unique = []
    for c in columns:
        seen[c] = seen.get(c, 0) + 1
        unique.append(c if seen[c] == 1 else f"{c}#{seen[c]}")
    scores = np.array([r["final_dice"] for r in reports], dtype=float).T
    return CompareTable(list(names), first.get("prevalence"), unique, scores)


def _cell(table: CompareTable, value: float, baseline: float, k: int, star: bool = True) -> str:
    mark = "*" if star and table.star(value) else ""
    mark += "+" if table.improved(value, baseline, k) else ""
    return f"{value:.3f}{mark}"


def render_text(table: CompareTable) -> str:
    header = ["Class", "Voxels(%)", *table.columns]
    means = table.means
    rows = [["Mean", "", *(_cell(table, m, means[0], k, star=False) for k, m in enumerate(means))]]
    for i, name in enumerate(table.class_names):
        prev = f"{100 * table.prevalence[i]:.1f}%" if table.prevalence else ""
        base = table.scores[i, 0]
        rows.append([name, prev, *(_cell(table, v, base, k) for k, v in enumerate(table.scores[i]))])
    widths = [max(len(r[c]) for r in [header, *rows]) for c in range(len(header))]
    lines = []
    for j, r in enumerate([header, *rows]):
        cells = [r[0].ljust(widths[0])] + [r[c].rjust(widths[c]) for c in range(1, len(r))]
        lines.append("  ".join(cells).rstrip())
        if j in (0, 1):
            lines.append("-" * len(lines[-1]))
    lines.append("* Dice below 0.8   + better than the first column")
    return "\n".join(lines) + "\n"


def render_csv(table: CompareTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class", "prevalence", *table.columns, *(f"{c}_poor" for c in table.columns)])
    means = table.means
    w.writerow(["Mean", "", *(repr(m) for m in means), *([""] * len(means))])
    for i, name in enumerate(table.class_names):
        prev = repr(table.prevalence[i]) if table.prevalence else ""
        row = table.scores[i]
        w.writerow([name, prev, *(repr(float(v)) for v in row), *(int(table.star(v)) for v in row)])
    return buf.getvalue()


def cmd_compare(args) -> int:
    reports = []
    for p in args.reports:
        try:
            reports.append(json.loads(Path(p).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read report {p}: {exc}") from exc
    table = build_table(reports, args.labels.split(",") if args.labels else None)
    text = render_text(table)
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.with_suffix(".txt").write_text(text)
        out.with_suffix(".csv").write_text(render_csv(table))
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dynloss", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write seeded phantom volumes as NIfTI-1")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--dims", type=_dims, default=(64, 64, 64))
    g.add_argument("--sigma", type=float, default=5.0, help="intensity noise")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train the toy segmenter under one weighting strategy")
    t.add_argument("--data", help="directory written by 'generate' (default: phantom from --seed)")
    t.add_argument("--strategy", choices=[s.value for s in Strategy], default="uniform")
    t.add_argument("--epochs", type=int, default=40)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--dims", type=_dims, default=(64, 64, 64))
    t.add_argument("--delta", type=int, help="plateau window in epochs")
    t.add_argument("--eps", type=float, help="plateau tolerance")
    t.add_argument("--zeta", type=float, help="boost stabiliser")
    t.add_argument("--threshold", type=float, help="threshold freezing level")
    t.add_argument("--lr", type=float)
    t.add_argument("--hidden", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("compare", help="tabulate final Dice of several reports")
    c.add_argument("reports", nargs="+")
    c.add_argument("--labels", help="comma-separated column names")
    c.add_argument("--out", help="path stem for .txt and .csv tables")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except InvariantViolation as exc:
        print(f"dynloss: internal invariant violated: {exc}", file=sys.stderr)
        return 3
    except (UsageError, GenerationError, NiftiError, ValueError, OSError) as exc:
        print(f"dynloss {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
