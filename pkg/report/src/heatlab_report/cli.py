"""Batch figure rendering: `heatlab-report --spec figures.toml` or one figure
via per-kind flags.

A spec file holds one or more `[[figure]]` tables:

    [[figure]]
    kind = "tail-rate"
    inputs = ["out/ldp_eq.csv"]
    output = "figs/tail_rate.png"
    title = "equilibrium tail"          # optional
    labels = ["data", "rate"]           # optional
    expect_digest = "3f39350baa1c6f75"  # optional: pin the producing config

Exit code 0 on success, 1 on schema mismatch or missing inputs.
"""

from __future__ import annotations

import argparse
import sys

try:
    import tomllib
except ImportError:  # python < 3.11
    import tomli as tomllib

from heatlab_report.figures import KINDS, FigureSpec, RenderResult, render
from heatlab_report.io import SchemaError


def specs_from_toml(path: str) -> list[FigureSpec]:
    with open(path, "rb") as fh:
        payload = tomllib.load(fh)
    figures = payload.get("figure")
    if not figures:
        raise SchemaError(f"{path}: no [[figure]] tables found")
    specs = []
    for table in figures:
        try:
            specs.append(FigureSpec(
                kind=table["kind"],
                inputs=tuple(table["inputs"]),
                output=table["output"],
                title=table.get("title", ""),
                labels=tuple(table.get("labels", ())),
                expect_digest=table.get("expect_digest", ""),
            ))
        except KeyError as exc:
            raise SchemaError(f"{path}: figure table missing key {exc}") from None
    return specs


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="heatlab-report",
        description="render publication figures from heatlab CSV/JSON artifacts")
    parser.add_argument("--spec", help="TOML file with [[figure]] tables")
    parser.add_argument("--kind", choices=KINDS, help="single-figure mode")
    parser.add_argument("--input", action="append", default=[],
                        help="input artifact (repeatable, order matters)")
    parser.add_argument("--output", help="output image path (.png or .svg)")
    parser.add_argument("--title", default="")
    parser.add_argument("--expect-digest", default="",
                        help="require inputs to carry this config digest")
    args = parser.parse_args(argv)

    try:
        if args.spec:
            specs = specs_from_toml(args.spec)
        else:
            if not (args.kind and args.input and args.output):
                parser.error("either --spec or all of --kind/--input/--output")
            specs = [FigureSpec(kind=args.kind, inputs=tuple(args.input),
                                output=args.output, title=args.title,
                                expect_digest=args.expect_digest)]
        results: list[RenderResult] = [render(spec) for spec in specs]
    except (SchemaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for res in results:
        print(f"{res.kind}: {res.output} ({res.n_series} series)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
