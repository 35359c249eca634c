"""Command-line interface: calibrate, partition, simulate, report.

Every subcommand reads JSON inputs, never mutates them, and writes its
outputs atomically (temp file then rename, all outputs staged before
the first rename) so a failing run leaves no partial files. All
computation is deterministic; --seed is accepted for reproducibility
bookkeeping and recorded in reports.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import tempfile
from typing import Dict, List, Optional, Tuple

from .accmodel import (CalibrationError, CoverageError, calibrate_accuracy,
                       load_accuracy_model, model_to_document)
from .calibrate import fit_profiles, load_measurements, load_skeleton
from .devmodel import PlatformError, load_platform, platform_to_document
from .netgraph import GROUPS, GraphError, load_graph
from .partitioner import (Constraints, InfeasibleError, optimize_chain_dp,
                          pareto_frontier)
from .simulator import (ScheduleError, ScheduleReport, report_to_document,
                        simulate)

_INPUT_ERRORS = (GraphError, PlatformError, CalibrationError, CoverageError,
                 ScheduleError, ValueError, OSError, KeyError)


def _load_assignment(path) -> Dict[str, str]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    # the partition subcommand wraps the layer map in a report document
    if isinstance(doc, dict) and isinstance(doc.get("layers"), dict):
        doc = doc["layers"]
    if not isinstance(doc, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in doc.items()):
        raise ScheduleError(f"{path}: assignment must map names to device names")
    return doc


def _write_all(outputs: List[Tuple[str, str, object]], out_dir: str) -> List[str]:
    """Stage every output in a temp file, then rename them all.

    outputs entries are (filename, kind, payload) with kind "json" or
    "text". Returns the final paths.
    """
    os.makedirs(out_dir, exist_ok=True)
    staged = []
    try:
        for filename, kind, payload in outputs:
            final = os.path.join(out_dir, filename)
            fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=f".{filename}.")
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                if kind == "json":
                    json.dump(payload, fh, indent=2, sort_keys=True)
                    fh.write("\n")
                else:
                    fh.write(payload)
            staged.append((tmp, final))
        for tmp, final in staged:
            os.replace(tmp, final)
        return [final for _, final in staged]
    except BaseException:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)
        raise


def _trace_csv_text(report: ScheduleReport) -> str:
    import io

    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["device", "kind", "start_s", "end_s", "layers"])
    for t in report.traces:
        writer.writerow([t.device, t.kind, f"{t.start_s:.9f}", f"{t.end_s:.9f}",
                         ";".join(t.layer_ids)])
    return buf.getvalue()


def _summary_lines(report: ScheduleReport, label: str) -> List[str]:
    acc = report.accuracy
    loce = f"{acc.loce_m:.2f}" if acc else "-"
    orie = f"{acc.orie_deg:.2f}" if acc else "-"
    header = (f"{'Configuration':<24} {'LOCE (m)':>9} {'ORIE (deg)':>10} "
              f"{'Inference (ms)':>15} {'Total (ms)':>11} {'Energy (J)':>11}")
    row = (f"{label:<24} {loce:>9} {orie:>10} "
           f"{report.inference_s * 1000:>15.1f} {report.total_s * 1000:>11.1f} "
           f"{report.energy_j:>11.3f}")
    return [header, row]


def _group_label(report: ScheduleReport, graph) -> str:
    by_group: Dict[str, set] = {}
    for layer in graph.layers:
        by_group.setdefault(layer.group, set()).add(report.assignment[layer.id])
    parts = []
    for group in GROUPS:
        if group in by_group:
            parts.append(f"{group}:{'+'.join(sorted(by_group[group]))}")
    return " ".join(parts)


def cmd_calibrate(args) -> int:
    graph = load_graph(args.graph)
    baseline, rows = load_measurements(args.measurements)
    skeleton = load_skeleton(args.platform)
    result = fit_profiles(rows, graph, skeleton)

    outputs: List[Tuple[str, str, object]] = [
        ("fitted_platform.json", "json", platform_to_document(result.platform)),
    ]
    report_doc = result.to_document()
    report_doc["seed"] = args.seed
    accuracy_rows = [(row.assignment, row.accuracy) for row in rows
                     if row.accuracy is not None]
    if accuracy_rows:
        model, residuals = calibrate_accuracy(accuracy_rows, baseline)
        outputs.append(("accuracy_model.json", "json", model_to_document(model)))
        report_doc["accuracy_residuals"] = {
            row.label: {"loce_m": res.loce_m, "orie_deg": res.orie_deg}
            for (row, res) in zip([r for r in rows if r.accuracy is not None], residuals)}
    outputs.append(("fit_report.json", "json", report_doc))
    paths = _write_all(outputs, args.out_dir)
    for warning in result.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print("\n".join(f"wrote {path}" for path in paths))
    return 0


def _constraints_from(args) -> Constraints:
    return Constraints(max_loce_m=args.max_loce, max_orie_deg=args.max_orie,
                       max_energy_j=args.max_energy,
                       group_homogeneous=not args.per_layer)


def cmd_partition(args) -> int:
    graph = load_graph(args.graph)
    platform = load_platform(args.platform)
    acc_model = load_accuracy_model(args.accuracy_model) if args.accuracy_model else None
    constraints = _constraints_from(args)
    try:
        result = optimize_chain_dp(graph, platform, acc_model, constraints)
    except InfeasibleError as exc:
        doc = {
            "binding_constraint": exc.binding_constraint,
            "violations": dict(sorted(exc.violations.items())),
            "best_assignment": dict(sorted(exc.best_assignment.items())),
            "total_s": exc.total_s,
            "energy_j": exc.energy_j,
            "accuracy": ({"loce_m": exc.accuracy.loce_m, "orie_deg": exc.accuracy.orie_deg}
                         if exc.accuracy else None),
        }
        _write_all([("infeasibility_report.json", "json", doc)], args.out_dir)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    report = simulate(graph, result.assignment, platform, acc_model)
    assignment_doc = {
        "layers": dict(sorted(result.assignment.items())),
        "groups": result.group_summary(graph),
    }
    paths = _write_all([
        ("assignment.json", "json", assignment_doc),
        ("schedule_report.json", "json", report_to_document(report)),
    ], args.out_dir)
    print("\n".join(_summary_lines(report, _group_label(report, graph))))
    print("\n".join(f"wrote {path}" for path in paths))
    return 0


def cmd_simulate(args) -> int:
    graph = load_graph(args.graph)
    platform = load_platform(args.platform)
    acc_model = load_accuracy_model(args.accuracy_model) if args.accuracy_model else None
    assignment = _load_assignment(args.assignment)
    report = simulate(graph, assignment, platform, acc_model)
    paths = _write_all([
        ("schedule_report.json", "json", report_to_document(report)),
        ("traces.csv", "text", _trace_csv_text(report)),
    ], args.out_dir)
    print("\n".join(_summary_lines(report, _group_label(report, graph))))
    print("\n".join(f"wrote {path}" for path in paths))
    return 0


def cmd_throughput(args) -> int:
    graph = load_graph(args.graph)
    platform = load_platform(args.platform)
    assignment = _load_assignment(args.assignment)
    report = simulate(graph, assignment, platform)
    doc = {"fps_sequential": report.fps_sequential,
           "fps_pipelined": report.fps_pipelined}
    paths = _write_all([("throughput.json", "json", doc)], args.out_dir)
    if args.pipelined:
        print(f"pipelined FPS: {report.fps_pipelined:.2f}")
    else:
        print(f"sequential FPS: {report.fps_sequential:.2f}  "
              f"pipelined FPS: {report.fps_pipelined:.2f}")
    print("\n".join(f"wrote {path}" for path in paths))
    return 0


def cmd_pareto(args) -> int:
    graph = load_graph(args.graph)
    platform = load_platform(args.platform)
    acc_model = load_accuracy_model(args.accuracy_model)
    points = pareto_frontier(graph, platform, acc_model)
    groups = [g for g in GROUPS if any(l.group == g for l in graph.layers)]
    lines = [",".join([*(g.lower() + "_device" for g in groups),
                       "total_ms", "loce_m", "orie_deg", "energy_j"])]
    for point in points:
        lines.append(",".join(
            [*(point.group_assignment[g] for g in groups),
             f"{point.total_s * 1000:.3f}", f"{point.accuracy.loce_m:.4f}",
             f"{point.accuracy.orie_deg:.4f}", f"{point.energy_j:.4f}"]))
    paths = _write_all([("pareto.csv", "text", "\n".join(lines) + "\n")], args.out_dir)
    print(f"{len(points)} non-dominated assignments")
    print("\n".join(f"wrote {path}" for path in paths))
    return 0


def cmd_validate(args) -> int:
    checked = False
    graph = None
    platform = None
    if args.graph:
        graph = load_graph(args.graph)
        print(f"graph OK: {graph.name}, {len(graph.layers)} layers")
        checked = True
    if args.platform:
        platform = load_platform(args.platform)
        print(f"platform OK: {len(platform.devices)} devices, host {platform.host}")
        checked = True
    if args.measurements:
        baseline, rows = load_measurements(args.measurements)
        print(f"measurements OK: {len(rows)} rows")
        checked = True
    if args.assignment:
        if graph is None:
            raise ScheduleError("--assignment validation needs --graph")
        assignment = _load_assignment(args.assignment)
        from .simulator import expand_assignment
        device_of = expand_assignment(graph, assignment)
        if platform is not None:
            for layer_id, device in sorted(device_of.items()):
                if device not in platform.devices:
                    raise ScheduleError(
                        f"layer '{layer_id}' assigned to unknown device '{device}'")
        print(f"assignment OK: {len(set(device_of.values()))} devices")
        checked = True
    if not checked:
        raise ValueError("nothing to validate; pass --graph/--platform/"
                         "--measurements/--assignment")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hetsim",
        description="Latency/accuracy/energy simulator and partitioner for "
                    "mixed-precision inference on heterogeneous accelerators.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, *, out: bool = True) -> None:
        p.add_argument("--seed", type=int, default=0,
                       help="reproducibility seed recorded in outputs (default 0)")
        if out:
            p.add_argument("--out-dir", default=".", help="output directory")

    p = sub.add_parser("calibrate", help="fit device profiles from measurements")
    p.add_argument("--graph", required=True)
    p.add_argument("--measurements", required=True)
    p.add_argument("--platform", required=True,
                   help="platform skeleton with parameter bounds")
    common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("partition", help="search for the best assignment")
    p.add_argument("--graph", required=True)
    p.add_argument("--platform", required=True, help="fitted platform file")
    p.add_argument("--accuracy-model")
    p.add_argument("--max-loce", type=float)
    p.add_argument("--max-orie", type=float)
    p.add_argument("--max-energy", type=float)
    p.add_argument("--per-layer", action="store_true",
                   help="choose devices per fused unit instead of per group")
    common(p)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("simulate", help="simulate an explicit assignment")
    p.add_argument("--graph", required=True)
    p.add_argument("--platform", required=True)
    p.add_argument("--assignment", required=True)
    p.add_argument("--accuracy-model")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("throughput", help="report sequential and pipelined FPS")
    p.add_argument("--graph", required=True)
    p.add_argument("--platform", required=True)
    p.add_argument("--assignment", required=True)
    p.add_argument("--pipelined", action="store_true",
                   help="print only the pipelined figure")
    common(p)
    p.set_defaults(func=cmd_throughput)

    p = sub.add_parser("pareto", help="emit the latency/accuracy/energy frontier")
    p.add_argument("--graph", required=True)
    p.add_argument("--platform", required=True)
    p.add_argument("--accuracy-model", required=True)
    common(p)
    p.set_defaults(func=cmd_pareto)

    p = sub.add_parser("validate", help="parse and cross-check input files")
    p.add_argument("--graph")
    p.add_argument("--platform")
    p.add_argument("--measurements")
    p.add_argument("--assignment")
    common(p, out=False)
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
