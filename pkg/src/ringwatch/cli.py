"""Command-line entry points.

    ringwatch synth generate --spec pop.toml --out-events e.ndjson --out-truth t.tsv
    ringwatch synth edge-samples --spec pop.toml --out samples.ndjson
    ringwatch train --samples samples.ndjson --seed 7 --trees 50 --out model.json
    ringwatch cc run --edges edges.tsv --nodes nodes.tsv --out labels.tsv
    ringwatch detector replay --events e.ndjson --out assignments.tsv
    ringwatch bench approaches --out approaches.csv
    ringwatch bench cc --edges 1e4,1e5,1e6 --out cc.csv
    ringwatch serve --config config.toml --port 8080
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import bench as benchmod
from .attributes import RawRegistrationEvent, default_schema, schema_from_dict
from .ccengine import alternating_cc
from .classifier import EdgeClassifier, LabeledEdgeSample, TrainParams, train
from .config import load_config, load_document
from .features import EdgeFeatureVector
from .synth import PopulationSpec, events_to_ndjson, generate, labeled_edge_samples, records_from_events


def _load_schema(path: str | None, hash_key: str = "ringwatch-default-key"):
    if path is None:
        return default_schema(hash_key.encode())
    return schema_from_dict(load_document(path))


def _cmd_synth_generate(args) -> int:
    spec = PopulationSpec.from_dict(load_document(args.spec)) if args.spec else PopulationSpec()
    events, truth = generate(spec)
    Path(args.out_events).write_text(events_to_ndjson(events), encoding="utf-8")
    Path(args.out_truth).write_text(truth.to_tsv(), encoding="utf-8")
    print(f"wrote {len(events)} events, {len(truth.rings)} rings")
    return 0


def _cmd_synth_edge_samples(args) -> int:
    spec = PopulationSpec.from_dict(load_document(args.spec)) if args.spec else PopulationSpec()
    schema = _load_schema(args.schema)
    events, truth = generate(spec)
    records = records_from_events(events, schema)
    samples = labeled_edge_samples(records, truth, schema, seed=args.seed)
    with open(args.out, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(
                json.dumps(
                    {
                        "edge_id": s.fv.edge_id,
                        "features": list(s.fv.features),
                        "schema_version": s.fv.schema_version,
                        "label": s.label,
                        "provenance": s.provenance,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    print(f"wrote {len(samples)} samples ({sum(s.label for s in samples)} positive)")
    return 0


def _cmd_train(args) -> int:
    samples = []
    with open(args.samples, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            samples.append(
                LabeledEdgeSample(
                    fv=EdgeFeatureVector(
                        edge_id=obj["edge_id"],
                        features=tuple(obj["features"]),
                        schema_version=obj["schema_version"],
                    ),
                    label=obj["label"],
                    provenance=obj.get("provenance", "synthetic"),
                )
            )
    params = TrainParams(trees=args.trees, max_depth=args.depth, seed=args.seed)
    model = train(
        samples, params, trained_at=int(time.time() * 1000), threshold=args.threshold
    )
    model.save(args.out)
    print(
        f"trained {params.trees} trees on {len(samples)} samples; "
        f"oob_accuracy={model.metadata['oob_accuracy']:.4f}"
    )
    return 0


def _cmd_cc_run(args) -> int:
    edges = []
    with open(args.edges, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split("\t")
            if len(parts) >= 2:
                edges.append((int(parts[0]), int(parts[1])))
    nodes = []
    if args.nodes:
        with open(args.nodes, encoding="utf-8") as fh:
            nodes = [int(line.split("\t")[0]) for line in fh if line.strip()]
    labels, rounds = alternating_cc(edges, nodes=nodes)
    with open(args.out, "w", encoding="utf-8") as fh:
        for node in sorted(labels):
            fh.write(f"{node}\t{labels[node]}\n")
    if args.trace_rounds:
        print(f"converged in {rounds} rounds")
    print(f"labeled {len(labels)} nodes, {len(set(labels.values()))} components")
    return 0


def _cmd_detector_replay(args) -> int:
    from .actioning import open_service

    config = load_config(args.config)
    if args.no_fsync:
        config.fsync = False
    schema = _load_schema(args.schema, config.hash_key)
    model = EdgeClassifier.load(args.model) if args.model else None
    state_dir = args.state_dir or (Path(args.out).parent / "detector-state")
    svc = open_service(config, schema, model, state_dir)
    processed = 0
    with open(args.events, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            event = RawRegistrationEvent.from_json(line)
            result = svc.ingest_registration(event)
            processed += 1
            if args.ack and not result.get("duplicate"):
                print(f"ACK {event.user_id}", flush=True)
    svc.reconcile_now(at=svc.last_reconcile_at or 0, force=True)
    with open(args.out, "w", encoding="utf-8") as fh:
        for user in sorted(svc.cache.assignments):
            fh.write(f"{user}\t{svc.cache.assignments[user]}\n")
    actions_path = Path(args.out).with_suffix(".actions.ndjson")
    actions_path.write_text(svc.actions_json(), encoding="utf-8")
    svc.close()
    print(f"processed {processed} events; {len(svc.cache.clusters)} clusters")
    return 0


def _cmd_bench_approaches(args) -> int:
    doc = load_document(args.spec) if args.spec else {}
    rows = benchmod.bench_approaches(
        component_sizes=tuple(doc.get("component_sizes", (10, 100, 1000, 10_000))),
        total_edges=doc.get("total_edges", 100_000),
        events=doc.get("events", 200),
        seed=doc.get("seed", 7),
    )
    benchmod.write_approach_csv(rows, args.out)
    for r in rows:
        print(
            f"{r.approach:>12} size={r.component_size:<6} p50={r.p50_ms:9.4f}ms "
            f"p95={r.p95_ms:9.4f}ms ops={r.mean_ops:.0f}"
        )
    return 0


def _cmd_bench_cc(args) -> int:
    counts = tuple(int(float(x)) for x in args.edges.split(","))
    rows = benchmod.bench_cc_scale(edge_counts=counts)
    benchmod.write_cc_csv(rows, args.out)
    r2 = benchmod.linear_fit_r2([r["edges"] for r in rows], [r["seconds"] for r in rows])
    for r in rows:
        print(f"edges={r['edges']:<9} nodes={r['nodes']:<9} {r['seconds']:.3f}s rounds={r['rounds']}")
    print(f"linear fit R^2 = {r2:.4f}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .actioning import open_service
    from .service import create_app

    config = load_config(args.config)
    schema = _load_schema(args.schema or config.schema_path, config.hash_key)
    model_path = args.model or config.model_path
    model = EdgeClassifier.load(model_path) if model_path else None
    svc = open_service(config, schema, model, args.state_dir)
    app = create_app(svc)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="ringwatch")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="synthetic population tools")
    synth_sub = synth.add_subparsers(dest="synth_command", required=True)
    sg = synth_sub.add_parser("generate")
    sg.add_argument("--spec", default=None, help="population spec (TOML/JSON)")
    sg.add_argument("--out-events", required=True)
    sg.add_argument("--out-truth", required=True)
    sg.set_defaults(func=_cmd_synth_generate)
    se = synth_sub.add_parser("edge-samples")
    se.add_argument("--spec", default=None)
    se.add_argument("--schema", default=None)
    se.add_argument("--seed", type=int, default=0)
    se.add_argument("--out", required=True)
    se.set_defaults(func=_cmd_synth_edge_samples)

    tr = sub.add_parser("train", help="train the edge classifier")
    tr.add_argument("--samples", required=True)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--trees", type=int, default=50)
    tr.add_argument("--depth", type=int, default=8)
    tr.add_argument("--threshold", type=float, default=0.8)
    tr.add_argument("--out", required=True)
    tr.set_defaults(func=_cmd_train)

    cc = sub.add_parser("cc", help="batch connected components")
    cc_sub = cc.add_subparsers(dest="cc_command", required=True)
    ccr = cc_sub.add_parser("run")
    ccr.add_argument("--edges", required=True, help="TSV, first two columns lo/hi")
    ccr.add_argument("--nodes", default=None, help="TSV of isolated-eligible node ids")
    ccr.add_argument("--out", required=True)
    ccr.add_argument("--trace-rounds", action="store_true")
    ccr.set_defaults(func=_cmd_cc_run)

    det = sub.add_parser("detector", help="real-time detector")
    det_sub = det.add_subparsers(dest="detector_command", required=True)
    dr = det_sub.add_parser("replay")
    dr.add_argument("--events", required=True)
    dr.add_argument("--out", required=True)
    dr.add_argument("--state-dir", default=None)
    dr.add_argument("--config", default=None)
    dr.add_argument("--schema", default=None)
    dr.add_argument("--model", default=None)
    dr.add_argument("--ack", action="store_true", help="print ACK <user> per durable event")
    dr.add_argument("--no-fsync", action="store_true")
    dr.set_defaults(func=_cmd_detector_replay)

    be = sub.add_parser("bench", help="benchmarks")
    be_sub = be.add_subparsers(dest="bench_command", required=True)
    ba = be_sub.add_parser("approaches")
    ba.add_argument("--spec", default=None)
    ba.add_argument("--out", required=True)
    ba.set_defaults(func=_cmd_bench_approaches)
    bc = be_sub.add_parser("cc")
    bc.add_argument("--edges", default="1e4,1e5,1e6")
    bc.add_argument("--out", required=True)
    bc.set_defaults(func=_cmd_bench_cc)

    sv = sub.add_parser("serve", help="HTTP service")
    sv.add_argument("--config", default=None)
    sv.add_argument("--schema", default=None)
    sv.add_argument("--model", default=None)
    sv.add_argument("--state-dir", required=True)
    sv.add_argument("--host", default="127.0.0.1")
    sv.add_argument("--port", type=int, default=8080)
    sv.set_defaults(func=_cmd_serve)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
