"""Command-line entry points.

    demo-add   replay the worked private-addition example
    bench      per-function cost comparison across approximation variants
    profile    per-label breakdown of a full private forward pass
    infer      private inference (in-process, or two processes + dealer)
    distill    teacher training, two-stage distillation and the ablation table

Reports are JSON documents; tabular rows are mirrored to CSV and rendered
to PNG next to the report path.
"""

import argparse
import json
import sys

import numpy as np

from . import nn
from . import protocols as P
from .approx import ApproximationSpec
from .distill import DistillConfig, distill, run_ablation, train_teacher
from .errors import MpcError
from .nn import ModelConfig, config_digest, load_weights, parse_kv_doc, save_weights
from .plaintext import make_toy_dataset
from .report import (
    RunReport,
    breakdown_rows,
    render_accuracy_figure,
    render_breakdown_figure,
    render_variant_figure,
    speedup_rows,
    write_outputs,
)
from .ring import FixedPointCodec
from .shares import ARITHMETIC, LocalDealerClient, SharedTensor
from .transport import (
    RemoteDealerClient,
    channel_pair,
    run_pair,
    serve_dealer,
    simulated_latency_report,
    tcp_connect,
    tcp_listen_one,
)


def _net_params(args):
    return {
        "round_latency": args.net_latency / 1000.0,        # ms -> s
        "bandwidth": args.net_bandwidth * 1e9 / 8.0,       # Gbit/s -> B/s
        "ops_rate": args.ops_rate,
    }


def _local_sessions(seed: int, frac_bits: int = 16):
    c1, c2 = channel_pair(timeout=120.0)
    codec = FixedPointCodec(frac_bits)
    s1 = P.ProtocolSession(1, c1, LocalDealerClient(1, seed), codec, sharing_seed=seed + 1)
    s2 = P.ProtocolSession(2, c2, LocalDealerClient(2, seed), codec, sharing_seed=seed + 1)
    return s1, s2


def _run_local(job, seed: int):
    """Run job(session) on both in-process parties; returns results+sessions."""
    s1, s2 = _local_sessions(seed)
    r1, r2 = run_pair(lambda: job(s1), lambda: job(s2), timeout=600.0)
    return (r1, r2), (s1, s2)


def _host_port(text: str):
    host, port = text.rsplit(":", 1)
    return host, int(port)


# ---------------------------------------------------------------------------
# demo-add
# ---------------------------------------------------------------------------


def cmd_demo_add(args) -> int:
    """Replay the private-addition walkthrough with its exact numbers."""
    rows = [
        ("Declare x", "x = 1", "x = random", "x provided by party 1"),
        ("Mask for x", "[z_x]_1 = -4", "[z_x]_2 = 4", "sum to 0"),
        ("Share x", "[x]_1 = -3", "[x]_2 = 4", "sum to x"),
        ("Declare y", "y = random", "y = 2", "y provided by party 2"),
        ("Mask for y", "[z_y]_1 = 50", "[z_y]_2 = -50", "sum to 0"),
        ("Share y", "[y]_1 = 50", "[y]_2 = -48", "sum to y"),
    ]
    share_x = {1: (1 - 4) % 2**64, 2: 4}
    share_y = {1: 50, 2: (2 - 50) % 2**64}

    def job(s):
        x = SharedTensor(s.party_id, ARITHMETIC, np.array([share_x[s.party_id]], dtype=np.uint64))
        y = SharedTensor(s.party_id, ARITHMETIC, np.array([share_y[s.party_id]], dtype=np.uint64))
        z = P.add(s, x, y)
        revealed = s.reveal(z)
        return int(z.data[0].astype(np.int64)), int(revealed[0].astype(np.int64))

    ((z1, r1), (z2, r2)), (s1, _) = _run_local(job, seed=0)
    width = max(len(r[0]) for r in rows) + 2
    for action, p1, p2, note in rows:
        print(f"{action:<{width}} {p1:<16} {p2:<16} {note}")
    print(f"{'Compute x + y':<{width}} [x+y]_1 = {z1:<6} [x+y]_2 = {z2}")
    print(f"{'Reveal x + y':<{width}} party 1 -> {r1:<6} party 2 -> {r2}")

    checks = [z1 == 47, z2 == -44, r1 == 3, r2 == 3,
              s1.ledger.total().rounds == 1]
    print("result:", "OK" if all(checks) else "MISMATCH")
    return 0 if all(checks) else 1


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


def _estimate_total(ledger, net):
    rep = simulated_latency_report(ledger, net["round_latency"], net["bandwidth"],
                                   net["ops_rate"])
    return rep["__total__"]


def _bench_one(job, seed, net):
    _, (s1, _) = _run_local(job, seed)
    total = _estimate_total(s1.ledger, net)
    return {
        "rounds": total["rounds"],
        "bytes_sent": total["bytes_sent"],
        "est_seconds": total["total_seconds"],
    }


def cmd_bench(args) -> int:
    net = _net_params(args)
    seq = args.seq
    if seq < 1:
        raise MpcError("--seq must be >= 1")
    rng = np.random.default_rng(args.seed)
    per_variant = {}

    if args.function == "gelu":
        x = rng.normal(0, 2, size=(seq, 128))
        for variant in ("quad", "exact"):
            def job(s, v=variant):
                shared = P.share_real_input(s, x if s.party_id == 1 else None, 1, x.shape)
                return nn.mpc_gelu(s, shared, ApproximationSpec(v, "exact"))
            per_variant[variant] = _bench_one(job, args.seed, net)
        baseline = "exact"
    elif args.function == "softmax":
        x = rng.normal(0, 2, size=(seq, seq))
        for variant in ("two_quad", "two_relu", "exact"):
            def job(s, v=variant):
                shared = P.share_real_input(s, x if s.party_id == 1 else None, 1, x.shape)
                return nn.mpc_softmax(s, shared, ApproximationSpec("quad", v))
            per_variant[variant] = _bench_one(job, args.seed, net)
        baseline = "exact"
    elif args.function == "matmul":
        a = rng.normal(0, 1, size=(seq, 32))
        b = rng.normal(0, 1, size=(32, 32))
        def job(s):
            sa = P.share_real_input(s, a if s.party_id == 1 else None, 1, a.shape)
            sb = P.share_real_input(s, b if s.party_id == 2 else None, 2, b.shape)
            return P.matmul(s, sa, sb)
        per_variant["matmul"] = _bench_one(job, args.seed, net)
        baseline = "matmul"
    elif args.function == "forward":
        specs = {
            "exact+exact": ApproximationSpec("exact", "exact"),
            "quad+exact": ApproximationSpec("quad", "exact"),
            "quad+two_relu": ApproximationSpec("quad", "two_relu"),
            "quad+two_quad": ApproximationSpec("quad", "two_quad"),
        }
        tokens = rng.integers(0, 64, size=seq)
        for name, spec in specs.items():
            cfg = ModelConfig(max_seq=seq, approx=spec)
            weights = nn.init_weights(cfg, seed=args.seed)
            def job(s, c=cfg, w=weights):
                sw = nn.share_weights(s, c, w if s.party_id == 2 else None)
                st = nn.share_tokens(s, c, tokens if s.party_id == 1 else None, seq)
                return nn.mpc_forward(s, st, sw, c)
            per_variant[name] = _bench_one(job, args.seed, net)
        baseline = "exact+exact"
    else:
        raise MpcError(f"unknown bench function {args.function!r}")

    rows = speedup_rows(per_variant, baseline)
    report = RunReport(
        command=f"bench {args.function}", seed=args.seed,
        config_digest="-",
        params={"seq": seq, "net_latency_ms": args.net_latency,
                "net_bandwidth_gbit": args.net_bandwidth},
        rows=rows,
        metrics={"baseline": baseline},
    )
    write_outputs(report, args.report,
                  lambda p: render_variant_figure(
                      rows, p, f"{args.function} cost per variant (seq={seq})"))
    for row in rows:
        print(json.dumps(row, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# profile
# ---------------------------------------------------------------------------


def cmd_profile(args) -> int:
    net = _net_params(args)
    spec = ApproximationSpec(args.gelu, args.softmax)
    cfg = ModelConfig(max_seq=args.seq, approx=spec)
    weights = nn.init_weights(cfg, seed=args.seed)
    rng = np.random.default_rng(args.seed)
    tokens = rng.integers(0, cfg.vocab, size=args.seq)

    def job(s):
        sw = nn.share_weights(s, cfg, weights if s.party_id == 2 else None)
        st = nn.share_tokens(s, cfg, tokens if s.party_id == 1 else None, args.seq)
        return nn.mpc_forward(s, st, sw, cfg)

    _, (s1, _) = _run_local(job, args.seed)
    rows = breakdown_rows(s1.ledger, net["round_latency"], net["bandwidth"],
                          net["ops_rate"])
    total = rows[-1]
    func_rows = rows[:-1]
    largest = max(func_rows, key=lambda r: r["est_total_seconds"])
    comm_fraction = (total["est_comm_seconds"] / total["est_total_seconds"]
                     if total["est_total_seconds"] else 0.0)
    report = RunReport(
        command="profile", seed=args.seed,
        config_digest=config_digest(cfg, args.seed, 16).hex()[:16],
        params={"seq": args.seq, "gelu": args.gelu, "softmax": args.softmax,
                "net_latency_ms": args.net_latency,
                "net_bandwidth_gbit": args.net_bandwidth},
        rows=rows,
        metrics={"largest_label": largest["label"],
                 "comm_fraction": comm_fraction,
                 "note": "LayerNorm/Other reflect engine-chosen kernels, "
                         "not core protocol routines"},
    )
    write_outputs(report, args.report,
                  lambda p: render_breakdown_figure(
                      rows, p, f"forward breakdown ({spec.label()}, seq={args.seq})"))
    print(f"largest label: {largest['label']}  comm fraction: {comm_fraction:.3f}")
    return 0


# ---------------------------------------------------------------------------
# infer
# ---------------------------------------------------------------------------


def _read_tokens(path: str) -> np.ndarray:
    with open(path) as fh:
        kv = parse_kv_doc(fh.read())
    return np.array([int(t) for t in kv["tokens"].split()], dtype=np.int64)


def _infer_report(session, cfg, args, logits) -> RunReport:
    net = _net_params(args)
    rows = breakdown_rows(session.ledger, net["round_latency"], net["bandwidth"],
                          net["ops_rate"])
    return RunReport(
        command="infer", seed=args.seed,
        config_digest=config_digest(cfg, args.seed + 1, 16).hex()[:16],
        params={"party": args.party, "seq": cfg.max_seq},
        rows=rows,
        metrics={"logits": [float(v) for v in logits] if logits is not None else None},
    )


def cmd_infer(args) -> int:
    if args.party == "dealer":
        host, port = _host_port(args.listen)
        serve_dealer(host, port, args.seed, n_parties=2, timeout=args.timeout)
        return 0

    if args.party == "all":
        cfg, weights = load_weights(args.weights)
        tokens = _read_tokens(args.input)
        def job(s):
            return nn.run_private_inference(
                s, cfg, tokens if s.party_id == 1 else None,
                weights if s.party_id == 2 else None, seq_len=len(tokens))
        (logits, _), (s1, _) = _run_local(job, args.seed)
        report = _infer_report(s1, cfg, args, logits)
        write_outputs(report, args.report,
                      lambda p: render_breakdown_figure(
                          report.rows, p, "private inference breakdown"))
        print(json.dumps({"logits": report.metrics["logits"]}, sort_keys=True))
        return 0

    party_id = int(args.party)
    codec = FixedPointCodec(16)
    if party_id == 1:
        cfg = nn.parse_config_doc(open(args.config).read())
        weights = None
        tokens = _read_tokens(args.input)
        host, port = _host_port(args.listen)
        chan = tcp_listen_one(host, port, timeout=args.timeout)
    else:
        cfg, weights = load_weights(args.weights)
        tokens = None
        host, port = _host_port(args.peer)
        chan = tcp_connect(host, port, timeout=args.timeout)

    dealer_host, dealer_port = _host_port(args.dealer)
    dealer_chan = tcp_connect(dealer_host, dealer_port, timeout=args.timeout)
    dealer = RemoteDealerClient(party_id, dealer_chan)
    session = P.ProtocolSession(party_id, chan, dealer, codec,
                                sharing_seed=args.seed + 1)
    try:
        logits = nn.run_private_inference(
            session, cfg, tokens, weights,
            seq_len=len(tokens) if tokens is not None else cfg.max_seq)
    finally:
        dealer.close()
        chan.close()
    report = _infer_report(session, cfg, args, logits)
    write_outputs(report, args.report,
                  lambda p: render_breakdown_figure(
                      report.rows, p, "private inference breakdown"))
    if logits is not None:
        print(json.dumps({"logits": report.metrics["logits"]}, sort_keys=True))
    else:
        print(json.dumps({"logits": None}, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# distill
# ---------------------------------------------------------------------------


def _parse_distill_config(path: str) -> dict:
    with open(path) as fh:
        kv = parse_kv_doc(fh.read())
    def geti(key, default):
        return int(kv.get(key, default))
    def getf(key, default):
        return float(kv.get(key, default))
    return {
        "dataset": dict(
            seed=geti("dataset_seed", 42), n_train=geti("n_train", 2000),
            n_test=geti("n_test", 500), vocab=geti("vocab", 64),
            seq=geti("seq", 16), n_classes=geti("n_classes", 4),
            dominance=getf("dominance", 0.4),
        ),
        "approx": ApproximationSpec(
            kv.get("gelu", "quad"), kv.get("softmax", "two_quad"),
            getf("two_quad_c", 5.0)),
        "seeds": tuple(int(t) for t in kv.get("seeds", "0 1 2").split()),
        "n_downstream": geti("n_downstream", 150),
        "teacher_epochs": geti("teacher_epochs", 12),
        "teacher_lr": getf("teacher_lr", 1e-3),
        "baseline_epochs": geti("baseline_epochs", 50),
        "baseline_lr": getf("baseline_lr", 5e-4),
        "cfg": DistillConfig(
            stage1_lr=getf("stage1_lr", 5e-4), stage2_lr=getf("stage2_lr", 1e-4),
            stage1_epochs=geti("stage1_epochs", 40),
            stage2_epochs=geti("stage2_epochs", 10),
            batch_size=geti("batch_size", 32),
        ),
    }


def cmd_distill(args) -> int:
    spec = _parse_distill_config(args.config)
    dataset = make_toy_dataset(**spec["dataset"])
    result = run_ablation(
        dataset, spec["approx"], seeds=spec["seeds"],
        teacher_epochs=spec["teacher_epochs"], teacher_lr=spec["teacher_lr"],
        baseline_epochs=spec["baseline_epochs"], baseline_lr=spec["baseline_lr"],
        n_downstream=spec["n_downstream"], cfg=spec["cfg"],
    )
    rows = [vars(r) for r in result["rows"]]
    if args.out:
        from dataclasses import replace as dc_replace
        teacher, _ = train_teacher(dataset, epochs=spec["teacher_epochs"],
                                   lr=spec["teacher_lr"], seed=spec["seeds"][0])
        from .distill import downstream_subset
        student, _ = distill(teacher, spec["approx"],
                             downstream_subset(dataset, spec["n_downstream"]),
                             dc_replace(spec["cfg"], seed=spec["seeds"][0]))
        save_weights(args.out, student.config, student.arrays())
    report = RunReport(
        command="distill", seed=spec["seeds"][0],
        config_digest="-",
        params={"approx": spec["approx"].label(), "seeds": list(spec["seeds"]),
                "n_downstream": spec["n_downstream"]},
        rows=rows,
        metrics={"per_seed_test": result["per_seed_test"],
                 "per_seed_train": result["per_seed_train"]},
    )
    write_outputs(report, args.report,
                  lambda p: render_accuracy_figure(
                      rows, p, f"ablation ({spec['approx'].label()})"))
    for row in rows:
        print(json.dumps(row, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_net_flags(p):
    p.add_argument("--net-latency", type=float, default=0.2,
                   help="simulated round latency in ms")
    p.add_argument("--net-bandwidth", type=float, default=10.0,
                   help="simulated bandwidth in Gbit/s")
    p.add_argument("--ops-rate", type=float, default=1e9,
                   help="modeled local element-ops per second")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mpcinfer",
        description="Two-party private transformer inference engine")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("demo-add", help="replay the private addition example")
    p.set_defaults(fn=cmd_demo_add)

    p = sub.add_parser("bench", help="cost comparison across variants")
    p.add_argument("--function", required=True,
                   choices=["gelu", "softmax", "matmul", "forward"])
    p.add_argument("--seq", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", default=None)
    _add_net_flags(p)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("profile", help="per-label forward-pass breakdown")
    p.add_argument("--seq", type=int, default=16)
    p.add_argument("--gelu", default="exact", choices=["exact", "quad"])
    p.add_argument("--softmax", default="exact",
                   choices=["exact", "two_relu", "two_quad"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", default=None)
    _add_net_flags(p)
    p.set_defaults(fn=cmd_profile)

    p = sub.add_parser("infer", help="private inference")
    p.add_argument("--party", required=True, choices=["1", "2", "dealer", "all"])
    p.add_argument("--peer", default=None, help="host:port of party 1 (party 2 connects)")
    p.add_argument("--dealer", default=None, help="host:port of the dealer endpoint")
    p.add_argument("--listen", default=None, help="host:port to listen on (party 1 / dealer)")
    p.add_argument("--weights", default=None, help="weight container (party 2 / all)")
    p.add_argument("--config", default=None, help="model config doc (party 1)")
    p.add_argument("--input", default=None, help="token document: 'tokens = 1 2 3'")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--timeout", type=float, default=60.0)
    p.add_argument("--report", default=None)
    _add_net_flags(p)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("distill", help="run the distillation pipeline + ablation")
    p.add_argument("--config", required=True, help="distillation config doc")
    p.add_argument("--out", default=None, help="write distilled student weights here")
    p.add_argument("--report", default=None)
    p.set_defaults(fn=cmd_distill)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except MpcError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
