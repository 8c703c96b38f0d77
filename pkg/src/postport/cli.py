"""
Command-line interface.

``simulate`` runs one protocol and prints its result document; ``sweep``
prints port-based teleportation figures of merit over a range of port counts.
Exit codes: 0 success, 1 usage error, 2 impossible post-selection, 3 resource
limit.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import appendix, engine as en, nonlocal_compute as nl, oracle as orc, portbased as pb, teleport as tp
from .errors import PostSelectionImpossible, ResourceLimit

PROTOCOLS = (
    "teleport-pre",
    "teleport-post",
    "teleport-prepost",
    "pbt",
    "pbt-prob",
    "pbt-post",
    "pbt-prepost",
    "nonlocal",
    "appendix-e6",
    "appendix-e7",
)
SCRIPTS = ("none", "z-measure", "x-measure", "bell-verify")
SWEEP_PROTOCOLS = ("pbt", "pbt-prob")

EXIT_OK, EXIT_USAGE, EXIT_POSTSELECT, EXIT_RESOURCE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --------------------------------------------------------------------------
# states and scripts


def preset(name: str, d: int) -> np.ndarray:
    """Amplitudes for a named preset or an amplitude file.

    Presets: ``0``, ``1``, ``+`` (uniform superposition), ``-``
    (``|0> - |1>``) and ``phi+`` (maximally entangled, dimension ``d^2``).
    Anything else is read as a file with one ``re im`` pair per line.
    """
    if name == "0":
        v = np.eye(d)[0]
    elif name == "1":
        v = np.eye(d)[1]
    elif name == "+":
        v = np.ones(d)
    elif name == "-":
        v = np.eye(d)[0] - np.eye(d)[1]
    elif name == "phi+":
        v = np.eye(d).reshape(-1)
    elif os.path.isfile(name):
        rows = np.loadtxt(name, ndmin=2)
        if rows.shape[1] != 2:
            raise UsageError(f"{name}: expected one 're im' pair per line")
        v = rows[:, 0] + 1j * rows[:, 1]
    else:
        raise UsageError(f"unknown state {name!r}")
    v = np.asarray(v, dtype=complex)
    if np.linalg.norm(v) < en.EPS_ZERO:
        raise UsageError(f"state {name!r} is zero")
    return v / np.linalg.norm(v)


def _single(name: str, d: int) -> np.ndarray:
    v = preset(name, d)
    if v.shape != (d,):
        raise UsageError(f"state {name!r} has {v.shape[0]} amplitudes, expected {d}")
    return v


def _pair(name: str, d: int) -> tuple:
    """``(vector on A B, is_product)`` from ``x``, ``x,y`` or a ``d^2``-dimensional state."""
    parts = name.split(",")
    if len(parts) == 2:
        return np.kron(_single(parts[0], d), _single(parts[1], d)), True
    v = preset(name, d)
    if v.shape == (d,):
        return np.kron(v, v), True
    if v.shape == (d * d,):
        return v, False
    raise UsageError(f"state {name!r} has {v.shape[0]} amplitudes, expected {d} or {d * d}")


def script(name: str, d: int, labels=("S",)) -> orc.ExperimentScript:
    if name == "none":
        return orc.ExperimentScript()
    if name == "bell-verify":
        if len(labels) != 2:
            raise UsageError("bell-verify needs a two-party protocol")
        return orc.bell_verify(d, labels)
    build = orc.z_measure if name == "z-measure" else orc.x_measure
    steps = []
    for label in labels:
        steps.extend(build(d, label).steps)
    return orc.ExperimentScript(tuple(steps))


# --------------------------------------------------------------------------
# running


def _need_ports(n, what="--ports") -> int:
    if n is None or n < 1:
        raise UsageError(f"{what} must be a positive integer")
    return n


def simulate(args) -> dict:
    d, mode, seed, trials = args.dim, args.mode, args.seed, args.trials
    p = args.protocol
    sc = args.script
    if p == "teleport-pre":
        psi = en.ket(_single(args.pre or "0", d), "S")
        rec = tp.teleport_pre(psi, d, script(sc, d), mode, seed, trials)
    elif p == "teleport-post":
        rec = tp.teleport_post(_single(args.post or "0", d), d, script(sc, d), mode, seed, trials)
    elif p == "teleport-prepost":
        psi = en.ket(_single(args.pre or "0", d), "S")
        rec = tp.teleport_prepost(psi, _single(args.post or "0", d), d, script(sc, d), mode, seed, trials)
    elif p in ("pbt", "pbt-prob"):
        n = _need_ports(args.ports)
        ch = pb.build_pgm(n, d) if p == "pbt" else pb.pbt_probabilistic(n, d)
        psi = en.ket(_single(args.pre or "0", d), "S")
        rec = pb.pbt_teleport(ch, psi, mode, seed, trials).record
    elif p == "pbt-post":
        n = _need_ports(args.ports)
        rec = pb.pbt_post_selected(_single(args.post or "0", d), n, d, script(sc, d), mode, seed, trials)
    elif p == "pbt-prepost":
        n = _need_ports(args.ports)
        nb = _need_ports(args.ports_b or n, "--ports-b")
        psi = en.ket(_single(args.pre or "0", d), "S")
        rec = pb.pbt_prepost(psi, _single(args.post or "0", d), n, nb, d, script(sc, d), mode, seed, trials)
    elif p == "nonlocal":
        n = _need_ports(args.ports)
        pre, pre_prod = _pair(args.pre or "0", d)
        post, post_prod = _pair(args.post or "0", d)
        if pre_prod and post_prod:
            a_pre, b_pre = _split(pre, d)
            a_post, b_post = _split(post, d)
            bi = nl.BipartiteTwoStateVector.product(
                orc.TwoStateVector(en.ket(a_pre, "A"), a_post), orc.TwoStateVector(en.ket(b_pre, "B"), b_post)
            )
        else:
            state = en.StateVector(en.SubsystemLayout(("A", "B"), (d, d)), pre)
            bi = nl.BipartiteTwoStateVector.joint(state, post)
        op = script("bell-verify" if sc == "none" else sc, d, ("A", "B"))
        rec = nl.instantaneous_nonlocal(bi, op, n, mode, seed, trials)
        rec.ledger = nl.ledger_report(rec, max(1, int(round(math.log2(d)))))
    elif p == "appendix-e6":
        rec = appendix.extract_entanglement(d, mode, seed, trials)
    elif p == "appendix-e7":
        if args.message is None:
            raise UsageError("appendix-e7 needs --message")
        res = appendix.dense_coding_via_postteleport(args.message, d, mode, seed, trials)
        rec = res.record
        values = sorted(set(res.decoded.values()))
        rec.extra["decoded_message"] = values[0] if len(values) == 1 else values
    else:
        raise UsageError(f"unknown protocol {p!r}")
    return rec.to_dict()


def _split(v: np.ndarray, d: int) -> tuple:
    """Factor a product vector on ``A B`` into its two parts."""
    m = v.reshape(d, d)
    u, s, vh = np.linalg.svd(m)
    return u[:, 0] * s[0], vh[0]


def sweep_row(protocol: str, n: int, d: int) -> dict:
    ch = pb.build_pgm(n, d) if protocol == "pbt" else pb.pbt_probabilistic(n, d)
    return {
        "n": n,
        "d": d,
        "fidelity": ch.conditional_fidelity(),
        "p_success": ch.success_probability(),
        "ebits": pb.pbt_program(ch).ledger().ebits,
    }


def port_range(text: str) -> list:
    """``"a..b"`` (inclusive), ``"a,b,c"`` or a single integer."""
    try:
        if ".." in text:
            lo, hi = (int(x) for x in text.split(".."))
            ports = list(range(lo, hi + 1))
        else:
            ports = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"bad port range {text!r}") from None
    if not ports:
        raise UsageError(f"empty port range {text!r}")
    if min(ports) < 1:
        raise UsageError("port counts must be positive")
    return ports


def sweep(args) -> list:
    if args.protocol not in SWEEP_PROTOCOLS:
        raise UsageError(f"sweep supports {', '.join(SWEEP_PROTOCOLS)}")
    ports = port_range(args.ports)
    jobs = [(args.protocol, n, args.dim) for n in ports]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            return list(pool.map(_row, jobs))
    return [_row(j) for j in jobs]


def _row(job) -> dict:
    return sweep_row(*job)


# --------------------------------------------------------------------------
# output


def _plain(x):
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, complex):
        return [x.real, x.imag]
    raise TypeError(f"cannot serialize {type(x)}")


def render(doc, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(doc, indent=2, default=_plain) + "\n"
    out = io.StringIO()
    if isinstance(doc, list):
        fields = ["n", "d", "fidelity", "p_success", "ebits"]
        rows = doc
    else:
        fields = ["label", "probability", "count"]
        rows = doc["outcomes"]
    writer = csv.DictWriter(out, fields, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: r[k] for k in fields})
    return out.getvalue()


def build_parser() -> Parser:
    parser = Parser(prog="postport", description="Simulate teleportation of pre- and post-selected states.")
    sub = parser.add_subparsers(dest="command", parser_class=Parser)
    sim = sub.add_parser("simulate", help="run one protocol")
    sim.add_argument("--protocol", required=True, choices=PROTOCOLS)
    sim.add_argument("--dim", type=int, default=2)
    sim.add_argument("--ports", type=int)
    sim.add_argument("--ports-b", type=int)
    sim.add_argument("--trials", type=int, default=10_000)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--mode", choices=("exact", "sampled"), default="exact")
    sim.add_argument("--script", choices=SCRIPTS, default="none")
    sim.add_argument("--pre")
    sim.add_argument("--post")
    sim.add_argument("--message", type=int)
    sim.add_argument("--output", choices=("json", "csv"), default="json")
    sim.add_argument("--jobs", type=int, default=1)
    sim.add_argument("--memory-cap", type=int)
    sw = sub.add_parser("sweep", help="figures of merit over a range of port counts")
    sw.add_argument("--protocol", choices=PROTOCOLS, default="pbt")
    sw.add_argument("--dim", type=int, default=2)
    sw.add_argument("--ports", default="1..6")
    sw.add_argument("--seed", type=int, default=0)
    sw.add_argument("--output", choices=("json", "csv"), default="csv")
    sw.add_argument("--jobs", type=int, default=1)
    sw.add_argument("--memory-cap", type=int)
    return parser


def main(argv=None) -> int:
    saved_cap = os.environ.get("SIM_MEMORY_CAP")
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required: simulate or sweep")
        if args.dim < 2:
            raise UsageError("--dim must be at least 2")
        if args.jobs < 1:
            raise UsageError("--jobs must be at least 1")
        if getattr(args, "trials", 1) < 1:
            raise UsageError("--trials must be at least 1")
        if args.memory_cap is not None:
            os.environ["SIM_MEMORY_CAP"] = str(args.memory_cap)
        doc = simulate(args) if args.command == "simulate" else sweep(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except PostSelectionImpossible as e:
        print(f"post-selection impossible: {e}", file=sys.stderr)
        return EXIT_POSTSELECT
    except ResourceLimit as e:
        print(f"resource limit: {e}", file=sys.stderr)
        return EXIT_RESOURCE
    except (ValueError, IndexError, KeyError) as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    finally:
        if saved_cap is None:
            os.environ.pop("SIM_MEMORY_CAP", None)
        else:
            os.environ["SIM_MEMORY_CAP"] = saved_cap
    sys.stdout.write(render(doc, args.output))
    return EXIT_OK
