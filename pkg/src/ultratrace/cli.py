"""ultratrace command line.

Exit codes: 0 ok, 1 usage, 2 nothing decoded / nothing matched, 3 I/O,
4 authentication.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import server as srv
from .codec import chunks_to_payload, frame_to_chunks, make_frame
from .crypto_ids import ContactLog, Seed, derive_drid_chain, derive_rpids
from .modem import DEFAULT_PARAMS, demodulate, read_wav, synthesize_frame, write_wav
from .sim import (FEET, MAX_VOLUME_LEVEL, get_preset, knee, run_scenario, sweep_distance,
                  sweep_volume, wall_scenario, wall_scene, write_curve_csv)

log = logging.getLogger("ultratrace")

EXIT_OK, EXIT_USAGE, EXIT_NOTFOUND, EXIT_IO, EXIT_AUTH = 0, 1, 2, 3, 4
PAD_SAMPLES = 1024


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def parse_distances(text: str):
    """'1..15' (inclusive, step 1) or '1,2,4.5'."""
    try:
        if ".." in text:
            lo, hi = text.split("..")
            lo, hi = float(lo), float(hi)
            n = int(round(hi - lo))
            if n < 0:
                raise ValueError
            return [lo + i for i in range(n + 1)]
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"bad distance list {text!r}") from None


def _read_seed(path: str) -> Seed:
    with open(path) as f:
        text = f.read()
    try:
        return Seed.from_hex(text)
    except ValueError as e:
        raise UsageError(f"{path}: not a 32-byte hex seed ({e})") from None


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


# -- identities -------------------------------------------------------------

def cmd_keygen(args) -> int:
    seed = Seed.generate()
    if args.out:
        with open(args.out, "w") as f:
            f.write(seed.hex() + "\n")
        os.chmod(args.out, 0o600)
    else:
        print(seed.hex())
    return EXIT_OK


def cmd_derive(args) -> int:
    seed = _read_seed(args.seed)
    if args.rpids is not None:
        drid = derive_drid_chain(seed, args.rpids + 1)[args.rpids]
        for rp in derive_rpids(drid):
            print(rp.hex())
    else:
        for drid in derive_drid_chain(seed, args.days):
            print(drid.hex())
    return EXIT_OK


# -- audio ------------------------------------------------------------------

def cmd_encode(args) -> int:
    try:
        rpid = bytes.fromhex(args.rpid)
    except ValueError:
        raise UsageError(f"--rpid is not hex: {args.rpid!r}") from None
    if len(rpid) != 16:
        raise UsageError("--rpid must be 16 bytes (32 hex digits)")
    frame = make_frame(rpid, args.units)
    audio = synthesize_frame(frame_to_chunks(frame), args.channel, args.volume)
    pad = np.zeros(PAD_SAMPLES)
    write_wav(args.out, np.concatenate([pad, audio, pad]))
    return EXIT_OK


def cmd_decode(args) -> int:
    buf = read_wav(args.input)
    found = []
    for chunks in demodulate(buf, args.channel, DEFAULT_PARAMS):
        payload = chunks_to_payload(chunks)
        if payload is not None:
            found.append(payload.hex())
    if not found:
        print("no-valid-unit", file=sys.stderr)
        return EXIT_NOTFOUND
    for h in (found if args.all else found[:1]):
        print(h)
    return EXIT_OK


# -- simulation -------------------------------------------------------------

def _preset(name):
    try:
        return get_preset(name)
    except KeyError as e:
        raise UsageError(str(e.args[0])) from None


def _base_config(args, distance_ft=1.0 / FEET):
    p = _preset(args.preset)
    cfg = p.config(distance_ft, seed=args.seed, volume_level=args.volume_level,
                   duration=args.duration, repetitions=getattr(args, "reps", 1))
    return p, cfg


def cmd_simulate(args) -> int:
    _, cfg = _base_config(args, args.distance_ft)
    report = run_scenario(cfg)
    out = report.to_dict()
    out.update({"preset": args.preset, "distance_ft": args.distance_ft, "seed": args.seed})
    if args.trace:
        from .mac import write_trace
        write_trace(args.trace, report.events)
    if args.save_logs:
        os.makedirs(args.save_logs, exist_ok=True)
        for nid in report.node_ids:
            report.logs[nid].save(os.path.join(args.save_logs, f"contacts_{nid}.jsonl"))
            with open(os.path.join(args.save_logs, f"seed_{nid}.hex"), "w") as f:
                f.write(report.identities[nid].seed.hex() + "\n")
    _emit(out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    dists = parse_distances(args.distances)
    _, cfg = _base_config(args)
    curve = sweep_distance(cfg, dists)
    write_curve_csv(args.out, curve)
    print(f"knee {knee(curve):g} ft", file=sys.stderr)
    return EXIT_OK


def cmd_sweep_volume(args) -> int:
    dists = parse_distances(args.distances)
    try:
        levels = [int(x) for x in args.levels.split(",")]
    except ValueError:
        raise UsageError(f"bad level list {args.levels!r}") from None
    if any(not 0 <= lv <= MAX_VOLUME_LEVEL for lv in levels):
        raise UsageError(f"levels must lie in [0, {MAX_VOLUME_LEVEL}]")
    _, cfg = _base_config(args)
    family = sweep_volume(cfg, levels, dists)
    with open(args.out, "w") as f:
        f.write("level,distance_ft,mean_r,stddev,n_reps\n")
        for lv, curve in family.items():
            for p in curve:
                f.write(f"{lv},{p.distance_ft:g},{p.mean_r:.6f},{p.stddev:.6f},{p.n_reps}\n")
    _emit({str(lv): knee(c) for lv, c in family.items()})
    return EXIT_OK


def cmd_wall(args) -> int:
    p = _preset(args.preset)
    cfg = replace(p.config(seed=args.seed, volume_level=args.volume_level, duration=args.duration,
                           repetitions=args.reps),
                  scene=wall_scene(p, args.offset_ft, args.loss_db))
    res = wall_scenario(cfg)
    _emit({"acoustic_r": res.acoustic_r, "disk_r": res.disk_r,
           "cross_wall_deliveries": res.cross_wall_deliveries,
           "same_side_rate": res.same_side_rate,
           "disk_cross_wall_contacts": res.disk_cross_wall_contacts, "runs": len(res.runs)})
    return EXIT_OK


# -- server -----------------------------------------------------------------

def cmd_serve(args) -> int:
    store = srv.Store(args.token, args.store)
    server = srv.DridServer(store, args.host, args.port)
    print(f"listening on {args.host}:{server.port} ({len(store)} records)", file=sys.stderr, flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def cmd_upload(args) -> int:
    seed = _read_seed(args.seed)
    try:
        first = dt.date.fromisoformat(args.first_date)
    except ValueError:
        raise UsageError(f"bad --first-date {args.first_date!r}") from None
    drids = derive_drid_chain(seed, args.days)
    records = [(d.bytes, (first + dt.timedelta(days=d.day_index)).isoformat()) for d in drids]
    client = srv.Client(args.host, args.port)
    accepted = 0
    for i in range(0, len(records), srv.MAX_RECORDS_PER_UPLOAD):
        accepted += client.upload(args.token, records[i:i + srv.MAX_RECORDS_PER_UPLOAD])
    _emit({"accepted": accepted, "sent": len(records)})
    return EXIT_OK


def cmd_sync_match(args) -> int:
    contacts = ContactLog.load(args.log)
    cursor = srv.CursorFile(args.cursor_file)
    res = srv.fetch_and_match(contacts, srv.Client(args.host, args.port), cursor)
    if res.deferred:
        print(f"sync failed: {res.error}", file=sys.stderr)
        return EXIT_IO
    out = res.report.to_dict()
    out.update({"cursor": res.cursor, "new_records": res.new_records})
    _emit(out)
    print(f"{res.report.total_matched} matches", file=sys.stderr)
    return EXIT_OK


# -- wiring -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="ultratrace", description="Acoustic contact tracing toolkit.")
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    p = sub.add_parser("keygen", help="generate a device seed")
    p.add_argument("--out")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("derive", help="print the DRID chain, or one day's RPIDs")
    p.add_argument("--seed", required=True, help="file holding the seed as hex")
    p.add_argument("--days", type=int, default=14)
    p.add_argument("--rpids", type=int, metavar="DAY")
    p.set_defaults(func=cmd_derive)

    p = sub.add_parser("encode", help="write one RPID frame to a WAV file")
    p.add_argument("--rpid", required=True)
    p.add_argument("--channel", type=int, default=0, choices=[0, 1])
    p.add_argument("--units", type=int, default=1, choices=range(1, 6))
    p.add_argument("--volume", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="recover RPIDs from a WAV file")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--channel", type=int, default=0, choices=[0, 1])
    p.add_argument("--all", action="store_true", help="print every decoded frame")
    p.set_defaults(func=cmd_decode)

    def sim_opts(p, reps=True):
        p.add_argument("--preset", default="quiet_out_of_pocket")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--duration", type=float, default=600.0)
        p.add_argument("--volume-level", type=int, default=MAX_VOLUME_LEVEL)
        if reps:
            p.add_argument("--reps", type=int, default=10)

    p = sub.add_parser("simulate", help="one seeded multi-node run")
    sim_opts(p, reps=False)
    p.add_argument("--distance-ft", type=float, default=3.0)
    p.add_argument("--trace", help="write the MAC event trace (JSON lines)")
    p.add_argument("--save-logs", metavar="DIR", help="store each node's contact log and seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="success rate versus distance, as CSV")
    sim_opts(p)
    p.add_argument("--distances", default="1..15")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("sweep-volume", help="distance curves for several volume levels")
    sim_opts(p)
    p.add_argument("--levels", default="12,16,20,25")
    p.add_argument("--distances", default="1..15")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep_volume)

    p = sub.add_parser("wall", help="acoustic vs disk-model contacts across a wall")
    sim_opts(p)
    p.add_argument("--offset-ft", type=float, default=3.0)
    p.add_argument("--loss-db", type=float, default=40.0)
    p.set_defaults(func=cmd_wall)

    def net_opts(p):
        p.add_argument("--host", default="127.0.0.1")
        p.add_argument("--port", type=int, default=8765)

    p = sub.add_parser("serve", help="run the DRID server")
    net_opts(p)
    p.add_argument("--store", required=True, help="append-only JSON-lines file")
    p.add_argument("--token", required=True)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("upload", help="upload a diagnosed user's DRIDs")
    net_opts(p)
    p.add_argument("--token", required=True)
    p.add_argument("--seed", required=True)
    p.add_argument("--days", type=int, default=14)
    p.add_argument("--first-date", default=dt.date.today().isoformat(),
                   help="calendar date of DRID day 0")
    p.set_defaults(func=cmd_upload)

    p = sub.add_parser("sync-match", help="pull new DRIDs and match the contact log")
    net_opts(p)
    p.add_argument("--log", required=True)
    p.add_argument("--cursor-file", required=True)
    p.set_defaults(func=cmd_sync_match)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except srv.AuthError as e:
        print(f"auth-failure: {e}", file=sys.stderr)
        return EXIT_AUTH
    except srv.InvalidArgument as e:
        print(f"invalid-argument: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (srv.TransportError, OSError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
