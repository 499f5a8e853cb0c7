"""Command line client for the conversion service.

By default every subcommand talks to an in-process service instance; pass
--server URL to target a running one instead.  Exit codes: 0 on success,
1 on usage errors, 2 on runtime or data errors.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional

import httpx

from . import __version__
from . import runtime as rt
from . import store as store_mod

USAGE_EXIT = 1
RUNTIME_EXIT = 2

CONFIG_KEYS = {
    "server": str,
    "arch": str,
    "seed": int,
    "vocoder": str,
    "d_model": int,
    "max_frames": int,
    "bits": int,
    "iters": int,
    "warmup": int,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_EXIT)


def load_config(path: str) -> Dict[str, object]:
    """Line-oriented `key = value` file; '#' starts a comment."""
    values: Dict[str, object] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = CONFIG_KEYS[key](value)
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from exc
    return values


def _client(server: Optional[str]) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=600.0)
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DeprecationWarning)
        from fastapi.testclient import TestClient

    from .service import create_app

    return TestClient(create_app())


def _check(resp: httpx.Response) -> httpx.Response:
    if resp.status_code >= 400:
        try:
            detail = resp.json().get("detail", resp.text)
        except Exception:
            detail = resp.text
        raise RuntimeError(f"service error {resp.status_code}: {detail}")
    return resp


def build_parser(defaults: Dict[str, object]) -> _Parser:
    parser = _Parser(prog="streamvc", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", help="key = value defaults file")
    parser.add_argument("--server", default=defaults.get("server"),
                        help="base URL of a running service (default: in-process)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="parse an architecture and report its delay")
    p.add_argument("--arch", default=defaults.get("arch", "lsa1"),
                   help="named config or DSL text")
    p.add_argument("--hop-ms", type=float, default=10.0)
    p.add_argument("--json", action="store_true", help="print the raw response")

    p = sub.add_parser("configs", help="list the named encoder configurations")

    p = sub.add_parser("convert", help="convert a WAV file")
    p.add_argument("--in", dest="input", required=True, help="input 16-bit mono PCM WAV")
    p.add_argument("--out", dest="output", required=True, help="output WAV path")
    p.add_argument("--arch", default=defaults.get("arch", "lsa1"))
    p.add_argument("--weights", help="weight file (runs locally; must match --arch)")
    p.add_argument("--seed", type=int, default=defaults.get("seed", 42))
    p.add_argument("--vocoder", default=defaults.get("vocoder", "gl"),
                   choices=["gl", "ngl", "mg"])
    p.add_argument("--d-model", type=int, default=defaults.get("d_model", 32))
    p.add_argument("--max-frames", type=int, default=defaults.get("max_frames", 200))
    p.add_argument("--chunk-samples", type=int, default=1600)

    p = sub.add_parser("init", help="generate seeded pipeline weights to a file")
    p.add_argument("--out", dest="output", required=True, help="weight file path")
    p.add_argument("--arch", default=defaults.get("arch", "lsa1"))
    p.add_argument("--seed", type=int, default=defaults.get("seed", 42))
    p.add_argument("--d-model", type=int, default=defaults.get("d_model", 32))

    p = sub.add_parser("quantize", help="quantize a weight file")
    p.add_argument("--weights", dest="input", required=True, help="weight file")
    p.add_argument("--out", dest="output", required=True, help="quantized weight file")
    p.add_argument("--bits", type=int, default=defaults.get("bits", 8), choices=[4, 8])
    p.add_argument("--scope", default="all",
                   help="name prefix to quantize (enc, dec, voc, all)")

    p = sub.add_parser("bench", help="benchmark a component and emit reports")
    p.add_argument("--part", default="encoder",
                   choices=["encoder", "decoder", "vocoder", "pipeline"])
    p.add_argument("--arch", action="append", default=None,
                   help="config to bench (repeatable; default lsa_ls2)")
    p.add_argument("--iters", type=int, default=defaults.get("iters", 20))
    p.add_argument("--warmup", type=int, default=defaults.get("warmup", 5))
    p.add_argument("--report", dest="csv", help="write the CSV table here")
    p.add_argument("--svg", help="write the delay/quality SVG here")

    p = sub.add_parser("selftest", help="run the acceptance checks")
    p.add_argument("checks", nargs="*", help="subset of checks (default: all)")

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)

    return parser


def _cmd_analyze(client, args) -> int:
    data = _check(client.post("/analyze", json={"arch": args.arch, "hop_ms": args.hop_ms})).json()
    if args.json:
        print(json.dumps(data, indent=2))
        return 0
    name = data["name"] or "(inline)"
    print(f"{name}: {data['dsl']}")
    print(f"  conformer blocks: {data['cb_count']}  stackers: {data['sl_count']}"
          f"  subsample: {data['subsample_factor']}x")
    print(f"  look-ahead: {data['lookahead_frames']} frames = {data['delay_ms']:g} ms")
    for row in data["per_layer"]:
        if row["lookahead_frames"]:
            print(f"    {row['layer']}: +{row['lookahead_frames']} frames"
                  f" (at {row['subsample_before']}x rate)")
    for f in data["findings"]:
        print(f"  {f['level']}: {f['message']}")
    return 0


def _cmd_configs(client, args) -> int:
    data = _check(client.get("/configs")).json()
    for c in data["configs"]:
        print(f"{c['name']:10s} delay {c['delay_ms']:6g} ms  "
              f"subsample {c['subsample_factor']}x  {c['dsl']}")
    return 0


def _cmd_convert(client, args) -> int:
    if args.weights:
        store = store_mod.load(args.weights)
        pipe = rt.build_pipeline(args.arch, vocoder=args.vocoder,
                                 d_model=args.d_model, max_frames=args.max_frames,
                                 weights=store)
        samples, rate = rt.read_wav(args.input)
        session = rt.StreamSession(pipe)
        step = max(1, args.chunk_samples)
        for lo in range(0, samples.shape[0], step):
            rt.feed_audio(session, samples[lo:lo + step])
        out = rt.end_of_speech(session)
        rt.write_wav(args.output, out, rate)
        print(f"wrote {args.output} ({out.shape[0]} samples)")
        return 0
    body = Path(args.input).read_bytes()
    resp = _check(client.post(
        "/convert",
        params={
            "arch": args.arch, "seed": args.seed, "vocoder": args.vocoder,
            "d_model": args.d_model, "max_frames": args.max_frames,
            "chunk_samples": args.chunk_samples,
        },
        content=body,
    ))
    Path(args.output).write_bytes(resp.content)
    print(f"wrote {args.output} ({len(resp.content)} bytes)")
    return 0


def _cmd_init(client, args) -> int:
    pipe = rt.build_pipeline(args.arch, seed=args.seed, d_model=args.d_model)
    store = rt.pipeline_weights(pipe)
    store_mod.save(store, args.output)
    print(f"wrote {args.output} ({store_mod.serialized_size(store)} bytes, "
          f"{len(store)} tensors)")
    return 0


def _cmd_quantize(client, args) -> int:
    body = Path(args.input).read_bytes()
    resp = _check(client.post(
        "/quantize", params={"bits": args.bits, "scope": args.scope}, content=body,
    ))
    Path(args.output).write_bytes(resp.content)
    ratio = len(resp.content) / max(len(body), 1)
    print(f"wrote {args.output} ({len(resp.content)} bytes, {ratio:.3f}x of input)")
    return 0


def _cmd_bench(client, args) -> int:
    archs = args.arch or ["lsa_ls2"]
    reports = []
    for arch in archs:
        data = _check(client.post("/bench", json={
            "part": args.part, "arch": arch,
            "iters": args.iters, "warmup": args.warmup,
        })).json()
        reports.append(data)
        print(f"{data['name']:10s} {data['component']}: mean {data['mean_ms']:.2f} ms, "
              f"p95 {data['p95_ms']:.2f} ms, rtf {data['rtf']:.2f}")
    if args.csv:
        text = _check(client.post("/report", json={
            "reports": reports, "delay_archs": archs, "fmt": "csv",
        })).json()["text"]
        Path(args.csv).write_text(text)
        print(f"wrote {args.csv}")
    if args.svg:
        text = _check(client.post("/report", json={
            "reports": reports, "delay_archs": archs, "fmt": "svg",
        })).json()["text"]
        Path(args.svg).write_text(text)
        print(f"wrote {args.svg}")
    return 0


def _cmd_selftest(client, args) -> int:
    payload = {"checks": args.checks or None}
    data = _check(client.post("/selftest", json=payload)).json()
    for r in data["results"]:
        print(f"{'PASS' if r['passed'] else 'FAIL'} {r['name']}: {r['detail']}")
    return 0 if data["passed"] else RUNTIME_EXIT


def _cmd_serve(client, args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return 0


COMMANDS = {
    "analyze": _cmd_analyze,
    "configs": _cmd_configs,
    "convert": _cmd_convert,
    "init": _cmd_init,
    "quantize": _cmd_quantize,
    "bench": _cmd_bench,
    "selftest": _cmd_selftest,
    "serve": _cmd_serve,
}


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    defaults: Dict[str, object] = {}
    if "--config" in argv:
        try:
            defaults = load_config(argv[argv.index("--config") + 1])
        except IndexError:
            print("error: --config needs a path", file=sys.stderr)
            return USAGE_EXIT
        except (OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return USAGE_EXIT
    parser = build_parser(defaults)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "serve":
        return _cmd_serve(None, args)
    try:
        with _client(args.server) as client:
            return COMMANDS[args.command](client, args)
    except (OSError, RuntimeError, ValueError, httpx.HTTPError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_EXIT


if __name__ == "__main__":
    raise SystemExit(main())
