#!/usr/bin/env python3
"""Deterministic fake benchmark driver for protocol tests.

Reads one JSON request per line and answers one JSON response per line.
Behavior switches on trial_id:
  "boom"  -> {"error": ...}
  "hang"  -> never answers (timeout path)
  "junk"  -> non-JSON garbage
anything else -> frames + perf derived from a hash of the config.
"""
import hashlib
import json
import sys
import time


def main():
    for line in sys.stdin:
        req = json.loads(line)
        trial = req.get("trial_id", "")
        if trial == "boom":
            print(json.dumps({"error": "benchmark exploded"}), flush=True)
            continue
        if trial == "hang":
            time.sleep(3600)
        if trial == "junk":
            print("this is not json", flush=True)
            continue
        digest = hashlib.sha256(
            json.dumps(req["config"], sort_keys=True).encode()).digest()
        base = 100.0 + digest[0]
        wl = req["workload"]
        T = max(2, int(wl["duration_s"] // wl["frame_interval_s"]))
        n_metrics = 63
        frames = []
        for t in range(1, T + 1):
            values = [float(t * (1 + (digest[i % 32] % 7))) for i in range(n_metrics)]
            frames.append({"t": t * wl["frame_interval_s"], "values": values})
        perf = {"tps": base, "p95_ms": 1000.0 / base, "qps": base * 10}
        print(json.dumps({"frames": frames, "perf": perf}), flush=True)


if __name__ == "__main__":
    main()
