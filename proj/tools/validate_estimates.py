#!/usr/bin/env python3
"""Run the CLI on small manifests and check estimates.json against the schema."""

import argparse
import json
import math
import pathlib
import subprocess
import sys

import jsonschema

MANIFESTS = {
    "toy_all": """
[model]
type = toy
z = 50
[ladder]
K = 12
[run]
methods = rts, ts, ti_riemann, ti_trap, ti_rb, mbar, mbar_stoch, mixed_mle, sd, rsd, ais, raise
chains = 8
sweeps = 400
seed = 4
""",
    "rbm_small": """
[model]
type = rbm
visible = 12
hidden = 4
seed = 3
scale = 0.5
[ladder]
K = 20
prior = exp
lambda = 2
[run]
methods = rts, ais, ti_rb
chains = 10
sweeps = 200
""",
    "gmm_fixed": """
[model]
type = gmm
dim = 2
stepsize = 0.5
[ladder]
K = 10
[run]
methods = rts, ti_trap
chains = 4
sweeps = 200
""",
}


def check(doc, schema):
    jsonschema.validate(doc, schema)
    k = doc["K"]
    for key in ("betas", "log_r", "log_zhat"):
        if len(doc[key]) != k:
            raise ValueError(f"{key} has {len(doc[key])} entries, expected {k}")
    for est in doc["estimates"]:
        n = len(est["betas"])
        for key in ("log_z", "bias", "variance"):
            if key in est and len(est[key]) != n:
                raise ValueError(f"{est['method']}: {key} length {len(est[key])} != betas length {n}")
        if est["log_z"][0] != 0.0:
            raise ValueError(f"{est['method']}: log_z[0] must be 0")
        if not all(math.isfinite(v) for v in est["log_z"]):
            raise ValueError(f"{est['method']}: non-finite log_z")
        if est["log_z"][-1] != est["log_z_final"]:
            raise ValueError(f"{est['method']}: log_z_final mismatch")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--cli", required=True)
    ap.add_argument("--schema", required=True)
    ap.add_argument("--work", required=True)
    args = ap.parse_args()
    schema = json.loads(pathlib.Path(args.schema).read_text())
    work = pathlib.Path(args.work)
    work.mkdir(parents=True, exist_ok=True)
    failures = 0
    for name, text in MANIFESTS.items():
        cfg = work / f"{name}.ini"
        cfg.write_text(text)
        out = work / name
        proc = subprocess.run([args.cli, "estimate", "--config", str(cfg), "--out", str(out), "--threads", "1"],
                              capture_output=True, text=True)
        if proc.returncode != 0:
            print(f"FAIL {name}: exit {proc.returncode}\n{proc.stderr}")
            failures += 1
            continue
        try:
            check(json.loads((out / "estimates.json").read_text()), schema)
            for f in ("stats.csv", "transitions.csv"):
                if not (out / f).is_file():
                    raise ValueError(f"missing {f}")
            print(f"ok   {name}")
        except (ValueError, jsonschema.ValidationError) as e:
            print(f"FAIL {name}: {e}")
            failures += 1
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
