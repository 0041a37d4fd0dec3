#!/usr/bin/env python3
"""Decode success rate of the vibration codec as the noise level grows.

Prints one row per noise level: success rate (all codes pooled), the worst
single code, and the share of frames decoded without slot tolerance.
"""

import argparse
import json

import numpy as np

from labsync.vibration import Confidence, DecodeError, decode, encode, synthesize


def sweep(rate, ratios, trials, amplitude=3.0):
    rows = []
    for ratio in ratios:
        per_code, exact = [], 0
        for code in range(16):
            ok = 0
            for trial in range(trials):
                s = synthesize(
                    encode(code), rate=rate, amplitude=amplitude,
                    noise_sigma=ratio * amplitude, seed=1000 * code + trial, lead=2.0,
                )
                try:
                    f = decode(s)
                except DecodeError:
                    continue
                ok += f.code == code
                exact += f.code == code and f.confidence == Confidence.EXACT
            per_code.append(ok / trials)
        rows.append(
            {
                "rate": rate,
                "noise_ratio": ratio,
                "success": float(np.mean(per_code)),
                "worst_code": float(np.min(per_code)),
                "exact_share": exact / (16 * trials),
            }
        )
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--rates", type=float, nargs="+", default=[50.0, 100.0])
    ap.add_argument("--ratios", type=float, nargs="+", default=[0.1, 0.2, 0.25, 0.3, 0.4, 0.5])
    ap.add_argument("--trials", type=int, default=200, help="trials per code and noise level")
    ap.add_argument("--json", help="also write the rows here")
    args = ap.parse_args()

    rows = [r for rate in args.rates for r in sweep(rate, args.ratios, args.trials)]
    print(f"{'rate':>6} {'sigma/amp':>9} {'success':>8} {'worst':>7} {'exact':>7}")
    for r in rows:
        print(
            f"{r['rate']:>6.0f} {r['noise_ratio']:>9.2f} {r['success']:>8.3f} "
            f"{r['worst_code']:>7.3f} {r['exact_share']:>7.3f}"
        )
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
