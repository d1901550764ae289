"""Test 1 for every feature set (and optionally every model family).

    python3 scripts/feature_sweep.py --subjects 4 --duration 300 --epochs 15 --out sweep.csv
"""
import argparse
import csv
import sys
import time

from drivepred.baselines import MlpConfig
from drivepred.evaluation import FAMILIES, ProtocolConfig, run_test_protocol
from drivepred.features import FeatureSet, extract_features, window_sequences
from drivepred.nn import TrainConfig
from drivepred.sim import TrackSpec, generate_track, sample_profile, simulate_session


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--subjects", type=int, default=4)
    ap.add_argument("--duration", type=float, default=300.0)
    ap.add_argument("--epochs", type=int, default=15)
    ap.add_argument("--hidden", type=int, default=32)
    ap.add_argument("--stride", type=int, default=3)
    ap.add_argument("--families", nargs="+", default=["bilstm"], choices=FAMILIES)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="-")
    args = ap.parse_args(argv)

    track = generate_track(TrackSpec(), args.seed)
    sessions = [simulate_session(track, sample_profile(i, args.seed), args.duration) for i in range(1, args.subjects + 1)]
    rows = []
    for family in args.families:
        cfg = ProtocolConfig(family=family, hidden=args.hidden, train=TrainConfig(epochs=args.epochs, seed=args.seed), mlp=MlpConfig(seed=args.seed))
        for set_id in FeatureSet:
            t0 = time.perf_counter()
            subjects = [
                window_sequences(extract_features(s, set_id), s.label, stride=args.stride, subject_id=i + 1)
                for i, s in enumerate(sessions)
            ]
            agg = run_test_protocol(1, subjects, family, set_id, cfg).aggregates
            rows.append({
                "family": family,
                "set": set_id.name,
                "identification_f1": agg[0]["mean"],
                "prediction_f1": agg[max(agg)]["mean"],
                "seconds": round(time.perf_counter() - t0, 1),
            })
            print(rows[-1], file=sys.stderr)
    fh = sys.stdout if args.out == "-" else open(args.out, "w", newline="")
    w = csv.DictWriter(fh, fieldnames=list(rows[0]))
    w.writeheader()
    w.writerows(rows)
    if fh is not sys.stdout:
        fh.close()


if __name__ == "__main__":
    main()
