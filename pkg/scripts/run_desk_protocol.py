"""Run gen -> train -> eval -> report for a config and print per-test F1.

    python3 scripts/run_desk_protocol.py [configs/desk.toml]
"""
import sys
from pathlib import Path

from drivepred.cli import cmd_eval, cmd_gen, cmd_report, cmd_train
from drivepred.config import load_config


def main(path: str) -> None:
    cfg = load_config(path)
    cmd_gen(cfg)
    cmd_train(cfg)
    reports = cmd_eval(cfg)
    cmd_report(cfg)
    last = cfg.features.t_wo - 1
    for t, rep in reports.items():
        agg = rep.aggregates
        print(f"test {t}: t_wo=0 mean {agg[0]['mean']:.4f} (min {agg[0]['min']:.4f}, max {agg[0]['max']:.4f}); "
              f"t_wo={last} mean {agg[last]['mean']:.4f} (min {agg[last]['min']:.4f}, max {agg[last]['max']:.4f})")
    print(f"reports in {Path(cfg.output_dir) / 'reports'}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else str(Path(__file__).resolve().parents[1] / "configs" / "desk.toml"))
