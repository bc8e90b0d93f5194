"""Regenerate the negative-control fixture.

Runs a real forward/reverse pipeline with calibrated per-step error 0.5,
then rewrites the stored trajectory to claim ten-fold smaller xi norms than
the run actually had.  Certifying that doctored record must fail: the EVI
right sides shrink with the claimed eps while the measured iterates keep
their true drift.
"""

import json
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from jkolab import cli  # noqa: E402

FIXTURE_DIR = os.path.join(os.path.dirname(__file__), "..", "fixtures",
                           "negative_control")

CONFIG = """\
objective.variant = kl
objective.lambda_mat = 1
objective.center = 0
family = gaussian
p0.mean = 2
p0.cov = 4
gamma = 1.0
eps = 0.5
eps_inv = 0
n = 5
seed = 0
mode = mean_shift
"""


def main() -> int:
    os.makedirs(FIXTURE_DIR, exist_ok=True)
    cfg_path = os.path.join(FIXTURE_DIR, "config.txt")
    with open(cfg_path, "w") as f:
        f.write(CONFIG)
    cfg = cli.parse_config(CONFIG)
    cli.do_forward(cfg, FIXTURE_DIR)
    cli.do_reverse(cfg, FIXTURE_DIR)
    traj_path = os.path.join(FIXTURE_DIR, f"{cfg.run_id()}_trajectory.json")
    with open(traj_path) as f:
        data = json.load(f)
    data["xi_norms"] = [x / 10 for x in data["xi_norms"]]
    with open(traj_path, "w") as f:
        json.dump(data, f, indent=1)
    # drop artifacts the fixture does not need
    for suffix in ("forward.csv", "reverse.csv", "report.csv"):
        p = os.path.join(FIXTURE_DIR, f"{cfg.run_id()}_{suffix}")
        if os.path.exists(p):
            os.remove(p)
    print(f"negative-control fixture written to {FIXTURE_DIR} "
          f"(run id {cfg.run_id()})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
