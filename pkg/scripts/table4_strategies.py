"""Training strategies: stage I only, inter pairs only, and the two-stage schedule."""

from dataclasses import replace
from pathlib import Path

from _common import describe, parser, write_rows

from cycas.eval import train_and_evaluate
from cycas.simulator import make_world
from cycas.trainer import TrainConfig

STRATEGIES = {
    "stage1_only": dict(stage2_iters=0),
    "inter_only": dict(stage1_iters=0, stage2_iters=1500, stage2_mode="inter"),
    "two_stage": dict(),
}


def main():
    args = parser(__doc__, "runs/strategies").parse_args()
    world = make_world(seed=args.world_seed)
    rows = []
    for name, overrides in STRATEGIES.items():
        vals = []
        for s in range(args.seeds):
            _, _, m = train_and_evaluate(world, replace(TrainConfig(seed=s), **overrides), world.D_obs)
            vals.append(m.rank1)
            rows.append([name, s, m.rank1, m.mAP])
        print(f"{name:12s} rank1 {describe(vals)}")
    write_rows(Path(args.out) / "strategies.csv", ["strategy", "seed", "rank1", "mAP"], rows)


if __name__ == "__main__":
    main()
