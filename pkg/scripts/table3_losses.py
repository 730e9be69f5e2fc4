"""Symmetric vs asymmetric cycle loss on asymmetric and fully symmetric data."""

from pathlib import Path

from _common import describe, parser, write_rows

from cycas.eval import compare_losses
from cycas.simulator import make_world
from cycas.trainer import TrainConfig


def main():
    args = parser(__doc__, "runs/losses").parse_args()
    world = make_world(seed=args.world_seed)
    rows = []
    for data in ("asymmetric", "symmetric"):
        wins = 0
        by_kind = {}
        for s in range(args.seeds):
            res = {kind: m for kind, m, _ in compare_losses(world, TrainConfig(seed=s), data)}
            wins += res["asymmetric"].rank1 >= res["symmetric"].rank1
            for kind, m in res.items():
                by_kind.setdefault(kind, []).append(m.rank1)
                rows.append([data, kind, s, m.rank1, m.mAP])
        print(f"{data} data: symmetric {describe(by_kind['symmetric'])}, "
              f"asymmetric {describe(by_kind['asymmetric'])}, asym >= sym in {wins}/{args.seeds}")
    write_rows(Path(args.out) / "losses.csv", ["data", "loss", "seed", "rank1", "mAP"], rows)


if __name__ == "__main__":
    main()
