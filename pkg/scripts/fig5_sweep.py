"""Rank-1 against the mean symmetry of intra (alpha) and inter (beta) pairs."""

from pathlib import Path

from _common import parser, write_rows

from cycas.eval import alpha_endpoint_gap, monotone_with_tolerance, sweep_symmetry
from cycas.simulator import make_world
from cycas.trainer import TrainConfig

SWEEPS = (("alpha", [0.3, 0.6, 1.0], 0.6), ("beta", [0.2, 0.6, 1.0], 0.9))


def main():
    args = parser(__doc__, "runs/symmetry").parse_args()
    world = make_world(seed=args.world_seed)
    rows = []
    for axis, grid, fixed in SWEEPS:
        res = sweep_symmetry(world, TrainConfig(), axis, grid, fixed, args.seeds)
        for t, (m, se) in sorted(res.summary().items()):
            print(f"{axis} {t:.1f} (other {fixed}): rank1 {m:.3f} +/- {se:.3f}")
            rows.append([axis, t, fixed, m, se])
        if axis == "alpha":
            print(f"alpha endpoint gap {alpha_endpoint_gap(res):.3f}")
        else:
            print(f"beta monotone within one inversion: {monotone_with_tolerance(res)}")
    write_rows(Path(args.out) / "symmetry.csv",
               ["axis", "tau_mean", "fixed_other", "mean_rank1", "stderr_rank1"], rows)


if __name__ == "__main__":
    main()
