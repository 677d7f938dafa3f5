"""
Long-running structure recovery on one compound-function catalog system.

Generates the system, scores every parent set with the neural CPD and runs
an exhaustive search over all 5-node DAGs. Not part of the test suite:
with default network sizes it trains 80 CPDs x 6 blocks x 2 learning rates.

Usage:
    python -m scripts.run_compound_recovery --index 1 --n 20000 --workers 8
"""
import argparse
import logging
import sys
from pathlib import Path

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from preqdag.config import settings
from preqdag.main import configure_logging
from preqdag.schemas.neural import MlpCpdConfig
from preqdag.services.datagen import gen_compound_nonlinear
from preqdag.services.graph import enumerate_parent_sets, format_dag, same_mec, shd
from preqdag.services.scoring import NeuralCpdModel, build_score_table, make_schedule
from preqdag.services.search import exhaustive_search
from preqdag.utils.exceptions import handle_exception

logger = logging.getLogger("preqdag.scripts.compound")


def run(args: argparse.Namespace) -> int:
    sample = gen_compound_nonlinear(args.index, args.n, args.seed)
    dataset = sample.dataset
    logger.info("Ground truth: %s", format_dag(sample.dag, dataset.names))

    schedule = make_schedule(dataset.n, args.blocks)
    model = NeuralCpdModel(MlpCpdConfig(max_steps=args.max_steps), base_seed=args.seed)
    out = Path(args.out)
    table = build_score_table(
        dataset,
        enumerate_parent_sets(dataset.num_nodes),
        schedule,
        model,
        workers=args.workers,
        checkpoint_path=out / f"compound-{args.index}-seed{args.seed}.json",
    )

    ranked = exhaustive_search(table, dataset.num_nodes)
    truth_rank = ranked.rank_of(sample.dag)
    for rank, entry in enumerate(ranked.entries[:10]):
        print(
            f"{rank:3d}  {entry.score_mean:12.3f}  shd={shd(entry.dag, sample.dag)}  "
            f"mec={'yes' if same_mec(entry.dag, sample.dag) else 'no '}  {format_dag(entry.dag, dataset.names)}"
        )
    print(f"ground truth ranked {truth_rank} of {len(ranked)}")
    return 0


def main() -> int:
    parser = argparse.ArgumentParser(description="Neural structure recovery on a catalog system.")
    parser.add_argument("--index", type=int, default=1, help="catalog row 1..20")
    parser.add_argument("--n", type=int, default=20_000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--blocks", type=int, default=settings.default_blocks)
    parser.add_argument("--max-steps", type=int, default=25_000)
    parser.add_argument("--workers", type=int, default=settings.workers)
    parser.add_argument("--out", default="runs")
    args = parser.parse_args()
    configure_logging()
    try:
        return run(args)
    except Exception as exc:  # noqa: BLE001
        return handle_exception(exc)


if __name__ == "__main__":
    sys.exit(main())
