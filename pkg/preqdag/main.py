"""
Command-line entry point.

    preqdag gen sin-chain3 --n 10000 --seed 7 --out runs/chain
    preqdag score --data runs/chain/data.csv --model neural --out runs/chain
    preqdag search --data runs/chain/data.csv --model neural --out runs/chain \
        --ground-truth runs/chain/ground_truth.json
    preqdag trace --data runs/tab/data.csv --node C --out runs/tab
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from preqdag import __version__
from preqdag.config import settings
from preqdag.schemas.neural import MlpCpdConfig
from preqdag.schemas.run import Manifest, RunConfig, ScheduleConfig, SearchConfig, TabularConfig
from preqdag.schemas.search import PosteriorReport, RankingRecord
from preqdag.services.datagen import (
    InterventionPolicy,
    ScmSample,
    apply_interventions,
    gen_cancer_network,
    gen_compound_nonlinear,
    gen_fixed_point_mechanism,
    gen_sin_chain3,
    gen_sin_chain5,
    gen_star5,
    gen_tabular_chain,
    random_weighted_adjacency,
)
from preqdag.services.dataset import Dataset, mask_path_for, read_csv
from preqdag.services.graph import (
    Dag,
    dag_from_json,
    dag_from_text,
    dag_to_json,
    enumerate_dags,
    enumerate_parent_sets,
    format_dag,
    same_mec,
    shd,
)
from preqdag.services.neural import derive_seed
from preqdag.services.scoring import (
    CpdModel,
    CpdScoreTable,
    LazyScorer,
    NeuralCpdModel,
    SplitSchedule,
    TabularCpdModel,
    build_score_table,
    every_index_schedule,
    excess_loss_curves,
    make_schedule,
    write_excess_csv,
)
from preqdag.services.search import (
    MAX_EXHAUSTIVE_NODES,
    MeanScorer,
    PosteriorApproximation,
    RankedStructures,
    hill_climb,
    posterior_metrics,
    rank_structures,
)
from preqdag.services.tabular import permutation_averaged_next_step_loss, write_curve_csv
from preqdag.utils.exceptions import (
    CacheException,
    ConfigException,
    DataException,
    ValidationException,
    handle_exception,
)
from preqdag.utils.io import atomic_write_json, file_hash, read_json

logger = logging.getLogger("preqdag")


def configure_logging(level: Optional[str] = None) -> None:
    logging.basicConfig(
        level=(level or settings.log_level).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


# Manifests


def write_manifest(config: RunConfig, inputs: Sequence[Path], outputs: Sequence[Path]) -> Path:
    manifest = Manifest(
        tool=settings.app_name,
        version=__version__,
        command=config.subcommand,
        config=config.model_dump(mode="json"),
        inputs={str(p): file_hash(p) for p in inputs},
        outputs=[str(p) for p in outputs],
    )
    path = Path(config.out_dir) / f"{config.subcommand}.manifest.json"
    atomic_write_json(path, manifest.model_dump(mode="json"))
    return path


# gen


def _gen_tabular_chain(args) -> ScmSample:
    return gen_tabular_chain(args.cardinality, args.alpha_star, args.n, args.seed)


def _gen_cancer(args) -> ScmSample:
    return gen_cancer_network(args.n, args.seed, args.alpha_star)


def _gen_sin_chain3(args) -> ScmSample:
    return gen_sin_chain3(args.n, args.seed)


def _gen_star5(args) -> ScmSample:
    return gen_star5(args.n, args.seed)


def _gen_sin_chain5(args) -> ScmSample:
    return gen_sin_chain5(args.frequency, args.n, args.seed)


def _gen_fixed_point(args) -> ScmSample:
    structure_seed, sample_seed = np.random.SeedSequence(args.seed).spawn(2)
    weights = random_weighted_adjacency(args.num_nodes, args.p_link, structure_seed)
    return gen_fixed_point_mechanism(args.variant, weights, args.n, sample_seed)


def _gen_compound(args) -> ScmSample:
    return gen_compound_nonlinear(args.index, args.n, args.seed)


GENERATORS: Dict[str, Callable[[argparse.Namespace], ScmSample]] = {
    "tabular-chain": _gen_tabular_chain,
    "cancer": _gen_cancer,
    "sin-chain3": _gen_sin_chain3,
    "star5": _gen_star5,
    "sin-chain5": _gen_sin_chain5,
    "fixed-point": _gen_fixed_point,
    "compound": _gen_compound,
}

# Seed stream of the intervention draws, apart from the generator's own
INTERVENTION_STREAM = 1

GENERATOR_PARAMS = {
    "tabular-chain": ("cardinality", "alpha_star"),
    "cancer": ("alpha_star",),
    "sin-chain3": (),
    "star5": (),
    "sin-chain5": ("frequency",),
    "fixed-point": ("variant", "num_nodes", "p_link"),
    "compound": ("index",),
}


def cmd_gen(args: argparse.Namespace) -> int:
    extra: Dict[str, Any] = {"generator": args.generator, "n": args.n, "seed": args.seed}
    extra.update({name: getattr(args, name) for name in GENERATOR_PARAMS[args.generator]})
    policy = None
    if args.intervene_end is not None:
        try:
            policy = InterventionPolicy(
                start=args.intervene_start, end=args.intervene_end, probability=args.intervene_prob
            )
        except ValidationError as exc:
            raise ConfigException(f"invalid intervention policy: {exc}") from exc

    sample = GENERATORS[args.generator](args)
    if policy is not None:
        intervention_seed = derive_seed(args.seed, INTERVENTION_STREAM)
        sample = apply_interventions(sample, policy, intervention_seed)
        extra["interventions"] = {**policy.model_dump(), "seed": intervention_seed}

    out = Path(args.out)
    data_path = out / "data.csv"
    mask_path = mask_path_for(data_path)
    truth_path = out / "ground_truth.json"
    dataset = sample.dataset
    dataset.write_csv(data_path, mask_path)
    atomic_write_json(truth_path, dag_to_json(sample.dag, dataset.names))
    extra["data_hash"] = file_hash(data_path)

    config = RunConfig(
        subcommand="gen",
        data_path=str(data_path),
        mask_path=str(mask_path),
        cardinalities=list(dataset.cardinalities) if dataset.is_categorical else None,
        seeds=[args.seed],
        out_dir=str(out),
        extra=extra,
    )
    write_manifest(config, [], [data_path, mask_path, truth_path])
    logger.info("Wrote %d rows of %s to %s (%s)", dataset.n, args.generator, data_path, format_dag(sample.dag, dataset.names))
    return 0


# score / search shared plumbing


def _neural_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    names = (
        "hidden_layers",
        "hidden_width",
        "fourier_features",
        "num_bins",
        "batch_size",
        "max_steps",
        "eval_every",
        "patience",
    )
    overrides = {name: getattr(args, name) for name in names if getattr(args, name, None) is not None}
    if getattr(args, "learning_rates", None):
        overrides["learning_rates"] = tuple(args.learning_rates)
    return overrides


def run_config_from_args(args: argparse.Namespace) -> RunConfig:
    try:
        return RunConfig(
            subcommand=args.command,
            data_path=args.data,
            mask_path=args.mask,
            cardinalities=args.cardinalities,
            model=args.model,
            tabular=TabularConfig(alpha=args.alpha if args.alpha is not None else settings.default_alpha),
            neural=MlpCpdConfig(**_neural_overrides(args)),
            schedule=ScheduleConfig(blocks=args.blocks, first_split=args.first_split),
            search=SearchConfig(
                mode=getattr(args, "search", "exhaustive"),
                max_parents=args.max_parents,
                restarts=getattr(args, "restarts", 3),
            ),
            seeds=args.seeds,
            workers=args.workers or settings.workers,
            out_dir=args.out,
            extra={"data_kind": args.data_kind},
        )
    except ValidationError as exc:
        raise ConfigException(f"invalid configuration: {exc}") from exc


def gen_cardinalities(data_path: Path) -> Tuple[Optional[List[int]], Optional[Path]]:
    """Cardinalities recorded by ``gen`` next to this exact data file, if any"""
    manifest_path = data_path.parent / "gen.manifest.json"
    if not manifest_path.exists() or not data_path.exists():
        return None, None
    try:
        manifest = Manifest.model_validate(read_json(manifest_path))
    except (OSError, ValueError) as exc:
        raise DataException(f"cannot read generator manifest '{manifest_path}': {exc}") from exc
    recorded = manifest.config
    if Path(recorded.get("data_path") or "").name != data_path.name:
        return None, None
    if recorded.get("extra", {}).get("data_hash") != file_hash(data_path):
        logger.warning("%s does not describe the current %s; inferring cardinalities", manifest_path, data_path)
        return None, None
    return recorded.get("cardinalities"), manifest_path


def load_dataset(config: RunConfig) -> Tuple[Dataset, List[Path]]:
    data_path = Path(config.data_path)
    mask_path = Path(config.mask_path) if config.mask_path else mask_path_for(data_path)
    if config.mask_path and not mask_path.exists():
        raise ConfigException(f"mask file '{mask_path}' does not exist")
    use_mask = mask_path.exists()
    kind = config.extra.get("data_kind", "auto")
    inputs = [data_path] + ([mask_path] if use_mask else [])

    cardinalities = config.cardinalities
    if cardinalities is not None and kind == "continuous":
        raise ConfigException("--cardinalities only applies to categorical data")
    if cardinalities is None and kind != "continuous":
        cardinalities, manifest_path = gen_cardinalities(data_path)
        if cardinalities is not None:
            logger.info("Using cardinalities %s from %s", cardinalities, manifest_path)
            inputs.append(manifest_path)
    dataset = read_csv(data_path, mask_path if use_mask else None, kind=kind, cardinalities=cardinalities)
    return dataset, inputs


def build_schedule(config: RunConfig, dataset: Dataset) -> SplitSchedule:
    """Tabular runs without an explicit block count score every step exactly"""
    if config.schedule.blocks is None and config.model == "tabular":
        return every_index_schedule(dataset.n)
    blocks = config.schedule.blocks or settings.default_blocks
    return make_schedule(dataset.n, blocks, config.schedule.first_split)


def build_model(config: RunConfig, seed: int) -> CpdModel:
    if config.model == "tabular":
        return TabularCpdModel(config.tabular.alpha)
    return NeuralCpdModel(config.neural, base_seed=seed)


def cache_path_for(config: RunConfig, table: CpdScoreTable, explicit: Optional[str]) -> Path:
    if explicit:
        return Path(explicit)
    return Path(config.out_dir) / settings.cache_dirname / f"scores-{table.config_hash[:16]}.json"


def open_table(
    config: RunConfig,
    dataset: Dataset,
    schedule: SplitSchedule,
    model: CpdModel,
    explicit_cache: Optional[str],
) -> Tuple[CpdScoreTable, Path]:
    """Existing cache for these inputs, or a fresh table"""
    table = CpdScoreTable.for_dataset(dataset, schedule, model)
    path = cache_path_for(config, table, explicit_cache)
    if path.exists():
        cached = CpdScoreTable.load(path)
        cached.check_compatible(table.dataset_hash, table.config_hash)
        logger.info("Resuming from %s with %d entries", path, len(cached))
        return cached, path
    return table, path


def _check_cache_flag(config: RunConfig, explicit_cache: Optional[str]) -> None:
    if explicit_cache and len(config.seeds) > 1:
        raise ConfigException("--cache names a single table; pass one seed with it")


def cmd_score(args: argparse.Namespace) -> int:
    config = run_config_from_args(args)
    _check_cache_flag(config, args.cache)
    dataset, inputs = load_dataset(config)
    schedule = build_schedule(config, dataset)
    parent_sets = enumerate_parent_sets(dataset.num_nodes, config.search.max_parents)
    logger.info(
        "Scoring %d parent sets over %d blocks (first split %d) for seeds %s",
        len(parent_sets), schedule.num_blocks, schedule.first_split, config.seeds,
    )

    outputs = []
    for seed in config.seeds:
        model = build_model(config, seed)
        table, path = open_table(config, dataset, schedule, model, args.cache)
        table = build_score_table(
            dataset,
            parent_sets,
            schedule,
            model,
            table=table,
            workers=config.workers,
            keep_trace=config.model == "tabular",
            checkpoint_path=path,
        )
        table.save(path)
        results = Path(config.out_dir) / f"scores-seed{seed}.json"
        table.save(results)
        outputs.extend([path, results])
    write_manifest(config, inputs, outputs)
    return 0


# search


def load_reference(path: str, names: Sequence[str]) -> Dag:
    target = Path(path)
    try:
        if target.suffix == ".json":
            reference = dag_from_json(read_json(target))
        else:
            reference = dag_from_text(target.read_text(encoding="utf-8"), names)
    except OSError as exc:
        raise ConfigException(f"cannot read ground truth '{path}': {exc}") from exc
    except ValueError as exc:
        raise DataException(f"malformed ground truth '{path}': {exc}") from exc
    if reference.num_nodes != len(names):
        raise ValidationException(
            f"ground truth has {reference.num_nodes} nodes but the dataset has {len(names)}"
        )
    return reference


def ranking_records(
    ranked: RankedStructures,
    posterior: PosteriorApproximation,
    names: Sequence[str],
    reference: Optional[Dag],
) -> List[dict]:
    records = []
    for dag_id, (entry, weight) in enumerate(zip(ranked, posterior.weights)):
        record = RankingRecord(
            dag_id=dag_id,
            dag=entry.dag.edge_list(),
            dag_text=format_dag(entry.dag, names),
            score_mean=entry.score_mean,
            score_std=entry.score_std,
            posterior_weight=float(weight),
            shd_to_reference=shd(entry.dag, reference) if reference is not None else None,
            in_reference_mec=same_mec(entry.dag, reference) if reference is not None else None,
        )
        records.append(record.model_dump(mode="json"))
    return records


def cmd_search(args: argparse.Namespace) -> int:
    config = run_config_from_args(args)
    _check_cache_flag(config, args.cache)
    dataset, inputs = load_dataset(config)
    schedule = build_schedule(config, dataset)
    reference = load_reference(args.ground_truth, dataset.names) if args.ground_truth else None
    if args.ground_truth:
        inputs.append(Path(args.ground_truth))
    max_parents = config.search.max_parents

    opened = []
    for seed in config.seeds:
        model = build_model(config, seed)
        table, path = open_table(config, dataset, schedule, model, args.cache)
        opened.append((model, table, path))

    out = Path(config.out_dir)
    outputs = []
    if config.search.mode == "exhaustive":
        if dataset.num_nodes > MAX_EXHAUSTIVE_NODES:
            raise ConfigException(
                f"exhaustive search supports at most {MAX_EXHAUSTIVE_NODES} nodes; use --search hillclimb"
            )
        for _, table, path in opened:
            if not len(table):
                raise CacheException(f"no score cache at '{path}'; run the score command first")
        dags = [
            g for g in enumerate_dags(dataset.num_nodes)
            if max_parents is None or all(g.in_degree(v) <= max_parents for v in range(g.num_nodes))
        ]
        ranked = rank_structures([table for _, table, _ in opened], dags)
        posterior = PosteriorApproximation.from_ranking(ranked)
        curve_table = opened[0][1]
    else:
        scorers = [
            LazyScorer(dataset, schedule, model, table, keep_trace=config.model == "tabular")
            for model, table, _ in opened
        ]
        _, visited = hill_climb(
            MeanScorer(scorers),
            dataset.num_nodes,
            max_parents=max_parents,
            restarts=config.search.restarts,
            rng_seed=config.seeds[0],
        )
        for scorer, (_, _, path) in zip(scorers, opened):
            scorer.table.save(path)
            outputs.append(path)
        ranked = rank_structures([s.table for s in scorers], visited)
        curve_table = scorers[0].table
        posterior = PosteriorApproximation.from_ranking(ranked)
        pwa_shd, expected_links = (None, None)
        if reference is not None:
            pwa_shd, expected_links = posterior_metrics(posterior, reference)
        else:
            expected_links = float(posterior.weights @ np.asarray([g.num_edges for g in posterior.support]))
        report = PosteriorReport(support_size=len(visited), pwa_shd=pwa_shd, expected_links=expected_links)
        posterior_path = out / "posterior.json"
        atomic_write_json(posterior_path, report.model_dump(mode="json"))
        outputs.append(posterior_path)
        logger.info("Posterior over %d DAGs: PWA SHD %s, expected links %.3f", len(visited), pwa_shd, expected_links)

    ranking_path = out / "ranking.json"
    atomic_write_json(ranking_path, ranking_records(ranked, posterior, dataset.names, reference))
    outputs.append(ranking_path)

    top = ranked.dags()[: args.curve_top or settings.curve_top]
    curves = excess_loss_curves(curve_table, top, top[0])
    curve_path = out / "excess.csv"
    write_excess_csv(curve_path, curves, list(range(len(top))))
    outputs.append(curve_path)

    best = ranked.best
    logger.info(
        "Best DAG: %s (log-score %.3f +- %.3f)", format_dag(best.dag, dataset.names), best.score_mean, best.score_std
    )
    write_manifest(config, inputs, outputs)
    return 0


# trace


def _resolve_node(token: str, names: Sequence[str]) -> int:
    if token in names:
        return list(names).index(token)
    if token.isdigit() and int(token) < len(names):
        return int(token)
    raise ConfigException(f"unknown node '{token}'")


def cmd_trace(args: argparse.Namespace) -> int:
    try:
        config = RunConfig(
            subcommand="trace",
            data_path=args.data,
            mask_path=args.mask,
            cardinalities=args.cardinalities,
            tabular=TabularConfig(alpha=args.alpha if args.alpha is not None else settings.default_alpha),
            seeds=[args.seed],
            out_dir=args.out,
            extra={"node": args.node, "permutations": args.permutations, "data_kind": "categorical"},
        )
    except ValidationError as exc:
        raise ConfigException(f"invalid configuration: {exc}") from exc
    if args.permutations < 1:
        raise ConfigException("--permutations must be at least 1")
    dataset, inputs = load_dataset(config)
    node = _resolve_node(args.node, dataset.names)
    curves = {}
    for ps in enumerate_parent_sets(dataset.num_nodes):
        if ps.child != node:
            continue
        label = ",".join(dataset.names[p] for p in ps.parents) or "-"
        curves[label] = permutation_averaged_next_step_loss(
            dataset, node, ps.parents, config.tabular.alpha, args.permutations, args.seed
        )
        logger.info("%s | %s: final mean next-step loss %.4f", dataset.names[node], label, curves[label].mean[-1])
    path = Path(config.out_dir) / f"trace-{dataset.names[node]}.csv"
    write_curve_csv(path, curves)
    write_manifest(config, inputs, [path])
    return 0


# Parser


def _add_data_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", required=True, help="dataset CSV")
    parser.add_argument("--mask", default=None, help="intervention mask CSV (default: <data>.mask.csv if present)")
    parser.add_argument("--data-kind", choices=("auto", "categorical", "continuous"), default="auto")
    parser.add_argument(
        "--cardinalities",
        type=int,
        nargs="+",
        default=None,
        help="categories per column (default: from gen.manifest.json next to the data, else max + 1)",
    )
    parser.add_argument("--out", default=".", help="output directory")


def _add_model_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--model", choices=("tabular", "neural"), default="tabular")
    parser.add_argument("--alpha", type=float, default=None, help="Dirichlet smoothing of tabular CPDs")
    parser.add_argument("--blocks", type=int, default=None, help="number of split blocks K")
    parser.add_argument("--first-split", type=int, default=None, help="first split point s1")
    parser.add_argument("--max-parents", type=int, default=None)
    parser.add_argument("--seeds", type=int, nargs="+", default=[0])
    parser.add_argument("--workers", type=int, default=None, help="worker processes (default: PREQDAG_WORKERS or cores)")
    parser.add_argument("--cache", default=None, help="explicit score cache file")
    neural = parser.add_argument_group("neural model")
    neural.add_argument("--hidden-layers", type=int, default=None)
    neural.add_argument("--hidden-width", type=int, default=None)
    neural.add_argument("--fourier-features", type=int, default=None)
    neural.add_argument("--num-bins", type=int, default=None)
    neural.add_argument("--batch-size", type=int, default=None)
    neural.add_argument("--max-steps", type=int, default=None)
    neural.add_argument("--eval-every", type=int, default=None)
    neural.add_argument("--patience", type=int, default=None)
    neural.add_argument("--learning-rates", type=float, nargs="+", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="preqdag", description="Prequential MDL structure learning")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic dataset")
    gen.add_argument("generator", choices=sorted(GENERATORS))
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", default=".")
    gen.add_argument("--cardinality", type=int, default=5)
    gen.add_argument("--alpha-star", type=float, default=1.0)
    gen.add_argument("--frequency", type=int, choices=(1, 4), default=1)
    gen.add_argument("--variant", choices=("a", "b"), default="a")
    gen.add_argument("--num-nodes", type=int, default=5)
    gen.add_argument("--p-link", type=float, default=settings.gnp_link_probability)
    gen.add_argument("--index", type=int, default=None, help="catalog row 1..20; omit for a random system")
    gen.add_argument("--intervene-start", type=int, default=0)
    gen.add_argument("--intervene-end", type=int, default=None)
    gen.add_argument("--intervene-prob", type=float, default=0.5)
    gen.set_defaults(handler=cmd_gen)

    score = sub.add_parser("score", help="fill the CPD score cache")
    _add_data_args(score)
    _add_model_args(score)
    score.set_defaults(handler=cmd_score)

    search = sub.add_parser("search", help="rank structures from the score cache")
    _add_data_args(search)
    _add_model_args(search)
    search.add_argument("--search", choices=("exhaustive", "hillclimb"), default="exhaustive")
    search.add_argument("--restarts", type=int, default=3)
    search.add_argument("--ground-truth", default=None, help="reference DAG (JSON or 'child <- parents' text)")
    search.add_argument("--curve-top", type=int, default=None, help="DAGs written to the excess-loss CSV")
    search.set_defaults(handler=cmd_search)

    trace = sub.add_parser("trace", help="permutation-averaged next-step loss curves of one node")
    _add_data_args(trace)
    trace.add_argument("--node", required=True)
    trace.add_argument("--alpha", type=float, default=None)
    trace.add_argument("--permutations", type=int, default=1000)
    trace.add_argument("--seed", type=int, default=0)
    trace.set_defaults(handler=cmd_trace)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.handler(args)
    except Exception as exc:  # noqa: BLE001
        return handle_exception(exc)


if __name__ == "__main__":
    sys.exit(main())
