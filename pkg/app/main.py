import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import List, Optional

from app.database.config_loader import get_run_config, write_resolved_config
from app.database.dataset_loader import load_interactions
from app.database.split_store import load_split, save_split
from app.models.params import ModelParams
from app.schemas.config import RunConfig
from app.schemas.metrics import MetricsReport
from app.schemas.split import SplitManifest
from app.services.manage_data.interactions import Split
from app.services.manage_data.splitter import leave_one_out_split
from app.services.manage_evaluation.posterior_export import export_posteriors
from app.services.manage_evaluation.ranking import evaluate
from app.services.manage_evaluation.robustness import robustness_run
from app.services.manage_models.model_manager import model_manager
from app.services.manage_training.trainer import fit
from app.utils.common import build_error_response, log_execution_time, setup_logging, write_json
from app.utils.exceptions import ConfigError, DataError, DaveError

logger = logging.getLogger(__name__)


def cmd_prepare(config: RunConfig) -> Path:
    """Load the dataset, split it and persist the split with its manifest."""
    matrix = load_interactions(
        config.dataset_path,
        format=config.dataset_format,
        min_user_interactions=config.min_user_interactions,
        min_item_interactions=config.min_item_interactions,
    )
    split = leave_one_out_split(
        matrix,
        policy=config.split_policy,
        seed=config.seed,
        num_negatives=config.num_eval_negatives,
        drop_short_users=config.drop_short_users,
    )
    manifest = SplitManifest(
        dataset=config.resolved_dataset_name,
        seed=config.seed,
        policy=config.split_policy,
        min_user_interactions=config.min_user_interactions,
        min_item_interactions=config.min_item_interactions,
        num_users=matrix.num_users,
        num_items=matrix.num_items,
        num_negatives=config.num_eval_negatives,
        num_train=split.train.nnz,
        dropped_users=list(split.dropped_users),
        source=str(config.dataset_path),
    )
    return save_split(split, config.resolved_split_dir, manifest)


def _load_split(config: RunConfig) -> Split:
    split, _ = load_split(config.resolved_split_dir)
    return split


def _load_model(config: RunConfig, split: Split, checkpoint: Optional[str]) -> ModelParams:
    path = Path(checkpoint) if checkpoint else config.resolved_checkpoint
    params = model_manager.load_checkpoint(path)
    if (params.config.num_users, params.config.num_items) != (split.num_users, split.num_items):
        raise DataError(
            f"checkpoint {path} was trained on {params.config.num_users}x{params.config.num_items}, "
            f"split has {split.num_users}x{split.num_items}"
        )
    return params


def cmd_train(config: RunConfig) -> Path:
    """Run the alternating training loop; leaves the best checkpoint and train_log.jsonl in the output directory."""
    split = _load_split(config)
    result = fit(config.train_config(), split, output_dir=config.output_dir, checkpoint_path=config.resolved_checkpoint)
    logger.info(f"[Train] Best validation NDCG@{config.validation_k}={result.best_ndcg:.4f} at epoch {result.best_epoch}")
    return config.resolved_checkpoint


def cmd_evaluate(config: RunConfig, checkpoint: Optional[str] = None) -> dict:
    split = _load_split(config)
    params = _load_model(config, split, checkpoint)
    metrics = evaluate(params, split, max_workers=config.prefetch_workers)
    report = MetricsReport.from_metrics(metrics, config.resolved_dataset_name, params.config.variant, config.seed)
    payload = report.model_dump(exclude_none=True)
    print(write_json(Path(config.output_dir) / "metrics.json", payload))
    return payload


def cmd_robustness(config: RunConfig, checkpoint: Optional[str] = None) -> list:
    split = _load_split(config)
    params = _load_model(config, split, checkpoint)
    results = robustness_run(params, split, levels=config.noise_levels, seed=config.seed,
                             mode=config.robustness_mode, max_workers=config.prefetch_workers)
    payload = [
        MetricsReport.from_metrics(result.metrics, config.resolved_dataset_name, params.config.variant, config.seed,
                                   noise_level=result.noise_level, noise_mode=config.robustness_mode
                                   ).model_dump(exclude_none=True)
        for result in results
    ]
    print(write_json(Path(config.output_dir) / "robustness.json", payload))
    return payload


def cmd_export(config: RunConfig, checkpoint: Optional[str] = None, side: Optional[str] = None) -> Path:
    side = side or config.export_side
    split = _load_split(config)
    params = _load_model(config, split, checkpoint)
    return export_posteriors(params, split, side, Path(config.output_dir) / f"posteriors_{side}.csv")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value run configuration file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--preset", help="dataset preset (ml-100k, ml-1m, yelp, digital-music, pinterest)")
    common.add_argument("--seed", type=int)
    common.add_argument("--variant", choices=["dave", "dave-adv", "dave-aae"])
    common.add_argument("--out", help="output directory")
    common.add_argument("--log-level", help="logging level (default $DAVE_LOG_LEVEL or INFO)")

    parser = argparse.ArgumentParser(prog="dave", description="Dual adversarial variational embedding recommender")
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("prepare", parents=[common], help="load a dataset and write the leave-one-out split")
    commands.add_parser("train", parents=[common], help="train on a prepared split")
    for name, help_text in (("evaluate", "HR/NDCG on the test pairs"),
                            ("robustness", "metrics under interaction-vector noise"),
                            ("export", "write posterior means and deviations as CSV")):
        command = commands.add_parser(name, parents=[common], help=help_text)
        command.add_argument("--checkpoint", help="checkpoint file (default: <out>/checkpoint.dave)")
        if name == "robustness":
            command.add_argument("--levels", help="comma-separated noise levels")
            command.add_argument("--mode", choices=["fixed", "per-entity"])
        if name == "export":
            command.add_argument("--side", choices=["user", "item"])
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got '{item}'")
        overrides[key] = value
    flags = {
        "preset": args.preset,
        "seed": args.seed,
        "variant": args.variant,
        "output_dir": args.out,
        "checkpoint": getattr(args, "checkpoint", None),
        "noise_levels": getattr(args, "levels", None),
        "robustness_mode": getattr(args, "mode", None),
        "export_side": getattr(args, "side", None),
    }
    overrides.update({key: value for key, value in flags.items() if value is not None})
    return get_run_config(args.config, overrides)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    start_time = time.time()
    try:
        config = resolve_config(args)
        write_resolved_config(config, config.output_dir, args.command)
        if args.command == "prepare":
            cmd_prepare(config)
        elif args.command == "train":
            cmd_train(config)
        elif args.command == "evaluate":
            cmd_evaluate(config)
        elif args.command == "robustness":
            cmd_robustness(config)
        elif args.command == "export":
            cmd_export(config)
    except DaveError as e:
        logger.error(f"[{args.command}] {e.message}")
        print(json.dumps(build_error_response(e.code, e.message, e.exit_code)), file=sys.stderr)
        return e.exit_code
    finally:
        model_manager.cleanup_models()
    log_execution_time(start_time, f"[{args.command}]")
    return 0


if __name__ == "__main__":
    sys.exit(main())
