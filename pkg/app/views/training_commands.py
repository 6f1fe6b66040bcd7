"""
Subcomandos train, refine, sweep-patch y ablate
"""
import argparse
from typing import List

from app.core.logger import get_logger
from app.models.training import EntropyMode, ExperimentPlan, RunRecord, Variant
from app.services.experiment_service import PATCH_FRACTIONS, get_experiment_service
from app.views.common import add_config_arguments, add_plan_arguments, emit_table, load_experiment

logger = get_logger("training_commands")

EXIT_DIVERGED = 3


def _exit_code(records: List[RunRecord]) -> int:
    diverged = [r.run_id for r in records if r.diverged]
    if diverged:
        logger.error("Diverged runs", run_ids=diverged)
        return EXIT_DIVERGED
    return 0


def train(args: argparse.Namespace) -> int:
    """Entrena n_seeds corridas de la configuración e imprime sus run ids"""
    config = load_experiment(args.config, args.overrides)
    if args.seed is not None:
        config = config.with_overrides(seed=args.seed)
    service = get_experiment_service()
    plan = ExperimentPlan(configs=[config], n_seeds=args.n_seeds or config.n_seeds,
                          output_root=str(service.runs.runs_dir), refinement=config.refine)
    records = service.run_plan(plan, jobs=args.jobs)
    for record in records:
        accuracy = record.summary.get("final_target_accuracy")
        print(f"{record.run_id}\t{record.status.value}\t{'' if accuracy is None else f'{accuracy:.4f}'}")
    return _exit_code(records)


def refine(args: argparse.Namespace) -> int:
    """Refina una corrida guardada (nueva corrida <run_id>_refined)"""
    record = get_experiment_service().refine_run(
        args.run_id,
        refine_epochs=args.epochs,
        refine_lambda=args.entropy_weight,
        refine_threshold=args.threshold,
        entropy_mode=args.entropy_mode,
    )
    print(record.run_id)
    return _exit_code([record])


def sweep_patch(args: argparse.Namespace) -> int:
    config = load_experiment(args.config, args.overrides)
    fractions = [float(f) for f in args.fractions.split(",")] if args.fractions else PATCH_FRACTIONS
    variants = [Variant(v) for v in args.variants.split(",")] if args.variants else None
    frame = get_experiment_service().sweep_patch(config, fractions, variants,
                                                 n_seeds=args.n_seeds, jobs=args.jobs)
    emit_table(frame, args.out)
    return 0


def ablate(args: argparse.Namespace) -> int:
    config = load_experiment(args.config, args.overrides)
    frame = get_experiment_service().ablate(config, mse_sweep=args.mse_sweep,
                                            n_seeds=args.n_seeds, jobs=args.jobs)
    emit_table(frame, args.out)
    return 0


def register(subparsers) -> None:
    parser = subparsers.add_parser("train", help="entrena una configuración con varias semillas")
    add_config_arguments(parser)
    add_plan_arguments(parser)
    parser.add_argument("--seed", type=int, default=None, help="semilla inicial")
    parser.set_defaults(handler=train)

    parser = subparsers.add_parser("refine", help="refinamiento por pseudo-etiquetas de una corrida")
    parser.add_argument("run_id")
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument("--lambda", dest="entropy_weight", type=float, default=None,
                        help="peso del término de entropía")
    parser.add_argument("--threshold", type=float, default=None, help="umbral de confianza τ")
    parser.add_argument("--entropy-mode", choices=[m.value for m in EntropyMode], default=None)
    parser.set_defaults(handler=refine)

    parser = subparsers.add_parser("sweep-patch", help="barrido de la fracción de parche faltante")
    add_config_arguments(parser)
    add_plan_arguments(parser)
    parser.add_argument("--fractions", default=None, help="fracciones separadas por coma")
    parser.add_argument("--variants", default=None, help="variantes separadas por coma")
    parser.add_argument("--out", default=None, help="CSV de salida")
    parser.set_defaults(handler=sweep_patch)

    parser = subparsers.add_parser("ablate", help="ablación de los términos de imputación")
    add_config_arguments(parser)
    add_plan_arguments(parser)
    parser.add_argument("--mse-sweep", action="store_true", help="barrido de λ_MSE")
    parser.add_argument("--out", default=None, help="CSV de salida")
    parser.set_defaults(handler=ablate)
