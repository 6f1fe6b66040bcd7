"""
Subcomandos diagnose, report y export-embeddings
"""
import argparse
import json
from pathlib import Path

from app.core.logger import get_logger
from app.services.experiment_service import get_experiment_service
from app.views.common import emit_table

logger = get_logger("analysis_commands")


def diagnose(args: argparse.Namespace) -> int:
    report = get_experiment_service().diagnose(args.run_id, which=args.checkpoint)
    print(json.dumps(report.model_dump(mode="json"), indent=2, sort_keys=True, ensure_ascii=False))
    return 0


def report(args: argparse.Namespace) -> int:
    """
    Métricas largas, resumen agregado (media ± desviación poblacional, mejor
    marcado), una sub-tabla por métrica y datos de las curvas de parche y ablación
    """
    service = get_experiment_service()
    result = service.report(args.run_ids or None)
    out_dir = Path(args.out_dir or service.runs.runs_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result.metrics.to_csv(out_dir / "report_metrics.csv", index=False, encoding="utf-8")
    for name, table in result.per_metric.items():
        table.to_csv(out_dir / f"report_{name}.csv", index=False, encoding="utf-8")
    result.patch_sweep_plot.to_csv(out_dir / "patch_sweep_plot.csv", index=False, encoding="utf-8")
    result.ablation_plot.to_csv(out_dir / "ablation_plot.csv", index=False, encoding="utf-8")
    emit_table(result.summary, str(out_dir / "report_summary.csv"))

    if args.select:
        best, risks = service.select_model(args.run_ids or service.runs.list_runs())
        for run_id, values in sorted(risks.items()):
            print(f"{run_id}\tdev_risk={values['dev_risk']:.6f}\tsource_ce={values['source_ce']:.6f}")
        print(f"selected\t{best}")
    return 0


def export_embeddings(args: argparse.Namespace) -> int:
    frame = get_experiment_service().export_embeddings(args.run_id, args.out, which=args.checkpoint)
    logger.info("Embeddings written", run_id=args.run_id, rows=len(frame))
    return 0


def register(subparsers) -> None:
    parser = subparsers.add_parser("diagnose", help="proxies de los términos de las cotas")
    parser.add_argument("run_id")
    parser.add_argument("--checkpoint", choices=["best", "final"], default="best")
    parser.set_defaults(handler=diagnose)

    parser = subparsers.add_parser("report", help="reporte agregado de corridas")
    parser.add_argument("run_ids", nargs="*")
    parser.add_argument("--out-dir", default=None)
    parser.add_argument("--select", action="store_true",
                        help="selección no supervisada (validación ponderada) entre las corridas")
    parser.set_defaults(handler=report)

    parser = subparsers.add_parser("export-embeddings", help="proyección 2D de las latentes")
    parser.add_argument("run_id")
    parser.add_argument("--out", default=None)
    parser.add_argument("--checkpoint", choices=["best", "final"], default="best")
    parser.set_defaults(handler=export_embeddings)
