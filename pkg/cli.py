# cli.py
"""
命令列介面

    python cli.py props --scenario scene.json --out results/
    python cli.py solve --scenario scene.json --out results/ --method fixed-point --tol 1e-10
    python cli.py check --scenario scene.json

結束代碼: 0 成功、1 計算失敗、2 輸入不合法
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from calculators.acoustic_solver import SolveMethod
from calculators.errors import ScatteringError, ScenarioError
from calculators.scenario import MODES, load_scenario, results_json, run, write_results

logger = logging.getLogger("scattering")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INVALID = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scattering", description="小物體多體散射計算")
    subparsers = parser.add_subparsers(dest="command", required=True)
    helps = {
        "props": "只計算形狀性質 (電容序列、極化張量)",
        "solve": "完整計算流程",
        "check": "解析情境檔並輸出區間診斷",
    }
    for command in MODES:
        sub = subparsers.add_parser(command, help=helps[command])
        sub.add_argument("--scenario", required=True, type=Path, help="情境檔 (JSON)")
        sub.add_argument("--out", type=Path, default=None, help="結果輸出目錄；省略時印到標準輸出")
        sub.add_argument("--method", choices=[m.value for m in SolveMethod], default=None,
                         help="覆寫 solver.method")
        sub.add_argument("--tol", type=float, default=None, help="覆寫 solver.tol")
        sub.add_argument("--threads", type=int, default=1, help="形狀性質計算的執行緒數")
        sub.add_argument("--log-level", default="WARNING",
                         choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="日誌等級")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    try:
        scenario = load_scenario(args.scenario)
        overrides = {}
        if args.method is not None:
            overrides["method"] = SolveMethod(args.method)
        if args.tol is not None:
            if args.tol <= 0:
                raise ScenarioError("--tol must be positive", module="scene_io_cli")
            overrides["tol"] = args.tol
        if overrides:
            scenario = scenario.model_copy(update={"solver": scenario.solver.model_copy(update=overrides)})
        if args.threads < 1:
            raise ScenarioError("--threads must be at least 1", module="scene_io_cli")
    except ScenarioError as exc:
        print(f"❌ {exc}", file=sys.stderr)
        return EXIT_INVALID

    try:
        bundle = run(scenario, mode=args.command, threads=args.threads, base_dir=args.scenario.parent)
        if args.out is None:
            sys.stdout.write(results_json(bundle))
        else:
            for path in write_results(bundle, args.out):
                logger.info("wrote %s", path)
    except ScatteringError as exc:
        print(f"❌ {exc}", file=sys.stderr)
        print(json.dumps(exc.to_dict(), ensure_ascii=False), file=sys.stderr)
        return EXIT_INVALID if isinstance(exc, ScenarioError) else EXIT_FAILURE

    for warning in bundle["diagnostics"]["warnings"]:
        logger.warning("%s: %s", warning["code"], warning["message"])
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
