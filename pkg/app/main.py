"""
コマンドライン メインエントリ

    python -m app solve --config configs/ma_manufactured.ini --out out/ma

終了コード: 0 正常, 1 設定エラー, 2 停滞, 3 楕円性喪失, 4 仮定の検証失敗
"""

import argparse
import logging
import sys
import time
from typing import List, Optional

from .commands import COMMANDS, open_context
from .core.config import log_settings_summary
from .core.exceptions import MongeAmpereError
from .utils.helpers import format_duration
from .utils.logging import get_solver_logger, setup_logging

logger = logging.getLogger(__name__)

__version__ = "1.0.0"


def _formats(value: str) -> List[str]:
    return [item.strip() for item in value.split(",") if item.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="monge-ampere",
        description="Monge-Ampère 型方程式 det(D²u - A(x,Du)) = B(x,Du) の Dirichlet 問題ソルバー",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    helps = {
        "solve": "連続法で解き、u と評価量を書き出す",
        "verify": "仮定（正則性・構造条件・劣解など）を判定する",
        "study": "製造解に対する収束率を調べる",
        "transport": "解いて輸送写像の残差を書き出す",
    }
    for name in COMMANDS:
        cmd = sub.add_parser(name, help=helps[name])
        cmd.add_argument("--config", required=True, metavar="PATH", help="INI 形式の設定ファイル")
        cmd.add_argument("--out", metavar="DIR", help="出力ディレクトリ（[output] directory を上書き）")
        cmd.add_argument("--seed", type=int, metavar="N", help="乱数シード（[run] seed を上書き）")
        cmd.add_argument("--format", type=_formats, dest="formats", metavar="csv,vtk",
                         help="格子関数の出力形式（[output] formats を上書き）")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """CLI を実行して終了コードを返す（例外と終了コードの対応はここだけで行う）"""
    args = build_parser().parse_args(argv)

    # ロギング設定
    setup_logging()
    log_settings_summary()
    solver_logger = get_solver_logger()

    started = time.perf_counter()
    try:
        ctx = open_context(args.command, args.config, out=args.out, seed=args.seed, formats=args.formats)
        problem = ctx.config.problem
        solver_logger.log_run_started(args.command, f"{problem.model}@{problem.domain}", problem.h, ctx.seed)
        code = COMMANDS[args.command](ctx)
    except MongeAmpereError as e:
        solver_logger.log_run_failed(args.command, e.message, e.exit_code)
        logger.error(f"{args.command} 失敗 (終了コード {e.exit_code}): {e.message}")
        print(f"error: {e.message}", file=sys.stderr)
        return e.exit_code

    duration = time.perf_counter() - started
    solver_logger.log_run_completed(args.command, ctx.extra.get("status", "ok"), duration)
    logger.info(f"{args.command} 完了 ({format_duration(duration)})")
    return code


if __name__ == "__main__":
    sys.exit(main())
