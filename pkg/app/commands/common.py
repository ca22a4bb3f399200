"""
コマンド共通の実行コンテキスト

CLI の上書き（--out, --seed, --format）を設定に反映し、出力ディレクトリ・トレース・
resolved.ini・run_info.json を用意する。
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from pydantic import ValidationError

from ..core.exceptions import ConfigError
from ..models.run_config import RunConfig, load_config
from ..services.file_service import FileService
from ..services.problem_service import PreparedProblem, prepare_problem
from ..utils.logging import TraceLogger
from ..utils.system_info import collect_run_info

logger = logging.getLogger(__name__)


@dataclass
class RunContext:
    """1 コマンドの実行に必要なもの一式"""

    command: str
    config: RunConfig
    files: FileService
    trace: TraceLogger
    extra: dict = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return self.config.run.seed

    def prepare(self, h: Optional[float] = None) -> PreparedProblem:
        return prepare_problem(self.config, h)


def apply_overrides(config: RunConfig, out: Optional[str] = None, seed: Optional[int] = None,
                    formats: Optional[Sequence[str]] = None) -> RunConfig:
    """コマンドライン引数で設定を上書き（validate_assignment で検証される）"""
    try:
        if out is not None:
            config.output.directory = out
        if seed is not None:
            config.run.seed = seed
        if formats is not None:
            config.output.formats = formats
    except ValidationError as e:
        first = e.errors()[0]
        raise ConfigError(f"invalid command-line value: {first['msg']}", key=".".join(map(str, first["loc"])))
    return config


def open_context(command: str, config_path: str, out: Optional[str] = None, seed: Optional[int] = None,
                 formats: Optional[Sequence[str]] = None) -> RunContext:
    """設定を読み込み、出力先を準備する"""
    config = apply_overrides(load_config(config_path), out, seed, formats)
    files = FileService(Path(config.output.directory))
    trace = TraceLogger(files.path("trace.jsonl") if config.output.trace else None)

    files.write_resolved_config(config)
    files.write_json("run_info.json", collect_run_info(command))
    logger.info(f"{command} を開始: 設定 {config_path}, 出力先 {files.output_path}")
    return RunContext(command=command, config=config, files=files, trace=trace)
