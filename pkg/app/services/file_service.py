import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from ..core.config import settings
from ..models.grid import INTERIOR, ScalarField
from ..models.reports import ConditionReport, EstimateReport, RateTable
from ..models.run_config import RunConfig
from ..utils.helpers import format_number, sanitize_filename

logger = logging.getLogger(__name__)

CONDITION_COLUMNS = ("name", "samples", "min_margin", "tolerance", "witness", "pass")
RATE_COLUMNS = ("h", "nodes", "error", "order", "t_steps", "newton_iterations", "C_est", "pogorelov_max",
                "transport_residual")


class FileService:
    """出力ファイル管理サービス（1 コマンドにつき 1 つの書き手）"""

    def __init__(self, output_path: Optional[Union[str, Path]] = None):
        self.output_path = Path(output_path) if output_path is not None else settings.get_output_path()
        self.output_path.mkdir(parents=True, exist_ok=True)

    def path(self, filename: str) -> Path:
        return self.output_path / sanitize_filename(filename)

    def write_text(self, filename: str, text: str) -> Path:
        """テキストファイルを保存"""
        filepath = self.path(filename)
        filepath.write_text(text, encoding="utf-8")
        logger.info(f"ファイル保存完了: {filepath}")
        return filepath

    def write_json(self, filename: str, data: Dict[str, Any]) -> Path:
        return self.write_text(filename, json.dumps(data, indent=2, ensure_ascii=False, default=str) + "\n")

    def write_rows(self, filename: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        """CSV を保存（数値は format_number で固定表記）"""
        filepath = self.path(filename)
        with open(filepath, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([format_number(value) for value in row])
        logger.info(f"ファイル保存完了: {filepath}")
        return filepath

    def write_resolved_config(self, config: RunConfig) -> Path:
        return self.write_text("resolved.ini", config.to_ini())

    # ------------------------------------------------------------ 格子関数

    def write_field_csv(self, filename: str, field: ScalarField) -> Path:
        """x1,x2,value（境界節点を含む全節点）"""
        points = field.grid.points
        rows = ((float(x[0]), float(x[1]), float(v)) for x, v in zip(points, field.values))
        return self.write_rows(filename, ("x1", "x2", "value"), rows)

    def write_field_vtk(self, filename: str, field: ScalarField, name: str = "u") -> Path:
        """レガシー VTK ASCII STRUCTURED_POINTS（格子点のみ、外部節点は 0 と node_kind=-1）"""
        grid = field.grid
        nx, ny = grid.shape
        values = np.zeros((nx, ny))
        kinds = -np.ones((nx, ny), dtype=int)
        mapped = grid.lattice_map >= 0
        values[mapped] = field.values[grid.lattice_map[mapped]]
        kinds[mapped] = np.where(grid.kind[grid.lattice_map[mapped]] == INTERIOR, 0, 1)

        # VTK は x が最も速く変わる順
        lines: List[str] = [
            "# vtk DataFile Version 3.0",
            f"{name} on {grid.domain.kind} h={format_number(grid.h)}",
            "ASCII",
            "DATASET STRUCTURED_POINTS",
            f"DIMENSIONS {nx} {ny} 1",
            f"ORIGIN {format_number(float(grid.origin[0]))} {format_number(float(grid.origin[1]))} 0",
            f"SPACING {format_number(grid.h)} {format_number(grid.h)} 1",
            f"POINT_DATA {nx * ny}",
            f"SCALARS {name} double 1",
            "LOOKUP_TABLE default",
        ]
        lines += [format_number(float(v)) for v in values.T.ravel()]
        lines += ["SCALARS node_kind int 1", "LOOKUP_TABLE default"]
        lines += [str(int(k)) for k in kinds.T.ravel()]
        return self.write_text(filename, "\n".join(lines) + "\n")

    def write_field(self, stem: str, field: ScalarField, formats: Sequence[str]) -> List[Path]:
        written = []
        if "csv" in formats:
            written.append(self.write_field_csv(f"{stem}.csv", field))
        if "vtk" in formats:
            written.append(self.write_field_vtk(f"{stem}.vtk", field, name=stem))
        return written

    # ------------------------------------------------------------ レポート

    def write_conditions(self, reports: Sequence[ConditionReport]) -> List[Path]:
        """conditions.csv と人が読む conditions.txt"""
        rows = [(r.name, r.samples, r.min_margin, r.tolerance, r.witness_text(), r.passed) for r in reports]
        csv_path = self.write_rows("conditions.csv", CONDITION_COLUMNS, rows)

        lines = []
        for r in reports:
            lines.append(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: min margin {r.min_margin:.6g} "
                         f"(tolerance {r.tolerance:g}, {r.samples} samples)")
            if r.worst_witness:
                lines.append(f"      worst: {r.witness_text()}")
            for key, value in r.details.items():
                lines.append(f"      {key}: {value}")
            for note in r.notes:
                lines.append(f"      note: {note}")
        passed = sum(r.passed for r in reports)
        lines.append(f"{passed}/{len(reports)} checks passed")
        return [csv_path, self.write_text("conditions.txt", "\n".join(lines) + "\n")]

    def write_estimate(self, report: EstimateReport) -> Path:
        data = report.model_dump(exclude={"notes"})
        if data.get("pogorelov_direction") is not None:
            data["pogorelov_direction"] = " ".join(format_number(v) for v in data["pogorelov_direction"])
        return self.write_rows("estimate.csv", ("quantity", "value"), list(data.items()))

    def write_rates(self, table: RateTable) -> Path:
        rows = [[getattr(row, column) for column in RATE_COLUMNS] for row in table.rows]
        return self.write_rows("rates.csv", RATE_COLUMNS, rows)

    def write_transport(self, field: ScalarField, nodes: np.ndarray, values: np.ndarray) -> Path:
        points = field.grid.points[nodes]
        rows = ((int(n), float(x[0]), float(x[1]), float(v)) for n, x, v in zip(nodes, points, values))
        return self.write_rows("transport.csv", ("node", "x1", "x2", "residual"), rows)
