"""Line-oriented text formats: manifest, training log, metric report."""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Mapping, Optional, Tuple

from .errors import InputError
from .utils import PathLike

SPLITS = ("train", "test")
MISSING = "MISSING"


@dataclass(frozen=True)
class ManifestRecord:
    degraded_path: str
    clean_path: str
    exposure: float
    split: str


@dataclass
class DatasetManifest:
    """Records plus the folder their relative paths start from."""
    records: List[ManifestRecord]
    seed: int = 0
    root: Path = field(default_factory=Path)

    def split(self, name: str) -> List[ManifestRecord]:
        return [r for r in self.records if r.split == name]

    def resolve(self, relative: str) -> Path:
        return self.root / relative


def manifest_lines(manifest: DatasetManifest) -> List[str]:
    lines = [f"# seed={manifest.seed}"]
    for r in manifest.records:
        lines.append(
            f"{r.degraded_path}\t{r.clean_path}\t{r.exposure:.6f}\t{r.split}")
    return lines


def write_manifest(path: PathLike, manifest: DatasetManifest) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(manifest_lines(manifest)))
        f.write("\n")


def read_manifest(path: PathLike) -> DatasetManifest:
    """Parse a manifest; relative paths resolve against its folder."""
    records: List[ManifestRecord] = []
    seed = 0
    with open(path, "r", encoding="utf-8") as f:
        for line_num, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                if key.strip() == "seed":
                    try:
                        seed = int(value)
                    except ValueError:
                        raise InputError(f"Line {line_num}: bad seed")
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise InputError(
                    f"Line {line_num}: expected 4 tab-separated fields, "
                    f"got {len(fields)}")
            degraded, clean, raw_e, split = fields
            try:
                exposure = float(raw_e)
            except ValueError:
                raise InputError(f"Line {line_num}: bad exposure '{raw_e}'")
            if not -1.0 < exposure < 1.0:
                raise InputError(
                    f"Line {line_num}: exposure {exposure} outside (-1, 1)")
            if split not in SPLITS:
                raise InputError(f"Line {line_num}: unknown split '{split}'")
            records.append(ManifestRecord(degraded, clean, exposure, split))
    if not records:
        raise InputError(f"manifest '{path}' has no records")
    return DatasetManifest(records=records, seed=seed,
                           root=Path(path).parent)


def write_train_log(path: PathLike,
                    entries: Iterable[Tuple[int, float]]) -> None:
    """``epoch<TAB>mean_loss`` lines, losses at full precision."""
    lines = [f"{epoch}\t{loss:.17g}" for epoch, loss in entries]
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines))
        if lines:
            f.write("\n")


def read_train_log(path: PathLike) -> List[Tuple[int, float]]:
    entries: List[Tuple[int, float]] = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                epoch, loss = line.split("\t")
                entries.append((int(epoch), float(loss)))
    return entries


@dataclass(frozen=True)
class ImageScore:
    """Scores of one image; ``None`` marks a missing prediction."""
    path: str
    psnr: Optional[float]
    ssim: Optional[float]

    @property
    def missing(self) -> bool:
        return self.psnr is None or self.ssim is None


@dataclass
class MetricReport:
    """Per-image scores and dataset means over the present images.

    Infinite PSNR values are counted, not averaged.
    """
    scores: List[ImageScore]
    mean_psnr: float
    mean_ssim: float
    inf_count: int

    @classmethod
    def from_scores(cls, scores: List[ImageScore]) -> "MetricReport":
        present = [s for s in scores if not s.missing]
        finite = [s.psnr for s in present
                  if s.psnr is not None and math.isfinite(s.psnr)]
        inf_count = len(present) - len(finite)
        if finite:
            mean_psnr = sum(finite) / len(finite)
        else:
            mean_psnr = math.inf if inf_count else math.nan
        ssims = [s.ssim for s in present if s.ssim is not None]
        mean_ssim = sum(ssims) / len(ssims) if ssims else math.nan
        return cls(scores, mean_psnr, mean_ssim, inf_count)

    @property
    def count(self) -> int:
        return sum(1 for s in self.scores if not s.missing)

    @property
    def missing(self) -> List[str]:
        return [s.path for s in self.scores if s.missing]


def _fmt(value: Optional[float], digits: int) -> str:
    if value is None:
        return MISSING
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    if math.isnan(value):
        return "nan"
    return f"{value:.{digits}f}"


def _parse(raw: str, line_num: int) -> Optional[float]:
    if raw == MISSING:
        return None
    try:
        return float(raw)
    except ValueError:
        raise InputError(f"Line {line_num}: bad number '{raw}'")


def report_lines(report: MetricReport) -> List[str]:
    lines = [f"{s.path}\t{_fmt(s.psnr, 4)}\t{_fmt(s.ssim, 6)}"
             for s in report.scores]
    lines.append(
        f"MEAN\t{_fmt(report.mean_psnr, 4)}\t{_fmt(report.mean_ssim, 6)}"
        f"\t{report.count}\t{report.inf_count}\t{len(report.missing)}")
    return lines


def write_report(path: PathLike, report: MetricReport) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(report_lines(report)))
        f.write("\n")


def parse_report(text: str) -> MetricReport:
    """Inverse of :func:`report_lines` joined by newlines."""
    scores: List[ImageScore] = []
    footer: Optional[List[str]] = None
    for line_num, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if fields[0] == "MEAN":
            if len(fields) != 6:
                raise InputError(f"Line {line_num}: malformed MEAN footer")
            footer = fields
            continue
        if len(fields) != 3:
            raise InputError(f"Line {line_num}: expected 3 fields")
        scores.append(ImageScore(fields[0], _parse(fields[1], line_num),
                                 _parse(fields[2], line_num)))
    if footer is None:
        raise InputError("report has no MEAN footer")
    mean_psnr = _parse(footer[1], 0)
    mean_ssim = _parse(footer[2], 0)
    return MetricReport(
        scores=scores,
        mean_psnr=math.nan if mean_psnr is None else mean_psnr,
        mean_ssim=math.nan if mean_ssim is None else mean_ssim,
        inf_count=int(footer[4]),
    )


def write_run_config(path: PathLike, values: Mapping[str, object]) -> None:
    """Record the resolved run configuration as KEY=VALUE lines."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{key.upper()}={value}" for key, value in values.items()
             if value is not None]
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines))
        f.write("\n")
