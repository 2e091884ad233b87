"""
Structural checks run before any experiment.

Each check yields a pass/fail entry naming the offending object. Errors block a run;
warnings (approximate grids, unmet Bowen hypotheses) are reported and logged.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

from .errors import ValidationError
from .maps import IntervalSet, Number, PiecewiseLinearMap
from .open_system import DEFAULT_MAX_COMPONENTS, HoleFamily
from .transfer import Grid, minimal_aligned_cells

logger = logging.getLogger(__name__)

ERROR = "error"
WARNING = "warning"


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""
    subject: object = None
    severity: str = ERROR


@dataclass
class ValidationReport:
    checks: list[Check] = field(default_factory=list)

    def add(
        self,
        name: str,
        passed: bool,
        detail: str = "",
        subject: object = None,
        severity: str = ERROR,
    ) -> Check:
        check = Check(name, passed, detail, subject, severity)
        self.checks.append(check)
        if not passed:
            log = logger.error if severity == ERROR else logger.warning
            log("Check '%s' failed: %s", name, detail)
        return check

    @property
    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed and c.severity == ERROR]

    @property
    def warnings(self) -> list[Check]:
        return [c for c in self.checks if not c.passed and c.severity == WARNING]

    @property
    def ok(self) -> bool:
        return not self.failures

    def raise_for_failures(self) -> None:
        if self.failures:
            first = self.failures[0]
            raise ValidationError(f"{first.name}: {first.detail}", first.subject)

    def summary(self) -> dict:
        return {
            "ok": self.ok,
            "checks": [
                {
                    "name": c.name,
                    "passed": c.passed,
                    "severity": c.severity,
                    "detail": c.detail,
                }
                for c in self.checks
            ],
        }

    def to_rows(self) -> list[tuple[str, str, bool, str]]:
        return [(c.name, c.severity, c.passed, c.detail) for c in self.checks]


def _holes(
    family: HoleFamily, symbols: Iterable[int], eps_values: Sequence[Number | None]
) -> list[tuple[int, Number | None, IntervalSet]]:
    return [(s, eps, family.at(s, eps)) for s in symbols for eps in eps_values]


def full_branch_outside(tmap: PiecewiseLinearMap, hole: IntervalSet) -> list[int]:
    """Indices of full branches whose domain misses the hole."""
    out = []
    for i in tmap.full_branches:
        domain = tmap.branches[i].domain
        if not (IntervalSet.single(domain.lo, domain.hi) & hole):
            out.append(i)
    return out


def large_images(maps: Mapping[int, PiecewiseLinearMap]) -> bool:
    return all(len(m.full_branches) == len(m.branches) for m in maps.values())


def large_images_wrt_hole(
    maps: Mapping[int, PiecewiseLinearMap],
    family: HoleFamily,
    eps: Number | None,
    symbols: Iterable[int],
) -> bool:
    """Every hole is a union of full-branch domains."""
    for symbol in symbols:
        tmap = maps[symbol]
        for iv in family.at(symbol, eps):
            covered = [
                b for b in tmap.branches if iv.lo <= b.domain.lo and b.domain.hi <= iv.hi
            ]
            if not covered or covered[0].domain.lo != iv.lo or covered[-1].domain.hi != iv.hi:
                return False
            if not all(b.is_full for b in covered):
                return False
    return True


def validate_system(
    maps: Mapping[int, PiecewiseLinearMap],
    family: HoleFamily,
    eps_values: Sequence[Number | None] = (None,),
    grid_cells: int = 0,
    bowen: bool = False,
    max_components: int = DEFAULT_MAX_COMPONENTS,
) -> ValidationReport:
    """
    Check the standing hypotheses for a set of fiber maps and a hole family.

    Args:
        maps: Fiber map per symbol.
        family: Hole family.
        eps_values: Every epsilon the experiment will use (None for fixed holes).
        grid_cells: Configured grid, 0 for the smallest aligned one.
        bowen: Also report the large-images hypotheses.
        max_components: Component limit shared with the survivor-set sweeps.
    """
    report = ValidationReport()
    symbols = sorted(maps)

    for symbol in symbols:
        tmap = maps[symbol]
        slopes = [b.abs_slope for b in tmap.branches]
        report.add(
            "expanding",
            tmap.is_expanding,
            f"symbol {symbol}: min |slope| = {float(min(slopes)):.6g}",
            tmap,
        )

    placed = _holes(family, symbols, eps_values)
    for symbol, eps, hole in placed:
        free = full_branch_outside(maps[symbol], hole)
        where = f"symbol {symbol}, eps={eps}, hole {hole}"
        report.add(
            "full_branch_outside_hole",
            bool(free),
            f"{where}: full branches {free} miss the hole" if free else f"{where}: none survives",
            hole,
        )

    components = {(s, eps): len(hole.pairs()) for s, eps, hole in placed}
    widest = max(components.values(), default=0)
    report.add(
        "hole_components",
        widest <= max_components,
        f"at most {widest} components per hole, limit {max_components}",
        components,
    )

    if family.shrinks:
        bad = family.nesting_violations([e for e in eps_values if e is not None], symbols)
        report.add(
            "nesting",
            not bad,
            f"{len(bad)} (symbol, eps, smaller eps) pairs not nested" if bad else "holes nested",
            bad,
        )

    sets = [hole for _, _, hole in placed if hole]
    aligned_cells = minimal_aligned_cells([maps[s] for s in symbols], sets)
    if aligned_cells is None:
        report.add(
            "alignment",
            False,
            "approximate-grid: maps admit no aligned grid",
            None,
            WARNING,
        )
    elif grid_cells:
        grid = Grid(grid_cells)
        aligned = all(grid.aligned_map(maps[s]) for s in symbols) and all(
            grid.aligned_set(s) for s in sets
        )
        report.add(
            "alignment",
            aligned,
            f"{grid_cells} cells" if aligned else f"approximate-grid: {grid_cells} cells, "
            f"{aligned_cells} needed",
            grid_cells,
            WARNING,
        )
    else:
        report.add("alignment", True, f"{aligned_cells} cells", aligned_cells, WARNING)

    if bowen:
        eps = eps_values[0] if eps_values else None
        report.add(
            "large_images",
            large_images(maps),
            "every branch full",
            None,
            WARNING,
        )
        report.add(
            "large_images_wrt_hole",
            large_images_wrt_hole(maps, family, eps, symbols),
            "holes are unions of full-branch domains",
            None,
            WARNING,
        )
    return report


def check_density_floor(
    report: ValidationReport, floors: Mapping[int, float], minimum: float = 0.0
) -> Check:
    """phi must stay above `minimum` on every solved hole (fiber -> smallest cell value)."""
    low = {j: v for j, v in floors.items() if not v > minimum}
    return report.add(
        "density_floor",
        not low,
        f"phi vanishes on holes at fibers {sorted(low)[:10]}" if low else "phi > 0 on every hole",
        low,
    )
