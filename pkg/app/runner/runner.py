"""
Batch experiment runner.

Tasks run in a fixed order and their reports are written in that order, so
output never depends on completion time. A task that hits the enumeration
budget is marked failed and the run continues.
"""
from __future__ import annotations

import itertools
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from app import __version__
from app.config import TASK_NAMES, parse_document, public_config
from app.engine import cipher as cph
from app.engine import netsim as ns
from app.engine.leakage import Tolerance, bound_coincidence, leakage_sweep, bounded_scenarios, parse_scenario
from app.engine.oracle import ENUMERATION_BUDGET
from app.engine.probcore import (
    JointPmf,
    SignConvention,
    conditional_entropy,
    decomposition_sum,
    entropy,
    entropy_decomposition,
    mutual_information,
    pmf_from_spec,
)
from app.engine.swcodec import (
    MAX_K,
    MIN_K,
    LinearEncoder,
    SourceRealization,
    build_layout,
    encode,
    parse_layout,
)
from app.errors import ConfigError, DomainError, LeaklabError, ResourceError
from app.runner.reports import config_hash, provenance, write_csv, write_json

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Diagnostic:
    field: str
    message: str

    def __str__(self) -> str:
        return f"{self.field}: {self.message}"


@dataclass
class TaskResult:
    name: str
    status: str = "ok"
    rows: List[Dict[str, Any]] = field(default_factory=list)
    payload: Dict[str, Any] = field(default_factory=dict)
    error: Optional[str] = None
    seconds: float = 0.0


@dataclass
class RunManifest:
    config_hash: str
    seed: int
    version: str
    tasks: List[TaskResult]
    out_dir: Path

    @property
    def ok(self) -> bool:
        return all(t.status == "ok" for t in self.tasks)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "version": self.version,
            "tasks": [
                {"name": t.name, "status": t.status, "error": t.error, "seconds": round(t.seconds, 6),
                 "rows": len(t.rows)}
                for t in self.tasks
            ],
        }


def _pmf(cfg: Dict[str, Any]) -> JointPmf:
    return pmf_from_spec(cfg["pmf"], cfg.get("_base_dir"))


def _enumeration_size(pmf: JointPmf, k: int) -> int:
    return int(pmf.size) ** int(k)


# ============================================================================
# VALIDATION
# ============================================================================

def validate(cfg: Dict[str, Any]) -> List[Diagnostic]:
    """Structural and range checks; never mutates `cfg` and never raises."""
    out: List[Diagnostic] = []
    try:
        pmf = _pmf(cfg)
    except (LeaklabError, TypeError, ValueError) as e:
        return [Diagnostic("pmf", str(e))]
    tasks = cfg.get("tasks", {})
    two_binary = pmf.alphabet_sizes == (2, 2)

    def _check_k(fld: str, k: Any) -> None:
        try:
            k = int(k)
        except (TypeError, ValueError):
            out.append(Diagnostic(fld, f"K must be an integer, got {k!r}"))
            return
        if not MIN_K <= k <= MAX_K:
            out.append(Diagnostic(fld, f"K={k} outside [{MIN_K}, {MAX_K}]"))
        if _enumeration_size(pmf, k) > ENUMERATION_BUDGET:
            out.append(Diagnostic(fld, f"K={k} needs {pmf.size}^{k} sequences, over the 2^28 oracle budget"))

    if "leakage" in tasks:
        t = tasks["leakage"]
        if not two_binary:
            out.append(Diagnostic("tasks.leakage", "needs a two-source binary pmf"))
        for k in t.get("ks", []):
            _check_k("tasks.leakage.ks", k)
        for text in t.get("layouts") or []:
            try:
                _check_k("tasks.leakage.layouts", parse_layout(str(text)).k)
            except DomainError as e:
                out.append(Diagnostic("tasks.leakage.layouts", str(e)))
        for a in t.get("alphas", []):
            if not isinstance(a, (int, float)) or not 0.0 <= float(a) <= 1.0:
                out.append(Diagnostic("tasks.leakage.alphas", f"alpha={a} outside [0, 1]"))
        if t.get("scenarios") != "bounded":
            for s in t.get("scenarios") or []:
                try:
                    parse_scenario(s)
                except DomainError as e:
                    out.append(Diagnostic("tasks.leakage.scenarios", str(e)))
        try:
            Tolerance(float(t.get("delta", 0.0)))
        except (DomainError, TypeError, ValueError) as e:
            out.append(Diagnostic("tasks.leakage.delta", str(e)))

    for name in ("cipher", "region"):
        if name not in tasks:
            continue
        t = tasks[name]
        if not two_binary:
            out.append(Diagnostic(f"tasks.{name}", "needs a two-source binary pmf"))
            continue
        for c in t.get("cases", []):
            try:
                case = cph.CipherCase.of(c)
                target = cph.SecurityTarget.parse(str(t.get("target", "h=0")), case)
            except DomainError as e:
                out.append(Diagnostic(f"tasks.{name}.cases", str(e)))
                continue
            for problem in cph.target_range_violations(case, target, pmf):
                out.append(Diagnostic(f"tasks.{name}.target", problem))
        if name == "cipher":
            _check_k("tasks.cipher.k", t.get("k"))
            if t.get("variant") not in ("long", "composite"):
                out.append(Diagnostic("tasks.cipher.variant", f"unknown variant {t.get('variant')!r}"))
            if t.get("layout"):
                try:
                    parse_layout(str(t["layout"]))
                except DomainError as e:
                    out.append(Diagnostic("tasks.cipher.layout", str(e)))

    if "netsim" in tasks:
        try:
            spec = ns.load_network(_network_doc(cfg), cfg.get("_base_dir"))
            if _enumeration_size(spec.cfg.pmf, spec.cfg.k) > ENUMERATION_BUDGET:
                out.append(Diagnostic("tasks.netsim.k", "network K is over the 2^28 oracle budget"))
        except LeaklabError as e:
            out.append(Diagnostic("tasks.netsim.network", str(e)))
    return out


# ============================================================================
# TASKS
# ============================================================================

def task_entropy(cfg: Dict[str, Any], t: Dict[str, Any], jobs: int) -> TaskResult:
    pmf = _pmf(cfg)
    n = pmf.num_sources
    rows = []
    for size in range(1, n + 1):
        for members in itertools.combinations(range(n), size):
            rows.append({"quantity": "H", "members": members, "given": (), "bits": entropy(pmf, members).value})
    for i in range(n):
        rest = tuple(j for j in range(n) if j != i)
        if rest:
            rows.append({"quantity": "H", "members": (i,), "given": rest,
                         "bits": conditional_entropy(pmf, i, rest).value})
    for i, j in itertools.combinations(range(n), 2):
        rows.append({"quantity": "I", "members": (i, j), "given": (),
                     "bits": mutual_information(pmf, i, j).value})
    return TaskResult("entropy", rows=rows, payload={"pmf": pmf.to_dict()})


def task_decompose(cfg: Dict[str, Any], t: Dict[str, Any], jobs: int) -> TaskResult:
    pmf = _pmf(cfg)
    convention = SignConvention(t.get("convention", "co_information"))
    rows = []
    sums = {}
    for i in range(pmf.num_sources):
        terms = entropy_decomposition(pmf, i, convention)
        for term in terms:
            rows.append({
                "source": i,
                "term": term.descriptor,
                "order": term.order,
                "sign": term.sign,
                "value_bits": term.quantity.value,
                "signed_bits": term.signed_value,
            })
        sums[str(i)] = {"sum_bits": decomposition_sum(terms), "entropy_bits": entropy(pmf, i).value}
    return TaskResult("decompose", rows=rows, payload={"convention": convention.value, "sums": sums})


def task_leakage(cfg: Dict[str, Any], t: Dict[str, Any], jobs: int) -> TaskResult:
    pmf = _pmf(cfg)
    raw = t.get("scenarios", "bounded")
    scenarios = bounded_scenarios() if raw == "bounded" else [parse_scenario(s) for s in raw]
    reports = leakage_sweep(
        pmf,
        [int(k) for k in t["ks"]],
        [float(a) for a in t["alphas"]],
        scenarios,
        seed=cfg["seed"],
        tol=Tolerance(float(t.get("delta", 0.0))),
        jobs=jobs,
        layouts=[str(s) for s in t.get("layouts") or []],
    )
    coincide = [{"k": k, "alpha": a, "coincide": v} for (k, a), v in sorted(bound_coincidence(reports).items())]
    return TaskResult("leakage", rows=[r.row() for r in reports], payload={"cx_cy_vs_cx_cy_vy": coincide})


def _cipher_layout(pmf: JointPmf, t: Dict[str, Any]):
    if t.get("layout"):
        return parse_layout(str(t["layout"]))
    return build_layout(pmf, int(t["k"]), float(t.get("alpha", 0.5)))


def task_cipher(cfg: Dict[str, Any], t: Dict[str, Any], jobs: int) -> TaskResult:
    pmf = _pmf(cfg)
    layout = _cipher_layout(pmf, t)
    k = layout.k
    enc = LinearEncoder.random(layout, cfg["seed"])
    split = cph.SplitParams.default(layout)
    rows = []
    schedules = {}
    rng = np.random.default_rng(cfg["seed"])
    for c in t["cases"]:
        case = cph.CipherCase.of(c)
        if t.get("key_portion"):
            case = case.with_key_portion(str(t["key_portion"]))
        target = cph.SecurityTarget.parse(str(t.get("target", "h=0")), case)
        keys = cph.build_keys(case, layout, target, cph.KeyVariant(t.get("variant", "long")), split, pmf,
                              independent=bool(t.get("independent_keys", False)))
        security = cph.measure_security(pmf, k, enc, keys, case, split, jobs)
        point = cph.construction_point(enc, keys)
        region = cph.region_member(point, case, pmf)
        gap = cph.converse_gap(point, case, security)

        # one seeded round trip through encrypt/decrypt and the decoder
        x, y = (int(v) for v in rng.integers(0, 1 << k, size=2))
        bundle = encode(enc, SourceRealization.pair(k, x, y))
        key_value = keys.draw(cfg["seed"] + case.id)
        restored = cph.decrypt(cph.encrypt(bundle, split, keys, case, key_value), keys, key_value)

        rows.append({
            "case": case.id,
            "variant": keys.variant.value,
            "independent_keys": keys.independent,
            "k": k,
            "layout": layout.describe(),
            "key_bits": keys.total_bits,
            "h_x": security.h_x_measured,
            "h_y": security.h_y_measured,
            "h_xy": security.h_xy_measured,
            "r_kx": point.r_kx,
            "r_ky": point.r_ky,
            "member": region.member,
            "violations": region.violations,
            "min_converse_slack": min(gap.slacks.values()),
            "roundtrip": restored == bundle,
        })
        schedules[str(case.id)] = keys.describe()
    return TaskResult("cipher", rows=rows, payload={"layout": layout.describe(), "key_schedules": schedules})


def task_region(cfg: Dict[str, Any], t: Dict[str, Any], jobs: int) -> TaskResult:
    pmf = _pmf(cfg)
    steps = max(2, int(t.get("grid", 11)))
    h_xy = entropy(pmf, (0, 1)).value
    r_x = conditional_entropy(pmf, 0, 1).value
    r_y = entropy(pmf, 1).value
    grid = np.linspace(0.0, h_xy, steps)
    rows = []
    mismatches = 0
    for c in t["cases"]:
        case = cph.CipherCase.of(c)
        target = cph.SecurityTarget.parse(str(t.get("target", "h=0")), case)
        for r_kx, r_ky in itertools.product(grid, grid):
            point = cph.RatePoint(r_x, r_y, float(r_kx), float(r_ky), target.h_x, target.h_y, target.h_xy)
            check = cph.region_member(point, case, pmf)
            if case.id == 4:
                as_case3 = cph.RatePoint(r_x, r_y, float(r_kx), float(r_ky), 0.0, target.h_y, target.h_xy)
                mismatches += check.member != cph.region_member(as_case3, cph.CipherCase.of(3), pmf).member
            rows.append({
                "case": case.id,
                "r_x": r_x,
                "r_y": r_y,
                "r_kx": float(r_kx),
                "r_ky": float(r_ky),
                "member": check.member,
                "violations": check.violations,
            })
    return TaskResult("region", rows=rows, payload={"case4_vs_case3_mismatches": mismatches})


def _network_doc(cfg: Dict[str, Any]) -> Dict[str, Any]:
    t = cfg.get("tasks", {}).get("netsim", {})
    net = t.get("network")
    if net is None:
        return {"pmf": cfg["pmf"], "k": 3, "seed": cfg["seed"], "combination": t.get("combination", False)}
    if isinstance(net, dict):
        return net
    path = Path(str(net))
    if cfg.get("_base_dir") and not path.is_absolute():
        path = Path(cfg["_base_dir"]) / path
    try:
        with path.open("r", encoding="utf-8") as f:
            return parse_document(f.read(), str(path))
    except OSError as e:
        raise ConfigError(f"cannot read network document: {e}", field="tasks.netsim.network") from e


def task_netsim(cfg: Dict[str, Any], t: Dict[str, Any], jobs: int) -> TaskResult:
    spec = ns.load_network(_network_doc(cfg), cfg.get("_base_dir"))
    layout = ns.allocate_portions(spec.cfg)
    encs = ns.make_encoder(layout, spec.seed)
    plan = ns.plan_masks(spec.cfg, layout, spec.combination or bool(t.get("combination", False)), encs, jobs)
    rows = [r.row() for r in ns.masking_comparison(spec.cfg, layout, encs, plan, spec.adversaries, jobs)]
    bound = ns.masked_rate_bound(spec.cfg)
    payload = {
        "k": spec.cfg.k,
        "layout": {name: w for name, w in sorted(layout.widths().items())},
        "mask_plan": plan.rows(),
        "masked_rate_bound_bits": bound.bound_bits,
        "slepian_wolf_sum_rate_bits": bound.slepian_wolf_sum_rate,
        "marginal_form_bits": bound.marginal_form,
    }
    return TaskResult("netsim", rows=rows, payload=payload)


TASKS: Dict[str, Callable[[Dict[str, Any], Dict[str, Any], int], TaskResult]] = {
    "entropy": task_entropy,
    "decompose": task_decompose,
    "leakage": task_leakage,
    "cipher": task_cipher,
    "region": task_region,
    "netsim": task_netsim,
}


def _run_task(name: str, cfg: Dict[str, Any], jobs: int) -> TaskResult:
    start = time.perf_counter()
    logger.info("Task %s started", name)
    try:
        result = TASKS[name](cfg, cfg["tasks"][name], jobs)
    except ResourceError as e:
        logger.error("Task %s failed: %s", name, e)
        result = TaskResult(name, status="failed", error=f"resource: {e}")
    except (LeaklabError, ValueError, KeyError, TypeError) as e:
        logger.error("Task %s failed: %s", name, e)
        result = TaskResult(name, status="failed", error=str(e))
    result.seconds = time.perf_counter() - start
    logger.info("Task %s %s in %.3fs", name, result.status, result.seconds)
    return result


def run(cfg: Dict[str, Any], out_dir: Optional[str] = None) -> RunManifest:
    """
    Execute the configured tasks, write `<task>.csv`, `<task>.json` and
    `manifest.json` under out_dir.

    Raises:
        OSError: output directory is not writable
    """
    out = Path(out_dir or cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    public = public_config(cfg)
    chash = config_hash(public)
    prov = provenance(chash, cfg["seed"])
    names = [n for n in TASK_NAMES if n in cfg["tasks"]]
    jobs = int(cfg.get("jobs", 1))

    # Tasks share the pool; each one enumerates single-threaded inside it
    if jobs > 1 and len(names) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda n: _run_task(n, cfg, 1), names))
    else:
        results = [_run_task(n, cfg, jobs) for n in names]

    for r in results:
        if r.status != "ok":
            continue
        write_csv(out / f"{r.name}.csv", r.rows, prov)
        write_json(out / f"{r.name}.json", {"task": r.name, "rows": r.rows, **r.payload}, prov)
    manifest = RunManifest(chash, cfg["seed"], __version__, results, out)
    with (out / "manifest.json").open("w", encoding="utf-8") as f:
        f.write(json.dumps(manifest.to_dict(), sort_keys=True, indent=2))
        f.write("\n")
    return manifest
