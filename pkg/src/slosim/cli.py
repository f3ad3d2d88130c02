"""Command-line front end: spec files, subcommands, reports.

A spec is a JSON document that mirrors the shape of the simulation:

    {
      "network": {"link_gbps": 100, "rtt_us": 10},
      "discipline": {"kind": "weighted", "within": "fifo",
                     "weights": [0.5, 0.5]},
      "cc": {"preset": "dctcp"},
      "classes": [
        {"name": "fg",
         "flow_sizes": {"workload": "google"},
         "interarrivals": {"lognormal": {"load_gbps": 8, "sigma": 1.5}},
         "slis": [{"name": "small_p99", "metric": "p99",
                   "range_kb": [0, 125]}],
         "slo": "small_p99 < 3.0"}
      ],
      "sim": {"num_flows": 2000, "seed": 1}
    }

Values carry their unit in the key name (link_gbps, rtt_us, range_kb).
Validation walks the whole document and reports every problem with its
field path, not just the first.

Exit status: 0 when the command's condition holds (all SLOs met, the
optimization succeeded, every capacity search feasible), 1 when it does
not, 2 for configuration errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field, replace
from typing import Any, Optional

import numpy as np

from .bottleneck import (
    ProcessorSharing,
    QueueDiscipline,
    SharedFifo,
    StrictPriority,
    WeightAllocation,
    WeightedClasses,
)
from .ccmodel import CC_PRESETS, CcParams
from .engine import (
    FlowRecord,
    NetworkConfig,
    SimConfig,
    SimResult,
    bin_by_size,
    run_simulation,
)
from .errors import ConfigError, SpecValidationError
from .optimizer import (
    OptimizerConfig,
    Strategy,
    find_baselines,
    inflation,
    min_bandwidth,
    optimize_weights,
    run_scenario_batch,
    ScenarioSpace,
    write_scenario_csv,
)
from .shaper import (
    LeakyBucketParams,
    default_bucket_grid,
    simulate_shaper,
    sweep_bucket_sizes,
    write_delay_cdf_csv,
    write_downstream_csv,
)
from .slo import (
    Comparison,
    Max,
    Mean,
    Percentile,
    SliDef,
    Verdict,
    compute_sli,
    eval_slo,
    parse_slo,
    upper_bound_comparisons,
)
from .units import BYTES_PER_NS_PER_GBPS, gbps, kb, to_gbps, to_us, us
from .workload import (
    Constant,
    EmpiricalCdf,
    Exponential,
    LogNormal,
    TrafficClassSpec,
    bundled_workload_path,
    dist_mean,
    load_cdf_file,
    mu_for_load,
)

CSV_HEADER = "flow_id,class,size_bytes,arrival_ns,completion_ns,slowdown"

_SIM_DEFAULTS = {"num_flows": 2000, "seed": 1, "warmup": 0.05, "replications": 1}
_OPT_DEFAULTS = {"max_iters": 50, "timeout_s": None,
                 "baseline_tolerance": 0.01, "capacity_tolerance": 0.02}


class _Problems:
    """Collects validation failures with field paths."""

    def __init__(self):
        self.items: list[str] = []

    def add(self, path: str, message: str) -> None:
        self.items.append(f"{path}: {message}")

    def raise_if_any(self) -> None:
        if self.items:
            raise SpecValidationError(self.items)


def _get(tree: dict, key: str, path: str, problems: _Problems, kind=None,
         required: bool = True, default=None):
    if key not in tree:
        if required:
            problems.add(f"{path}.{key}", "missing")
        return default
    value = tree[key]
    if kind is not None and not isinstance(value, kind):
        names = kind.__name__ if not isinstance(kind, tuple) else "/".join(
            k.__name__ for k in kind)
        problems.add(f"{path}.{key}", f"expected {names}, got {type(value).__name__}")
        return default
    return value


def _parse_sizes(tree: Any, path: str, problems: _Problems):
    if not isinstance(tree, dict) or len(tree) != 1:
        problems.add(path, "flow_sizes must be a single-key object")
        return None
    (kind, body), = tree.items()
    try:
        if kind == "workload":
            return load_cdf_file(bundled_workload_path(body))
        if kind == "cdf_file":
            return load_cdf_file(body)
        if kind == "lognormal":
            return LogNormal(mu=float(body["mu_ln_bytes"]), sigma=float(body["sigma"]))
        if kind == "exponential":
            return Exponential(mean=kb(float(body["mean_kb"])))
        if kind == "constant":
            return Constant(value=kb(float(body["kb"])))
    except (ConfigError, OSError, KeyError, TypeError, ValueError) as exc:
        problems.add(path, str(exc))
        return None
    problems.add(path, f"unknown flow size form {kind!r}")
    return None


def _parse_gaps(tree: Any, sizes, path: str, problems: _Problems):
    if not isinstance(tree, dict) or len(tree) != 1:
        problems.add(path, "interarrivals must be a single-key object")
        return None
    (kind, body), = tree.items()
    try:
        if kind == "exponential":
            if "load_gbps" in body:
                if sizes is None:
                    return None
                mean_gap = dist_mean(sizes) / gbps(float(body["load_gbps"]))
                return Exponential(mean=mean_gap)
            return Exponential(mean=us(float(body["mean_us"])))
        if kind == "lognormal":
            sigma = float(body["sigma"])
            if "load_gbps" in body:
                if sizes is None:
                    return None
                mu = mu_for_load(gbps(float(body["load_gbps"])), dist_mean(sizes), sigma)
            else:
                mu = float(body["mu_ln_ns"])
            return LogNormal(mu=mu, sigma=sigma)
    except (ConfigError, KeyError, TypeError, ValueError, ZeroDivisionError) as exc:
        problems.add(path, str(exc))
        return None
    problems.add(path, f"unknown inter-arrival form {kind!r}")
    return None


def _parse_metric(text: str, path: str, problems: _Problems):
    if text == "mean":
        return Mean()
    if text == "max":
        return Max()
    if text.startswith("p"):
        try:
            value = float(text[1:])
        except ValueError:
            value = None
        if value is not None and 0 < value < 100:
            return Percentile(value / 100.0)
    problems.add(path, f"unknown metric {text!r} (use pNN, mean, or max)")
    return None


def _parse_sli(tree: Any, path: str, problems: _Problems) -> Optional[SliDef]:
    if not isinstance(tree, dict):
        problems.add(path, "SLI must be an object")
        return None
    name = _get(tree, "name", path, problems, kind=str)
    metric_text = _get(tree, "metric", path, problems, kind=str)
    rng = _get(tree, "range_kb", path, problems, kind=list, required=False)
    metric = _parse_metric(metric_text, f"{path}.metric", problems) if metric_text else None
    size_range = None
    if rng is not None:
        if len(rng) != 2:
            problems.add(f"{path}.range_kb", "expected [min_kb, max_kb-or-null]")
        else:
            lo = kb(float(rng[0]))
            hi = None if rng[1] is None else kb(float(rng[1]))
            size_range = (lo, hi)
    if name is None or metric is None:
        return None
    try:
        return SliDef(name=name, metric=metric, size_range=size_range)
    except ConfigError as exc:
        problems.add(path, str(exc))
        return None


def _parse_discipline(tree: Any, n_classes: int, path: str, problems: _Problems
                      ) -> tuple[Optional[QueueDiscipline], Optional[WeightAllocation]]:
    if not isinstance(tree, dict):
        problems.add(path, "discipline must be an object")
        return None, None
    kind = _get(tree, "kind", path, problems, kind=str)
    if kind is None:
        return None, None
    weights = None
    if "weights" in tree and tree["weights"] is not None:
        raw = tree["weights"]
        if not isinstance(raw, list) or len(raw) != n_classes:
            problems.add(f"{path}.weights", f"expected {n_classes} numbers")
        else:
            try:
                weights = WeightAllocation(tuple(float(w) for w in raw))
            except ConfigError as exc:
                problems.add(f"{path}.weights", str(exc))
    within = tree.get("within", "fifo")
    if within not in ("fifo", "fq"):
        problems.add(f"{path}.within", f"expected fifo or fq, got {within!r}")
        within = "fifo"
    if kind == "fifo":
        return SharedFifo(), weights
    if kind == "priority":
        return StrictPriority(), weights
    if kind == "weighted":
        if weights is None:
            problems.add(f"{path}.weights", "weighted discipline needs weights")
        return WeightedClasses(within=within), weights
    if kind == "ps":
        return ProcessorSharing(weighted=weights is not None), weights
    problems.add(f"{path}.kind", f"unknown discipline {kind!r}")
    return None, None


def _parse_cc(tree: Any, path: str, problems: _Problems) -> Optional[CcParams]:
    if not isinstance(tree, dict):
        problems.add(path, "cc must be an object")
        return None
    if "preset" in tree:
        name = tree["preset"]
        maker = CC_PRESETS.get(name)
        if maker is None:
            problems.add(f"{path}.preset",
                         f"unknown preset {name!r} (have {sorted(CC_PRESETS)})")
            return None
        return maker()
    try:
        return CcParams(
            r_init=gbps(float(tree["r_init_gbps"])),
            u_target=float(tree["u_target"]),
            queue_threshold=kb(float(tree["thresh_kb"])),
            beta=float(tree["beta"]),
            eta=float(tree["eta"]),
        )
    except (ConfigError, KeyError, TypeError, ValueError) as exc:
        problems.add(path, str(exc))
        return None


@dataclass
class ShaperSpec:
    rate: float
    count: int
    seed: int
    sizes: Any
    gaps: Any
    buckets: Optional[list[float]]  # None: default grid


@dataclass
class SpecDocument:
    tree: dict
    network: NetworkConfig
    discipline: QueueDiscipline
    weights: Optional[WeightAllocation]
    cc: CcParams
    classes: list[TrafficClassSpec]
    num_flows: int
    seed: int
    warmup: float
    replications: int
    opt_tree: dict
    output_path: Optional[str]
    output_format: str
    shaper: Optional[ShaperSpec]

    def sim_config(self, seed: Optional[int] = None) -> SimConfig:
        return SimConfig(
            network=self.network, discipline=self.discipline, cc=self.cc,
            classes=self.classes, num_flows=self.num_flows,
            seed=self.seed if seed is None else seed,
            weights=self.weights, warmup_fraction=self.warmup)

    def optimizer_config(self) -> OptimizerConfig:
        o = self.opt_tree
        return OptimizerConfig(
            max_iterations=o["max_iters"],
            baseline_weight_tolerance=o["baseline_tolerance"],
            capacity_search_tolerance=o["capacity_tolerance"],
            replications=self.replications, seed=self.seed,
            timeout_s=o["timeout_s"])

    def to_tree(self) -> dict:
        return json.loads(json.dumps(self.tree))  # deep copy, JSON-normalized


def load_spec_tree(tree: dict) -> SpecDocument:
    problems = _Problems()
    if not isinstance(tree, dict):
        raise SpecValidationError(["top level: expected an object"])

    net_tree = _get(tree, "network", "", problems, kind=dict) or {}
    link = _get(net_tree, "link_gbps", "network", problems, kind=(int, float))
    rtt = _get(net_tree, "rtt_us", "network", problems, kind=(int, float))
    dt_ns = _get(net_tree, "dt_ns", "network", problems, kind=(int, float),
                 required=False)
    network = None
    if link is not None and link <= 0:
        problems.add("network.link_gbps", "must be positive")
    elif rtt is not None and rtt <= 0:
        problems.add("network.rtt_us", "must be positive")
    elif link is not None and rtt is not None:
        try:
            network = NetworkConfig(capacity=gbps(link), rtt=us(rtt),
                                    dt=float(dt_ns) if dt_ns else 0.0)
        except ConfigError as exc:
            problems.add("network", str(exc))

    classes_tree = _get(tree, "classes", "", problems, kind=list) or []
    classes: list[TrafficClassSpec] = []
    for i, cls_tree in enumerate(classes_tree):
        path = f"classes[{i}]"
        if not isinstance(cls_tree, dict):
            problems.add(path, "expected an object")
            continue
        name = _get(cls_tree, "name", path, problems, kind=str) or f"class{i}"
        sizes = _parse_sizes(_get(cls_tree, "flow_sizes", path, problems, kind=dict),
                             f"{path}.flow_sizes", problems)
        gaps = _parse_gaps(_get(cls_tree, "interarrivals", path, problems, kind=dict),
                           sizes, f"{path}.interarrivals", problems)
        slis = []
        for j, sli_tree in enumerate(cls_tree.get("slis", [])):
            sli = _parse_sli(sli_tree, f"{path}.slis[{j}]", problems)
            if sli is not None:
                slis.append(sli)
        slo_text = cls_tree.get("slo")
        slo = None
        if slo_text is not None:
            try:
                slo = parse_slo(slo_text)
            except ConfigError as exc:
                problems.add(f"{path}.slo", str(exc))
        rank = cls_tree.get("priority")
        if sizes is None or gaps is None:
            continue
        try:
            classes.append(TrafficClassSpec(
                name=name, flow_sizes=sizes, interarrivals=gaps, slis=slis,
                slo=slo, priority_rank=rank))
        except ConfigError as exc:
            problems.add(path, str(exc))

    discipline, weights = _parse_discipline(
        _get(tree, "discipline", "", problems, kind=dict, required=False,
             default={"kind": "fifo"}),
        len(classes_tree), "discipline", problems)
    cc = _parse_cc(_get(tree, "cc", "", problems, kind=dict, required=False,
                        default={"preset": "dctcp"}), "cc", problems)

    sim_tree = dict(_SIM_DEFAULTS)
    sim_tree.update(_get(tree, "sim", "", problems, kind=dict, required=False,
                         default={}) or {})
    opt_tree = dict(_OPT_DEFAULTS)
    opt_tree.update(_get(tree, "optimizer", "", problems, kind=dict, required=False,
                         default={}) or {})
    out_tree = _get(tree, "output", "", problems, kind=dict, required=False,
                    default={}) or {}
    out_format = out_tree.get("format", "summary")
    if out_format not in ("summary", "csv"):
        problems.add("output.format", f"expected summary or csv, got {out_format!r}")

    shaper_spec = None
    if "shaper" in tree:
        sh = tree["shaper"]
        spath = "shaper"
        if not isinstance(sh, dict):
            problems.add(spath, "expected an object")
        else:
            s_rate = _get(sh, "rate_gbps", spath, problems, kind=(int, float))
            s_sizes = _parse_sizes(_get(sh, "sizes", spath, problems, kind=dict),
                                   f"{spath}.sizes", problems)
            s_gaps = _parse_gaps(_get(sh, "gaps", spath, problems, kind=dict),
                                 s_sizes, f"{spath}.gaps", problems)
            raw_buckets = sh.get("buckets_kb")
            buckets = None
            if raw_buckets is not None:
                if not isinstance(raw_buckets, list) or not raw_buckets:
                    problems.add(f"{spath}.buckets_kb", "expected a nonempty list")
                else:
                    buckets = [kb(float(b)) for b in raw_buckets]
            if s_rate is not None and s_sizes is not None and s_gaps is not None:
                shaper_spec = ShaperSpec(
                    rate=gbps(s_rate), count=int(sh.get("count", 100_000)),
                    seed=int(sh.get("seed", sim_tree["seed"])),
                    sizes=s_sizes, gaps=s_gaps, buckets=buckets)

    problems.raise_if_any()
    if network is None or discipline is None or cc is None or not classes:
        raise SpecValidationError(["classes: need at least one valid traffic class"
                                   if not classes else "spec incomplete"])

    normalized = {
        "network": {"link_gbps": float(link), "rtt_us": float(rtt),
                    "dt_ns": float(network.dt)},
        "discipline": dict(tree.get("discipline", {"kind": "fifo"})),
        "cc": dict(tree.get("cc", {"preset": "dctcp"})),
        "classes": [dict(c) for c in classes_tree],
        "sim": {k: sim_tree[k] for k in _SIM_DEFAULTS},
        "optimizer": {k: opt_tree[k] for k in _OPT_DEFAULTS},
        "output": {"path": out_tree.get("path"), "format": out_format},
    }
    if "shaper" in tree:
        normalized["shaper"] = dict(tree["shaper"])

    try:
        doc = SpecDocument(
            tree=normalized, network=network, discipline=discipline,
            weights=weights, cc=cc, classes=classes,
            num_flows=int(sim_tree["num_flows"]), seed=int(sim_tree["seed"]),
            warmup=float(sim_tree["warmup"]),
            replications=int(sim_tree["replications"]),
            opt_tree=opt_tree, output_path=out_tree.get("path"),
            output_format=out_format, shaper=shaper_spec)
        doc.sim_config()  # fail early on cross-field problems
    except ConfigError as exc:
        raise SpecValidationError([str(exc)]) from exc
    return doc


def load_spec(path: str) -> SpecDocument:
    try:
        with open(path) as fh:
            tree = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read spec {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"spec {path!r} is not valid JSON: {exc}") from exc
    return load_spec_tree(tree)


# --------------------------------------------------------------------------
# reports


def records_csv_lines(result: SimResult) -> list[str]:
    lines = [CSV_HEADER]
    names = [spec.name for spec in result.config.classes]
    for k in range(len(names)):
        for r in result.sli_records(k):
            lines.append(f"{r.flow_id},{names[k]},{r.size},{r.arrival:.3f},"
                         f"{r.completion:.3f},{r.slowdown:.9f}")
    return lines


def _binding_violation(spec: TrafficClassSpec, values: dict) -> Optional[str]:
    """The comparison that fails hardest, with its value and threshold."""
    if spec.slo is None:
        return None
    worst = None
    for cmpr in upper_bound_comparisons(spec.slo):
        value = values.get(cmpr.ident)
        if value is None:
            continue
        margin = (value - cmpr.threshold) / cmpr.threshold
        if margin >= 0 and (worst is None or margin > worst[0]):
            worst = (margin, cmpr, value)
    if worst is None:
        return None
    _, cmpr, value = worst
    return (f"binding SLI {cmpr.ident} = {value:.4f} "
            f"violates {cmpr.ident} {cmpr.op} {cmpr.threshold}")


def _t_interval(values: list[float]) -> Optional[tuple[float, float]]:
    if len(values) < 2:
        return None
    from scipy import stats

    arr = np.asarray(values)
    sem = arr.std(ddof=1) / np.sqrt(len(arr))
    if sem == 0:
        return (float(arr.mean()), float(arr.mean()))
    t = stats.t.ppf(0.975, len(arr) - 1)
    return (float(arr.mean() - t * sem), float(arr.mean() + t * sem))


def run_report(doc: SpecDocument, results: list[SimResult], out) -> bool:
    all_met = True
    per_class_values: list[list[dict]] = [[] for _ in doc.classes]
    for res in results:
        for k, spec in enumerate(doc.classes):
            values = {s.name: compute_sli(s, res.sli_records(k)) for s in spec.slis}
            per_class_values[k].append(values)

    base = results[0]
    if any(r.unstable for r in results):
        print("warning: simulation hit its horizon before all flows completed "
              "(configuration looks unstable)", file=out)
        all_met = False

    for k, spec in enumerate(doc.classes):
        print(f"class {spec.name}:", file=out)
        values0 = per_class_values[k][0]
        for s in spec.slis:
            vals = [v[s.name] for v in per_class_values[k] if v[s.name] is not None]
            if not vals:
                print(f"  {s.name}: no samples", file=out)
                continue
            line = f"  {s.name} = {vals[0]:.4f}"
            ci = _t_interval(vals)
            if ci is not None:
                line += (f"  (mean {np.mean(vals):.4f}, "
                         f"95% CI [{ci[0]:.4f}, {ci[1]:.4f}], n={len(vals)})")
            print(line, file=out)
        if spec.slo is None:
            print("  slo: none", file=out)
            continue
        verdicts = [eval_slo(spec.slo, v) for v in per_class_values[k]]
        final = (Verdict.MET if all(v is Verdict.MET for v in verdicts)
                 else Verdict.INDETERMINATE
                 if any(v is Verdict.INDETERMINATE for v in verdicts)
                 else Verdict.VIOLATED)
        print(f"  slo {spec.slo.unparse()!r}: {final.value}", file=out)
        if final is not Verdict.MET:
            all_met = False
            why = _binding_violation(spec, values0)
            if why:
                print(f"  {why}", file=out)

        bins = bin_by_size(base.sli_records(k))
        if bins:
            print("  size-bin p99 slowdowns:", file=out)
            for b in bins:
                p99 = sorted(r.slowdown for r in b)[
                    max(0, int(np.ceil(0.99 * len(b))) - 1)]
                print(f"    <= {max(r.size for r in b):>10} B  n={len(b):<6} "
                      f"p99 {p99:.3f}", file=out)
    return all_met


# --------------------------------------------------------------------------
# subcommands


def command_run(doc: SpecDocument, args, out=None) -> int:
    out = out if out is not None else sys.stdout
    results = []
    for rep in range(doc.replications):
        results.append(run_simulation(doc.sim_config(seed=doc.seed + rep)))
    if doc.output_format == "csv":
        lines = records_csv_lines(results[0])
        if doc.output_path:
            with open(doc.output_path, "w") as fh:
                fh.write("\n".join(lines) + "\n")
        else:
            for line in lines:
                print(line, file=out)
        return 0 if all(r.all_slos_met() for r in results) else 1
    met = run_report(doc, results, out)
    return 0 if met else 1


def command_optimize(doc: SpecDocument, args, out=None) -> int:
    out = out if out is not None else sys.stdout
    opt = doc.optimizer_config()
    cfg = doc.sim_config()
    if not isinstance(cfg.discipline, WeightedClasses):
        cfg = replace(cfg, discipline=WeightedClasses(within="fifo"),
                      weights=WeightAllocation(
                          tuple([1.0 / len(doc.classes)] * len(doc.classes))))
    baselines = find_baselines(cfg, opt)
    for k, spec in enumerate(doc.classes):
        w = baselines.weights[k]
        print(f"baseline {spec.name}: "
              f"{'infeasible at weight 1.0' if w is None else f'{w:.4f}'}", file=out)
    if not baselines.feasible:
        return 1
    outcome = optimize_weights(cfg, opt, baselines=baselines)
    for i, (wts, losses) in enumerate(outcome.trace):
        loss_text = ", ".join(f"{l:+.3f}" for l in losses)
        print(f"iter {i}: weights [{', '.join(f'{w:.4f}' for w in wts.weights)}] "
              f"losses [{loss_text}]", file=out)
    print(f"success: {outcome.success}", file=out)
    print("weights: " + ", ".join(
        f"{spec.name}={w:.4f}" for spec, w in zip(doc.classes, outcome.weights.weights)),
        file=out)
    return 0 if outcome.success else 1


def command_minbw(doc: SpecDocument, args, out=None) -> int:
    out = out if out is not None else sys.stdout
    opt = doc.optimizer_config()
    cfg = doc.sim_config()
    wanted = [Strategy(s) for s in args.strategies] if args.strategies else list(Strategy)
    caps: dict[Strategy, Optional[float]] = {}
    fifo_cap = None
    for strat in wanted:
        hint = fifo_cap if strat in (Strategy.WEIGHTS_FIFO, Strategy.WEIGHTS_FQ) else None
        res = min_bandwidth(cfg, strat, opt, hint_hi=hint)
        caps[strat] = res.capacity
        if strat is Strategy.SHARED_FIFO:
            fifo_cap = res.capacity
        text = "infeasible" if res.capacity is None else f"{to_gbps(res.capacity):.2f} Gbps"
        print(f"{strat.value}: {text}  ({res.probes} probes)", file=out)
    if fifo_cap is not None:
        for strat, cap in caps.items():
            if strat is Strategy.SHARED_FIFO or cap is None:
                continue
            print(f"inflation fifo/{strat.value}: {inflation(fifo_cap, cap):.3f}",
                  file=out)
    return 0 if all(c is not None for c in caps.values()) else 1


def command_scenarios(doc: SpecDocument, args, out=None) -> int:
    out = out if out is not None else sys.stdout
    opt = doc.optimizer_config()
    space = ScenarioSpace(network=doc.network)
    template = doc.sim_config()
    rows = run_scenario_batch(
        space, args.count, args.classes, template, opt,
        progress=lambda msg: print(msg, file=out))
    if doc.output_path:
        write_scenario_csv(rows, doc.output_path)
        print(f"manifest written to {doc.output_path}", file=out)
    infl = [row.inflation_over(Strategy.WEIGHTS_FIFO) for row in rows]
    infl = [x for x in infl if x is not None]
    if infl:
        print(f"median inflation fifo/weights-fifo over {len(infl)} scenarios: "
              f"{float(np.median(infl)):.3f}", file=out)
    return 0


def command_shaper(doc: SpecDocument, args, out=None) -> int:
    out = out if out is not None else sys.stdout
    sh = doc.shaper
    if sh is None:
        print("spec has no shaper block", file=out)
        return 2
    buckets = sh.buckets or default_bucket_grid(sh.sizes)
    results = sweep_bucket_sizes(sh.rate, buckets, sh.sizes, sh.gaps, sh.count, sh.seed)
    any_unstable = False
    for res in results:
        if not res.stable:
            any_unstable = True
            print(f"bucket {res.params.bucket / 1000:.1f} KB: unstable "
                  f"(offered load >= rate)", file=out)
            continue
        hd = np.sort(res.host_delays)
        ds = np.sort(res.downstream_seen)
        p99h = hd[max(0, int(np.ceil(0.99 * len(hd))) - 1)]
        p99d = ds[max(0, int(np.ceil(0.99 * len(ds))) - 1)]
        print(f"bucket {res.params.bucket / 1000:>8.1f} KB: host delay mean "
              f"{to_us(res.host_delays.mean()):8.2f} us p99 {to_us(p99h):8.2f} us | "
              f"downstream mean {res.downstream_seen.mean() / 1000:8.2f} KB "
              f"p99 {p99d / 1000:8.2f} KB", file=out)
    if doc.output_path:
        write_delay_cdf_csv(doc.output_path + ".delay.csv", results)
        write_downstream_csv(doc.output_path + ".downstream.csv", results)
        print(f"distributions written to {doc.output_path}.delay.csv and "
              f".downstream.csv", file=out)
    return 1 if any_unstable else 0


def _apply_flag_overrides(doc: SpecDocument, args) -> SpecDocument:
    if args.seed is not None:
        doc.seed = args.seed
        doc.tree["sim"]["seed"] = args.seed
    if args.flows is not None:
        doc.num_flows = args.flows
        doc.tree["sim"]["num_flows"] = args.flows
    if args.replications is not None:
        doc.replications = args.replications
        doc.tree["sim"]["replications"] = args.replications
    if args.dt_ns is not None:
        doc.network = replace(doc.network, dt=float(args.dt_ns))
        doc.tree["network"]["dt_ns"] = float(args.dt_ns)
    if args.max_iters is not None:
        doc.opt_tree["max_iters"] = args.max_iters
    if args.timeout_s is not None:
        doc.opt_tree["timeout_s"] = args.timeout_s
    if args.out is not None:
        doc.output_path = args.out
        doc.tree["output"]["path"] = args.out
    if args.format is not None:
        doc.output_format = args.format
        doc.tree["output"]["format"] = args.format
    return doc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slosim",
        description="Flow-level network simulator and switch-weight optimizer")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("spec", help="path to a JSON spec file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--flows", type=int, default=None)
        p.add_argument("--dt-ns", type=float, default=None, dest="dt_ns")
        p.add_argument("--replications", type=int, default=None)
        p.add_argument("--max-iters", type=int, default=None, dest="max_iters")
        p.add_argument("--timeout-s", type=float, default=None, dest="timeout_s")
        p.add_argument("--out", default=None)
        p.add_argument("--format", choices=("summary", "csv"), default=None)

    common(sub.add_parser("run", help="simulate and judge the SLOs"))
    common(sub.add_parser("optimize", help="tune per-class switch weights"))
    p_minbw = sub.add_parser("minbw", help="minimum capacity per strategy")
    common(p_minbw)
    p_minbw.add_argument("--strategies", nargs="*", default=None,
                         choices=[s.value for s in Strategy])
    p_scen = sub.add_parser("scenarios", help="randomized capacity-planning batch")
    common(p_scen)
    p_scen.add_argument("--count", type=int, default=20)
    p_scen.add_argument("--classes", type=int, default=3, choices=(3, 5))
    common(sub.add_parser("shaper", help="leaky-bucket shaping study"))
    return parser


_COMMANDS = {
    "run": command_run,
    "optimize": command_optimize,
    "minbw": command_minbw,
    "scenarios": command_scenarios,
    "shaper": command_shaper,
}


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        doc = load_spec(args.spec)
        doc = _apply_flag_overrides(doc, args)
        return _COMMANDS[args.command](doc, args)
    except SpecValidationError as exc:
        print("spec validation failed:", file=sys.stderr)
        for problem in exc.problems:
            print(f"  {problem}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
