"""Domain-randomisation strategies: target-difficulty curriculum (GDR), uniform (UDR),
bilevel BO (BayRn) and step-paced Easy2Hard.

GDR picks, at every timestep, the simulator configuration on which the
current detector scores closest to a target ``k``, then keeps training the
same detector on data from that configuration.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

from .bayesopt import BoTrace, ParamSpace, denormalize, maximize, DEFAULT_CANDIDATES
from .compositor import AnnotatedDataset, SimParams, generate_dataset
from .detector import DetectorParams, save_checkpoint
from .errors import ParameterError
from .rng import generator, mix
from .training import OptimizerConfig, TrainReport, forgetting_score, performance_V, train

STRATEGIES = ("gdr", "udr", "bayrn", "easy2hard")
WARN_DISTANCE = 0.3

# seed streams
_PROBE_SUBSET, _PROBE_DATA, _TRAIN_DATA, _TRAIN_OPT, _BO = 0xB1, 0xB2, 0xB3, 0xB4, 0xB5


@dataclass(frozen=True)
class CurriculumConfig:
    strategy: str = "gdr"
    target_k: float = 0.5
    pacing_schedule: tuple = ()
    T: int = 10
    n_init: int = 5
    bo_iter: int = 35
    probe_normals: int = 30
    replay_previous: bool = False
    seed: int = 0
    optimizer: OptimizerConfig = OptimizerConfig(epochs=40)
    lesions_per_image: int = 1
    n_candidates: int = DEFAULT_CANDIDATES

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ParameterError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if not 0.0 <= self.target_k <= 1.0:
            raise ParameterError(f"target_k must lie in [0, 1], got {self.target_k}")
        if self.T < 0:
            raise ParameterError("T must be >= 0")
        if not 1 <= self.n_init <= self.bo_iter:
            raise ParameterError(f"need 1 <= n_init <= bo_iter, got {self.n_init}, {self.bo_iter}")
        if self.probe_normals < 1:
            raise ParameterError("probe_normals must be >= 1")
        sched = tuple(float(v) for v in self.pacing_schedule)
        if any(not 0.0 <= v <= 1.0 for v in sched):
            raise ParameterError("pacing_schedule values must lie in [0, 1]")
        object.__setattr__(self, "pacing_schedule", sched)

    def targets(self) -> list[float]:
        if self.strategy == "easy2hard":
            if len(self.pacing_schedule) != self.T:
                raise ParameterError(
                    f"pacing_schedule has {len(self.pacing_schedule)} entries but T={self.T}")
            return list(self.pacing_schedule)
        return [self.target_k] * self.T


@dataclass
class Hooks:
    """Test seams.

    ``probe(params, phi, t, i)`` replaces the probe-set FAUC,
    ``update(params, phi, t)`` replaces data generation plus training and
    returns new params, ``score(params)`` replaces the validation FAUC.
    """

    probe: Optional[Callable[[DetectorParams, SimParams, int, int], float]] = None
    update: Optional[Callable[[DetectorParams, SimParams, int], DetectorParams]] = None
    score: Optional[Callable[[DetectorParams], float]] = None


@dataclass
class TimestepRecord:
    t: int
    phi: Optional[SimParams]
    target: float
    probe_V: float
    distance: float
    val_V: float
    forgetting: list[float]
    init_hash: str
    params_hash: str
    warning: bool = False
    selected_epoch: int = 0
    params: Optional[DetectorParams] = field(default=None, repr=False)


@dataclass
class CurriculumTrace:
    strategy: str
    records: list[TimestepRecord] = field(default_factory=list)
    bo_traces: list[BoTrace] = field(default_factory=list, repr=False)
    initial_hash: str = ""

    def __len__(self) -> int:
        return len(self.records)


def _check_inputs(normals, val_set) -> None:
    if len(normals) == 0:
        raise ParameterError("no normal images supplied")
    if val_set is not None and len(val_set) == 0:
        raise ParameterError("validation set is empty")


def _val_score(hooks: Hooks, params: DetectorParams, val_set) -> float:
    if hooks.score is not None:
        return float(hooks.score(params))
    return performance_V(params, val_set)


def _probe_indices(config: CurriculumConfig, n: int, t: int) -> list[int]:
    if config.probe_normals > n:
        raise ParameterError(f"probe_normals={config.probe_normals} exceeds the {n} available normals")
    rng = generator(config.seed, _PROBE_SUBSET, t)
    return sorted(int(i) for i in rng.choice(n, size=config.probe_normals, replace=False))


def _run_targeted(config: CurriculumConfig, targets: Sequence[float], normals, val_set,
                  detector0: DetectorParams, hooks: Hooks, space: ParamSpace,
                  out_dir=None) -> tuple[DetectorParams, CurriculumTrace]:
    trace = CurriculumTrace(config.strategy, initial_hash=detector0.digest())
    if config.T == 0:
        return detector0, trace
    if hooks.update is None or hooks.probe is None:
        _check_inputs(normals, val_set)
    params = detector0
    history: list[tuple[DetectorParams, AnnotatedDataset]] = []
    pool: Optional[AnnotatedDataset] = None
    if out_dir is not None:
        save_checkpoint(Path(out_dir) / "theta_t0.json", detector0)

    for t in range(1, config.T + 1):
        k = targets[t - 1]
        current = params
        if hooks.probe is None:
            probe_idx = _probe_indices(config, len(normals), t)
            probe_normals = [normals[i] for i in probe_idx]

        def objective(point, i, t=t, k=k, current=current):
            phi = denormalize(space, point)
            if hooks.probe is not None:
                v = float(hooks.probe(current, phi, t, i))
            else:
                probe = generate_dataset(probe_normals, phi, config.lesions_per_image,
                                         seed=mix(config.seed, _PROBE_DATA, t, i))
                v = performance_V(current, probe)
            return -abs(v - k), {"V": v}

        bo = maximize(objective, space, config.n_init, config.bo_iter, mix(config.seed, _BO, t),
                      n_candidates=config.n_candidates)
        trace.bo_traces.append(bo)
        best = bo.best()
        phi_t = denormalize(space, best.point)
        probe_v = best.extra["V"]

        report: Optional[TrainReport] = None
        if hooks.update is not None:
            new_params = hooks.update(current, phi_t, t)
            data = None
        else:
            data = generate_dataset(normals, phi_t, config.lesions_per_image,
                                    seed=mix(config.seed, _TRAIN_DATA, t))
            if config.replay_previous and pool is not None:
                pool = pool.merged(data)
                pool.seed = data.seed
            else:
                pool = data
            opt = replace(config.optimizer, seed=mix(config.seed, _TRAIN_OPT, t))
            report = train(current, pool, val_set, opt,
                           val_fn=(lambda p, _v: hooks.score(p)) if hooks.score else None)
            new_params = report.params

        forget = [forgetting_score(new_params, p_s, d_s) for p_s, d_s in history] if data is not None else []
        val_v = report.val_scores[report.selected_epoch - 1] if report is not None and report.selected_epoch \
            else _val_score(hooks, new_params, val_set)
        rec = TimestepRecord(
            t=t, phi=phi_t, target=k, probe_V=probe_v, distance=best.objective, val_V=val_v,
            forgetting=forget, init_hash=current.digest(), params_hash=new_params.digest(),
            warning=abs(probe_v - k) > WARN_DISTANCE,
            selected_epoch=report.selected_epoch if report else 0, params=new_params,
        )
        trace.records.append(rec)
        if data is not None:
            history.append((new_params, data))
        if out_dir is not None:
            save_checkpoint(Path(out_dir) / f"theta_t{t}.json", new_params)
        params = new_params
    return params, trace


def run_gdr(config: CurriculumConfig, normals, val_set, detector0: DetectorParams,
            hooks: Optional[Hooks] = None, space: Optional[ParamSpace] = None, out_dir=None):
    """Target-difficulty curriculum: per timestep, BO finds phi with V(theta, S_phi) closest to k,
    then the detector continues training on data generated with that phi."""
    if config.strategy != "gdr":
        raise ParameterError(f"run_gdr needs strategy 'gdr', got {config.strategy!r}")
    return _run_targeted(config, config.targets(), normals, val_set, detector0,
                         hooks or Hooks(), space or ParamSpace.default(), out_dir)


def run_easy2hard(config: CurriculumConfig, normals, val_set, detector0: DetectorParams,
                  hooks: Optional[Hooks] = None, space: Optional[ParamSpace] = None, out_dir=None):
    """GDR with the target at timestep t taken from ``pacing_schedule[t-1]``."""
    if config.strategy != "easy2hard":
        raise ParameterError(f"run_easy2hard needs strategy 'easy2hard', got {config.strategy!r}")
    return _run_targeted(config, config.targets(), normals, val_set, detector0,
                         hooks or Hooks(), space or ParamSpace.default(), out_dir)


def udr_dataset(config: CurriculumConfig, normals) -> AnnotatedDataset:
    """UDR training data: every image draws its own phi uniformly from the ranges."""
    if len(normals) == 0:
        raise ParameterError("no normal images supplied")
    return generate_dataset(normals, None, config.lesions_per_image, seed=mix(config.seed, _TRAIN_DATA, 1))


def run_udr(config: CurriculumConfig, normals, val_set, detector0: DetectorParams,
            hooks: Optional[Hooks] = None, out_dir=None):
    """One training run on data whose phi is drawn uniformly per image."""
    if config.strategy != "udr":
        raise ParameterError(f"run_udr needs strategy 'udr', got {config.strategy!r}")
    hooks = hooks or Hooks()
    _check_inputs(normals, val_set)
    data = udr_dataset(config, normals)
    opt = replace(config.optimizer, seed=mix(config.seed, _TRAIN_OPT, 1))
    report = train(detector0, data, val_set, opt,
                   val_fn=(lambda p, _v: hooks.score(p)) if hooks.score else None)
    params = report.params
    trace = CurriculumTrace("udr", initial_hash=detector0.digest())
    val_v = report.val_scores[report.selected_epoch - 1] if report.selected_epoch \
        else _val_score(hooks, params, val_set)
    trace.records.append(TimestepRecord(
        t=1, phi=None, target=math.nan, probe_V=math.nan, distance=math.nan, val_V=val_v,
        forgetting=[], init_hash=detector0.digest(), params_hash=params.digest(),
        selected_epoch=report.selected_epoch, params=params))
    if out_dir is not None:
        save_checkpoint(Path(out_dir) / "theta_t0.json", detector0)
        save_checkpoint(Path(out_dir) / "theta_t1.json", params)
    return params, trace


def run_bayrn(config: CurriculumConfig, normals, val_set, detector0: DetectorParams,
              hooks: Optional[Hooks] = None, space: Optional[ParamSpace] = None,
              objective_fn: Optional[Callable[[SimParams, int], float]] = None, out_dir=None):
    """Bilevel BO: each evaluation retrains from ``detector0`` on S_phi and scores on ``val_set``.

    ``objective_fn(phi, i)`` stubs the whole inner problem; the returned
    params are then ``detector0``.
    """
    if config.strategy != "bayrn":
        raise ParameterError(f"run_bayrn needs strategy 'bayrn', got {config.strategy!r}")
    hooks = hooks or Hooks()
    space = space or ParamSpace.default()
    if objective_fn is None:
        _check_inputs(normals, val_set)
    trained: dict[int, TrainReport] = {}

    def objective(point, i):
        phi = denormalize(space, point)
        if objective_fn is not None:
            return float(objective_fn(phi, i))
        data = generate_dataset(normals, phi, config.lesions_per_image,
                                seed=mix(config.seed, _TRAIN_DATA, 1, i))
        opt = replace(config.optimizer, seed=mix(config.seed, _TRAIN_OPT, 1, i))
        rep = train(detector0, data, val_set, opt,
                    val_fn=(lambda p, _v: hooks.score(p)) if hooks.score else None)
        trained[i] = rep
        return rep.val_scores[rep.selected_epoch - 1] if rep.selected_epoch \
            else _val_score(hooks, rep.params, val_set)

    bo = maximize(objective, space, config.n_init, config.bo_iter, mix(config.seed, _BO, 1),
                  n_candidates=config.n_candidates)
    best = bo.best()
    params = trained[best.iteration].params if best.iteration in trained else detector0
    trace = CurriculumTrace("bayrn", bo_traces=[bo], initial_hash=detector0.digest())
    trace.records.append(TimestepRecord(
        t=1, phi=denormalize(space, best.point), target=math.nan, probe_V=best.objective,
        distance=math.nan, val_V=best.objective, forgetting=[], init_hash=detector0.digest(),
        params_hash=params.digest(),
        selected_epoch=trained[best.iteration].selected_epoch if best.iteration in trained else 0,
        params=params))
    if out_dir is not None:
        save_checkpoint(Path(out_dir) / "theta_t0.json", detector0)
        save_checkpoint(Path(out_dir) / "theta_t1.json", params)
    return params, trace


def run_strategy(config: CurriculumConfig, normals, val_set, detector0: DetectorParams,
                 hooks: Optional[Hooks] = None, out_dir=None):
    fn = {"gdr": run_gdr, "udr": run_udr, "bayrn": run_bayrn, "easy2hard": run_easy2hard}[config.strategy]
    return fn(config, normals, val_set, detector0, hooks=hooks, out_dir=out_dir)


def meta_validate(traces: Mapping[float, CurriculumTrace], rare_val_set,
                  score_fn: Optional[Callable[[DetectorParams, object], float]] = None) -> tuple[float, int, float]:
    """Best ``(k, t, score)`` over every timestep checkpoint; ties go to smaller t, then smaller k."""
    if not traces:
        raise ParameterError("meta_validate needs at least one trace")
    score_fn = score_fn or performance_V
    best = None
    for k in sorted(traces):
        for rec in traces[k].records:
            s = float(score_fn(rec.params, rare_val_set))
            key = (s, -rec.t, -k)
            if best is None or key > best[0]:
                best = (key, k, rec.t, s)
    if best is None:
        raise ParameterError("traces contain no checkpoints")
    return best[1], best[2], best[3]


# --- export -----------------------------------------------------------------

PHI_NAMES = ("persistence", "lacunarity", "res", "alpha", "beta")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def write_trace_csv(path, trace: CurriculumTrace) -> None:
    n_forget = max([len(r.forgetting) for r in trace.records], default=0)
    header = (["t"] + [f"phi_{n}" for n in PHI_NAMES] + ["probe_V", "distance", "val_V"]
              + [f"forget_{s}" for s in range(1, n_forget + 1)]
              + ["target", "warning", "init_hash", "params_hash"])
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in trace.records:
            phi = list(r.phi.as_tuple()) if r.phi is not None else [None] * len(PHI_NAMES)
            forget = list(r.forgetting) + [None] * (n_forget - len(r.forgetting))
            row = [r.t] + phi + [r.probe_V, r.distance, r.val_V] + forget + \
                  [r.target, r.warning, r.init_hash, r.params_hash]
            w.writerow([_fmt(v) for v in row])


def read_trace_csv(path) -> list[dict]:
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            rec = {}
            for key, val in row.items():
                if key in ("init_hash", "params_hash"):
                    rec[key] = val
                elif key in ("t", "warning"):
                    rec[key] = int(val)
                else:
                    rec[key] = float(val) if val != "" else None
            out.append(rec)
    return out


def trace_summary(trace: CurriculumTrace) -> dict:
    return {
        "strategy": trace.strategy,
        "initial_hash": trace.initial_hash,
        "records": [
            {"t": r.t, "phi": r.phi.to_dict() if r.phi else None, "target": None if math.isnan(r.target) else r.target,
             "probe_V": None if math.isnan(r.probe_V) else r.probe_V, "val_V": r.val_V,
             "forgetting": r.forgetting, "warning": r.warning, "init_hash": r.init_hash,
             "params_hash": r.params_hash, "selected_epoch": r.selected_epoch}
            for r in trace.records
        ],
    }


def verify_chain(trace: CurriculumTrace, checkpoint_dir=None) -> bool:
    """True when every timestep started from the previous timestep's parameters.

    With ``checkpoint_dir`` the hashes are recomputed from ``theta_t{t}.json``.
    """
    from .detector import load_checkpoint

    prev = trace.initial_hash
    if checkpoint_dir is not None:
        d = Path(checkpoint_dir)
        if load_checkpoint(d / "theta_t0.json").digest() != prev:
            return False
    for r in trace.records:
        if r.init_hash != prev:
            return False
        if checkpoint_dir is not None and load_checkpoint(Path(checkpoint_dir) / f"theta_t{r.t}.json").digest() != r.params_hash:
            return False
        prev = r.params_hash
    return True
