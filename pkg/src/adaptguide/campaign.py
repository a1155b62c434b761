"""Design campaigns: propose (alpha, beta), sample a batch, score it, update the GP."""
from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .bayesopt import BetaShapeOptimizer, branin_objective, composite_loss
from .exceptions import ConfigError
from .io import load_structure
from .metrics import evaluate_structure
from .sampler import AnalyticDenoiser, GuidedSampler, make_skip_schedule
from .schedule import beta_profile, normalized_time
from .se3 import NoiseSchedule, noise_structure

log = logging.getLogger(__name__)

LOG_NAME = "campaign.jsonl"


def emit_schedule_csv(params, T, path):
    """Write ``t,t_norm,factor`` rows for t = 1..T to a path or open text file."""
    if not hasattr(path, "write"):
        with open(path, "w", newline="") as fh:
            return emit_schedule_csv(params, T, fh)
    writer = csv.writer(path, lineterminator="\n")
    writer.writerow(["t", "t_norm", "factor"])
    for t in range(1, T + 1):
        tn = normalized_time(t, T)
        f = beta_profile(tn, params.alpha, params.beta, params.lambda_peak)
        writer.writerow([t, repr(float(tn)), repr(float(f))])
    return None


def design_metrics(report):
    """Metric vector scored against the (1.5, 7.0, 10.0) normalisers.

    CDR RMSD in angstrom, interface non-uniformity as ten times the distance
    coefficient of variation, and hotspot shortfall as ten times the
    uncovered fraction.
    """
    return (report.rmsd, 10.0 * report.uniformity_cv, 10.0 * (1.0 - report.hotspot_coverage))


class Campaign:
    """Owns the configuration, reference structure, optimiser and log."""

    def __init__(self, cfg, out_dir=None, trace=False):
        self.cfg = cfg.validate()
        self.out_dir = Path(out_dir or cfg.output_dir)
        self.trace = trace
        sc = cfg.schedule
        self.schedule = NoiseSchedule.cosine(sc.T, sc.sigma_min, sc.sigma_max,
                                             trans_scale=sc.trans_scale)
        self.reference = None
        if cfg.structure:
            self.reference = load_structure(cfg.structure, cfg.annotations)
            self.reference.require_guidance_regions()
        bo = cfg.bo
        self.box = (tuple(cfg.guidance.bounds),) * 2
        self.optimizer = BetaShapeOptimizer(
            box=self.box, length_scale=bo.length_scale, noise_std=bo.noise_std,
            xi=bo.xi, aggregate_radius=bo.aggregate_radius, refit_every=bo.refit_every,
            reeval_period=bo.reeval_period, reeval_fraction=bo.reeval_fraction,
            initial=tuple(bo.initial),
        )

    @property
    def log_path(self):
        return self.out_dir / LOG_NAME

    # -- sampling ----------------------------------------------------------
    def sampler(self, theta):
        params = self.cfg.guidance.with_shape(*theta)
        return GuidedSampler(
            AnalyticDenoiser(self.reference, self.schedule, self.cfg.denoiser_spread), self.schedule, params,
            self.cfg.experts, self.cfg.router, self.cfg.sampler,
        )

    def _one_design(self, sampler, iteration, index):
        rng = np.random.default_rng([self.cfg.seed, iteration, index])
        x_T = noise_structure(self.reference, self.schedule, self.schedule.T, rng)
        sc = self.cfg.sampler
        skip = make_skip_schedule(self.schedule.T, sc.skip_mode, sc.skip_interval)
        trace = [] if self.trace else None
        state = sampler.sample(x_T, rng, skip=skip, trace=trace)
        return state, trace

    def generate(self, theta, iteration=0, n=None):
        """Sample a batch at fixed ``theta``; independent RNG stream per design."""
        if self.reference is None:
            raise ConfigError("sampling needs a structure")
        n = self.cfg.batch_size if n is None else n
        sampler = self.sampler(theta)
        with ThreadPoolExecutor(max_workers=self.cfg.workers) as pool:
            results = list(pool.map(lambda i: self._one_design(sampler, iteration, i), range(n)))
        return results

    # -- evaluation --------------------------------------------------------
    def evaluate(self, theta, iteration):
        """Returns ``(loss, batch metrics, per-design reports, trace paths)``."""
        ev = self.cfg.evaluation
        if ev.objective == "branin":
            rng = np.random.default_rng([self.cfg.seed, iteration, 1 << 20])
            f = float(branin_objective(theta, self.box))
            return f + ev.benchmark_noise * float(rng.standard_normal()), [f], [], []
        designs = self.generate(theta, iteration)
        reports, losses, vectors, traces = [], [], [], []
        for j, (state, trace) in enumerate(designs):
            rep = evaluate_structure(state, self.reference, self.cfg.metrics)
            m = design_metrics(rep)
            reports.append(rep.as_dict())
            vectors.append(m)
            losses.append(composite_loss(m, ev.weights, ev.normalizers))
            if trace is not None:
                traces.append(self._write_trace(iteration, j, trace))
        return float(np.mean(losses)), np.mean(vectors, axis=0).tolist(), reports, traces

    def _write_trace(self, iteration, index, records):
        path = self.out_dir / "traces" / f"iter{iteration:04d}_design{index:02d}.jsonl"
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        return str(path.relative_to(self.out_dir))

    # -- log -----------------------------------------------------------------
    def read_log(self):
        """Complete records of an existing log and the byte length they span.

        Reading stops at the first torn or unparsable line.
        """
        if not self.log_path.exists():
            return [], 0
        records, size = [], 0
        with open(self.log_path, "rb") as fh:
            for line in fh:
                if not line.endswith(b"\n"):
                    break
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError:
                    break
                size += len(line)
        for k, rec in enumerate(records):
            if rec.get("iteration") != k:
                raise ConfigError(f"log record {k} has iteration {rec.get('iteration')}")
        return records, size

    def run(self, resume=False):
        """Run (or continue) the campaign; returns the full list of records."""
        self.out_dir.mkdir(parents=True, exist_ok=True)
        records, size = self.read_log() if resume else ([], 0)
        for rec in records:
            self.optimizer.tell(rec["theta"], rec["loss"])
        mode = "r+" if resume and self.log_path.exists() else "w"
        with open(self.log_path, mode) as fh:
            fh.seek(size)
            fh.truncate()
            for it in range(len(records), self.cfg.iterations):
                start = time.perf_counter()
                theta, ei, kind = self.optimizer.ask(np.random.default_rng([self.cfg.seed, it, 0]))
                theta = [float(v) for v in theta]
                loss, metrics, reports, traces = self.evaluate(theta, it)
                self.optimizer.tell(theta, loss)
                rec = {
                    "iteration": it,
                    "theta": theta,
                    "kind": kind,
                    "ei": float(ei),
                    "metrics": [float(v) for v in metrics],
                    "loss": float(loss),
                    "designs": reports,
                    "traces": traces,
                    "wall_time": time.perf_counter() - start,
                }
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
                fh.flush()
                records.append(rec)
                log.info("iteration %d theta=(%.3f, %.3f) loss=%.4f", it, *theta, loss)
        return records


def run_campaign(cfg, out_dir=None, trace=False, resume=False):
    return Campaign(cfg, out_dir, trace).run(resume=resume)
