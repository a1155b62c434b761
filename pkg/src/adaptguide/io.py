"""Structure files (PDB subset and native JSON) and campaign configuration."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .bayesopt import DEFAULT_NORMALIZERS, INITIAL_THETA
from .exceptions import AdaptGuideError, ConfigError, ParseError
from .experts import ExpertConfig
from .metrics import MetricConfig
from .routing import RouterConfig
from .sampler import SamplerConfig
from .schedule import GuidanceParams
from .se3 import REGIONS, TARGET, StructureState, project_so3

STRUCTURE_FORMAT = "adaptguide.structure"


# ---------------------------------------------------------------------------
# native JSON
# ---------------------------------------------------------------------------

def structure_to_dict(state):
    residues = []
    labels = state.meta.get("labels")
    for i in range(state.n):
        res = {
            "region": str(state.region[i]),
            "rot": state.rots[i].tolist(),
            "trans": state.trans[i].tolist(),
        }
        if labels:
            res["chain"], res["resseq"] = labels[i]
        residues.append(res)
    return {
        "format": STRUCTURE_FORMAT,
        "version": 1,
        "timestep": int(state.timestep),
        "hotspots": list(state.hotspots),
        "residues": residues,
    }


def structure_from_dict(doc):
    if doc.get("format") != STRUCTURE_FORMAT:
        raise ParseError(f"not a {STRUCTURE_FORMAT} document")
    try:
        residues = doc["residues"]
        rots = np.array([r.get("rot", np.eye(3).tolist()) for r in residues], dtype=float)
        trans = np.array([r["trans"] for r in residues], dtype=float)
        region = [r["region"] for r in residues]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed residue entry: {exc}") from exc
    if rots.shape != (len(residues), 3, 3) or trans.shape != (len(residues), 3):
        raise ParseError("residue frames must be 3x3 rotations and 3-vectors")
    meta = {}
    if residues and all("chain" in r and "resseq" in r for r in residues):
        meta["labels"] = [(r["chain"], int(r["resseq"])) for r in residues]
    hotspots = [int(h) for h in doc.get("hotspots", [])]
    _check_hotspots(hotspots, region)
    return StructureState(rots, trans, region, hotspots, int(doc.get("timestep", 0)), meta)


def write_structure(state, path):
    Path(path).write_text(json.dumps(structure_to_dict(state), indent=1) + "\n")


def _check_hotspots(hotspots, region):
    for h in hotspots:
        if not 0 <= h < len(region) or region[h] != TARGET:
            raise ConfigError(f"hotspot index {h} is not a target residue")


# ---------------------------------------------------------------------------
# PDB subset
# ---------------------------------------------------------------------------

def _backbone_frame(n, ca, c):
    """Residue frame from N, CA, C positions (x along CA->C, z normal to plane)."""
    e1 = c - ca
    e1 /= np.linalg.norm(e1)
    u = n - ca
    e2 = u - (u @ e1) * e1
    e2 /= np.linalg.norm(e2)
    return project_so3(np.stack([e1, e2, np.cross(e1, e2)], axis=1))


def parse_pdb(text):
    """Backbone atoms per residue from ATOM records.

    Returns a list of ``(chain, resseq, {atom: xyz})`` in file order. Only
    the first model is read.
    """
    residues = []
    index = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        rec = line[:6].strip()
        if rec == "ENDMDL":
            break
        if rec != "ATOM":
            continue
        if len(line) < 54:
            raise ParseError("ATOM record shorter than 54 columns", lineno)
        atom = line[12:16].strip()
        if atom not in ("N", "CA", "C"):
            continue
        if line[16] not in (" ", "A"):
            continue  # alternate locations other than the first
        chain = line[21]
        try:
            resseq = int(line[22:26])
            xyz = np.array([float(line[30:38]), float(line[38:46]), float(line[46:54])])
        except ValueError as exc:
            raise ParseError(f"bad numeric field: {exc}", lineno) from exc
        key = (chain, resseq, line[26])
        if key not in index:
            index[key] = len(residues)
            residues.append((chain, resseq, {}))
        residues[index[key]][2][atom] = xyz
    return residues


def structure_from_pdb(text, annotations):
    """Build a structure from PDB text and region annotations.

    ``annotations`` maps ``chains`` to region labels, lists ``cdr`` ranges
    as ``{"chain", "start", "end"}`` (inclusive) and ``hotspots`` as
    ``{"chain", "resseq"}`` entries or plain residue indices.
    """
    chains = annotations.get("chains", {})
    cdr_ranges = annotations.get("cdr", [])
    residues = [r for r in parse_pdb(text) if "CA" in r[2]]
    if not residues:
        raise ParseError("no CA atoms found")
    rots, trans, region, labels = [], [], [], []
    for chain, resseq, atoms in residues:
        if chain not in chains:
            raise ConfigError(f"chain {chain!r} has no region mapping")
        label = chains[chain]
        if any(r["chain"] == chain and r["start"] <= resseq <= r["end"] for r in cdr_ranges):
            label = "CDR"
        if label not in REGIONS:
            raise ConfigError(f"unknown region {label!r} for chain {chain!r}")
        if all(a in atoms for a in ("N", "CA", "C")):
            rots.append(_backbone_frame(atoms["N"], atoms["CA"], atoms["C"]))
        else:
            rots.append(np.eye(3))
        trans.append(atoms["CA"])
        region.append(label)
        labels.append((chain, resseq))
    hotspots = []
    for h in annotations.get("hotspots", []):
        if isinstance(h, dict):
            try:
                hotspots.append(labels.index((h["chain"], int(h["resseq"]))))
            except ValueError:
                raise ConfigError(f"hotspot {h} not found in structure") from None
        else:
            hotspots.append(int(h))
    _check_hotspots(hotspots, region)
    return StructureState(np.array(rots), np.array(trans), region, hotspots, 0, {"labels": labels})


def load_structure(path, annotations=None):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"structure file {path} does not exist")
    text = path.read_text()
    if path.suffix.lower() == ".json":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, exc.lineno) from exc
        return structure_from_dict(doc)
    return structure_from_pdb(text, annotations or {})


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class ScheduleConfig:
    T: int = 50
    sigma_min: float = 0.02
    sigma_max: float = 1.5
    trans_scale: float = 10.0


@dataclass
class BOConfig:
    length_scale: float = 2.0
    noise_std: float = 0.3
    xi: float = 0.01
    aggregate_radius: float = 0.5
    refit_every: int = 10
    reeval_period: int = 50
    reeval_fraction: float = 0.1
    initial: tuple = INITIAL_THETA


@dataclass
class EvaluationConfig:
    weights: tuple = (1.0, 1.0, 1.0)
    normalizers: tuple = DEFAULT_NORMALIZERS
    # "designs" scores sampled structures; "branin" swaps in a known test function
    objective: str = "designs"
    benchmark_noise: float = 0.1


@dataclass
class CampaignConfig:
    structure: str = ""
    annotations: dict = field(default_factory=dict)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    experts: ExpertConfig = field(default_factory=ExpertConfig)
    router: RouterConfig = field(default_factory=RouterConfig)
    guidance: GuidanceParams = field(default_factory=GuidanceParams)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    bo: BOConfig = field(default_factory=BOConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)
    # per-coordinate spread (angstrom) of the analytic denoiser's data model
    denoiser_spread: float = 1.0
    batch_size: int = 4
    iterations: int = 20
    seed: int = 0
    workers: int = 1
    output_dir: str = "out"

    def validate(self):
        if self.batch_size < 1 or self.iterations < 1:
            raise ConfigError("batch_size and iterations must be >= 1")
        if self.denoiser_spread < 0:
            raise ConfigError("denoiser_spread must be >= 0")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.evaluation.objective not in ("designs", "branin"):
            raise ConfigError(f"unknown objective {self.evaluation.objective!r}")
        if self.evaluation.objective == "designs" and not self.structure:
            raise ConfigError("a structure path is required")
        if self.structure and not Path(self.structure).exists():
            raise ConfigError(f"structure file {self.structure} does not exist")
        return self

    def to_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = asdict(v) if hasattr(v, "__dataclass_fields__") else v
        return out


_SECTIONS = {
    "schedule": ScheduleConfig,
    "experts": ExpertConfig,
    "router": RouterConfig,
    "guidance": GuidanceParams,
    "sampler": SamplerConfig,
    "bo": BOConfig,
    "evaluation": EvaluationConfig,
    "metrics": MetricConfig,
}


def _freeze(v):
    return tuple(_freeze(x) for x in v) if isinstance(v, list) else v


def _build(cls, values, section):
    if not isinstance(values, dict):
        raise ConfigError(f"section {section!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
    values = {k: _freeze(v) for k, v in values.items()}
    try:
        return cls(**values)
    except AdaptGuideError as exc:
        raise ConfigError(f"{section}: {exc}") from exc
    except TypeError as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def config_from_dict(doc, base_dir=None):
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    kwargs = {}
    known = {f.name for f in fields(CampaignConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    for key, value in doc.items():
        if key in _SECTIONS:
            kwargs[key] = _build(_SECTIONS[key], value, key)
        else:
            kwargs[key] = value
    cfg = CampaignConfig(**kwargs)
    if base_dir is not None and cfg.structure and not Path(cfg.structure).is_absolute():
        cfg.structure = str(Path(base_dir) / cfg.structure)
    return cfg


def load_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno) from exc
    return config_from_dict(doc, base_dir=path.parent)
