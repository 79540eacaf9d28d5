"""Config-driven experiment runs: the method x multi x features grid and the
end-to-end pipeline (cohort -> model -> embeddings -> clusters -> projection
-> utilization profiles).

All randomness comes from one master seed through named child seeds, so any
stage can be rerun on its own and produce the same bytes.
"""
import dataclasses
import hashlib
import json
import os
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import baselines, clustering, dataset, lstm, profiling, projection
from .errors import (ConfigError, DegradeNetError, InvalidInputError, NumericalFailureError,
                     SingularSystemError, SpecError, TrainingDivergedError)
from .numerics import child_seed, make_rng

CELL_TOKENS = ("R00", "R01", "R10", "R11", "L00", "L01", "L10", "L11")
METHODS = {"R": "regression", "L": "lstm"}
PROJECTIONS = ("pca", "tsne")
SEED_NAMES = ("data", "split", "init", "shuffle", "kmeans", "tsne")

# Small network, short schedule and next-wave loss at every step: the preset
# the grid experiments are tuned for (see README).
GRID_TRAIN_DEFAULTS = {
    "hidden_dim": 4,
    "learning_rate": 3e-3,
    "epochs": 60,
    "batch_size": 32,
    "loss_steps": "all",
}
_CELL_OWNED = ("seed", "shuffle_seed", "multi", "use_features")


@dataclass(frozen=True)
class GridCell:
    method: str      # "regression" | "lstm"
    multi: bool
    features: bool

    @classmethod
    def parse(cls, token):
        t = token.strip().upper()
        if len(t) != 3 or t[0] not in METHODS or t[1] not in "01" or t[2] not in "01":
            raise ConfigError(f"bad grid cell {token!r}; expected e.g. R00 or L11 "
                              "(method R/L, multi 0/1, features 0/1)")
        return cls(METHODS[t[0]], t[1] == "1", t[2] == "1")

    @property
    def token(self):
        return f"{self.method[0].upper()}{int(self.multi)}{int(self.features)}"

    def target_groups(self):
        """One model for both scores when multi, else one model per score."""
        return [dataset.DYNAMIC_FEATURES] if self.multi else [(f,) for f in dataset.DYNAMIC_FEATURES]


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def _replace_strict(obj, overrides, what):
    names = {f.name for f in dataclasses.fields(obj)}
    unknown = sorted(set(overrides) - names)
    if unknown:
        raise ConfigError(f"unknown {what} field(s): {', '.join(unknown)}")
    try:
        return dataclasses.replace(obj, **overrides)
    except TypeError as exc:
        raise ConfigError(f"bad {what}: {exc}") from None


def synthetic_spec_from_dict(doc, seed):
    """Build a SyntheticSpec from JSON overrides of the defaults.

    ``subpopulations`` entries override the default groups position by
    position (extra entries must be complete); ``link``, ``coupling`` and
    ``aging`` take partial dicts or null; ``events`` is a list of dicts.
    """
    doc = dict(doc)
    base = dataset.SyntheticSpec(seed=seed)
    if "subpopulations" in doc:
        subs = []
        for i, sub in enumerate(doc.pop("subpopulations")):
            if i < len(base.subpopulations):
                subs.append(_replace_strict(base.subpopulations[i], sub, "subpopulation"))
            else:
                try:
                    subs.append(dataset.Subpopulation(**sub))
                except TypeError as exc:
                    raise ConfigError(f"subpopulation {i}: {exc}") from None
        doc["subpopulations"] = tuple(subs)
    for key, cls in (("link", dataset.UtilizationLink), ("coupling", dataset.CognitiveCoupling),
                     ("aging", dataset.AgeAcceleration)):
        if key in doc and doc[key] is not None:
            doc[key] = _replace_strict(cls(), doc[key], key)
    if "events" in doc:
        doc["events"] = tuple(_replace_strict(dataset.AcuteEvents(), e, "event") for e in doc["events"])
    if "mixing_weights" in doc:
        doc["mixing_weights"] = tuple(doc["mixing_weights"])
    spec = _replace_strict(base, doc, "synthetic spec")
    spec.validate()
    return spec


@dataclass
class ExperimentConfig:
    master_seed: int = 0
    # {"source": "synthetic", "spec": {...}} or {"source": "csv", "path": "..."}
    data: dict = field(default_factory=lambda: {"source": "synthetic", "spec": {}})
    test_fraction: float = 0.2
    train: dict = field(default_factory=lambda: dict(GRID_TRAIN_DEFAULTS))
    # independently initialised trainings per LSTM cell; the cell reports the median
    replicates: int = 3
    cells: tuple = CELL_TOKENS
    ridge_lambda: float = baselines.DEFAULT_LAMBDA
    # the cell the pipeline trains and embeds with
    pipeline_cell: str = "L11"
    k_range: tuple = (2, 8)
    kmeans_restarts: int = clustering.DEFAULT_RESTARTS
    projection: str = "tsne"
    tsne: dict = field(default_factory=dict)
    bin_width: int = profiling.DEFAULT_BIN_WIDTH
    out: str = "runs/default"

    @classmethod
    def from_dict(cls, doc):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - names)
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
        doc = dict(doc)
        if "train" in doc:
            doc["train"] = {**GRID_TRAIN_DEFAULTS, **doc["train"]}
        for key in ("cells", "k_range"):
            if key in doc:
                doc[key] = tuple(doc[key])
        cfg = cls(**doc)
        cfg.validate()
        return cfg

    @classmethod
    def from_json_file(cls, path):
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
        return cls.from_dict(doc)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["cells"] = list(self.cells)
        d["k_range"] = list(self.k_range)
        return d

    def digest(self):
        """sha256 of the canonical config, leaving out where results are written."""
        d = self.to_dict()
        d.pop("out")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def grid_cells(self):
        cells = [GridCell.parse(t) for t in self.cells]
        if len({c.token for c in cells}) != len(cells):
            raise ConfigError("grid cells must not repeat")
        return cells

    def train_config(self, cell, seed, shuffle_seed):
        try:
            cfg = lstm.TrainConfig(**self.train, seed=seed, shuffle_seed=shuffle_seed,
                                   multi=cell.multi, use_features=cell.features)
            cfg.validate()
        except (TypeError, InvalidInputError) as exc:
            raise ConfigError(f"bad train settings: {exc}") from None
        return cfg

    def tsne_config(self):
        try:
            cfg = projection.TsneConfig(**{**self.tsne, "seed": child_seed(self.master_seed, "tsne")})
            cfg.validate()
        except (TypeError, InvalidInputError) as exc:
            raise ConfigError(f"bad tsne settings: {exc}") from None
        return cfg

    def validate(self):
        if not isinstance(self.master_seed, int) or not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed must be a non-negative 64-bit integer")
        source = self.data.get("source")
        if source == "csv":
            if not self.data.get("path"):
                raise ConfigError("csv data source needs a path")
        elif source == "synthetic":
            try:
                synthetic_spec_from_dict(self.data.get("spec", {}), 1)
            except SpecError as exc:
                raise ConfigError(f"synthetic spec: {exc}") from None
        else:
            raise ConfigError(f"data.source must be 'synthetic' or 'csv', got {source!r}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction must lie in (0, 1)")
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if not self.cells:
            raise ConfigError("at least one grid cell is required")
        self.grid_cells()
        GridCell.parse(self.pipeline_cell)
        unknown = sorted(set(self.train) - {f.name for f in dataclasses.fields(lstm.TrainConfig)})
        if unknown:
            raise ConfigError(f"unknown train field(s): {', '.join(unknown)}")
        owned = sorted(set(self.train) & set(_CELL_OWNED))
        if owned:
            raise ConfigError(f"train.{owned[0]} is set per cell from the grid and seeds")
        self.train_config(GridCell("lstm", True, True), 0, 0)
        if len(self.k_range) != 2 or not 2 <= self.k_range[0] <= self.k_range[1]:
            raise ConfigError(f"k_range must be [A, B] with 2 <= A <= B, got {list(self.k_range)}")
        if self.kmeans_restarts < 1:
            raise ConfigError("kmeans_restarts must be >= 1")
        if self.projection not in PROJECTIONS:
            raise ConfigError(f"projection must be one of {PROJECTIONS}")
        self.tsne_config()
        if self.bin_width < 1:
            raise ConfigError("bin_width must be >= 1")


def seeds_for(master_seed):
    return {name: child_seed(master_seed, name) for name in SEED_NAMES}


def load_cohort(config):
    if config.data["source"] == "csv":
        return dataset.load_cohort_csv(config.data["path"])
    spec_doc = dict(config.data.get("spec", {}))
    # a pinned spec seed fixes the cohort across master seeds
    seed = spec_doc.pop("seed", child_seed(config.master_seed, "data"))
    return dataset.generate_synthetic_cohort(synthetic_spec_from_dict(spec_doc, seed))


def split_digest(train, test):
    h = hashlib.sha256()
    h.update(("train:" + ",".join(train.ids) + "\ntest:" + ",".join(test.ids)).encode())
    return h.hexdigest()


@dataclass
class PreparedData:
    cohort: object
    train: object       # Cohort
    test: object
    train_t: object     # CohortTensors, z-scored with training statistics
    test_t: object
    stats: object
    digest: str


def prepare(config):
    cohort = load_cohort(config)
    train, test = dataset.split(cohort, config.test_fraction, make_rng(child_seed(config.master_seed, "split")))
    train_t, stats = dataset.normalize(train)
    test_t, _ = dataset.normalize(test, stats)
    return PreparedData(cohort, train, test, train_t, test_t, stats, split_digest(train, test))


# ---------------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------------

@dataclass
class MetricsReport:
    rows: list
    master_seed: int
    seeds: dict
    config_digest: str
    split_digest: str
    n_train: int
    n_test: int

    def row(self, token):
        for r in self.rows:
            if r["cell"] == token:
                return r
        raise KeyError(token)

    def best_cell(self, target="adl"):
        ok = [r for r in self.rows if r["status"] == "ok" and r[f"mse_{target}"] is not None]
        return min(ok, key=lambda r: r[f"mse_{target}"])["cell"] if ok else None

    def to_dict(self, timings=True):
        rows = self.rows if timings else [{k: v for k, v in r.items() if k != "train_seconds"}
                                          for r in self.rows]
        return {"rows": rows, "master_seed": self.master_seed, "seeds": self.seeds,
                "config_digest": self.config_digest, "split_digest": self.split_digest,
                "n_train": self.n_train, "n_test": self.n_test}

    def to_json(self, timings=True):
        return json.dumps(self.to_dict(timings), indent=2)

    def to_csv_text(self):
        lines = ["cell,method,multi,features,mse_adl,mse_cog,train_seconds,status"]
        for r in self.rows:
            mse = ["" if r[k] is None else repr(r[k]) for k in ("mse_adl", "mse_cog")]
            lines.append(",".join([r["cell"], r["method"], str(r["multi"]).lower(),
                                   str(r["features"]).lower(), *mse,
                                   f"{r['train_seconds']:.3f}", r["status"]]))
        return "\n".join(lines) + "\n"


def _mse(pred, truth):
    return float(np.mean((np.asarray(pred) - np.asarray(truth)) ** 2))


def fit_cell(config, data, cell, targets, replicate=0):
    """Train one model of a grid cell; returns the fitted model and its raw-unit test predictions."""
    if cell.method == "regression":
        model = baselines.fit_baseline(data.train_t, baselines.DesignSpec(cell.multi, cell.features),
                                       targets, config.ridge_lambda)
        return model, baselines.predict_baseline(model, data.test_t)
    name = f"{cell.token}/{'+'.join(targets)}/{replicate}"
    seed = child_seed(child_seed(config.master_seed, "init"), name)
    shuffle = child_seed(child_seed(config.master_seed, "shuffle"), name)
    params, _ = lstm.train(data.train_t, config.train_config(cell, seed, shuffle), targets)
    return params, lstm.predict_cohort(params, data.test_t)


def run_cell(config, data, cell):
    truth = {f: np.array([t.scores()[-1, i] for t in data.test.trajectories])
             for i, f in enumerate(dataset.DYNAMIC_FEATURES)}
    replicates = 1 if cell.method == "regression" else config.replicates
    row = {"cell": cell.token, "method": cell.method, "multi": cell.multi, "features": cell.features,
           "mse_adl": None, "mse_cog": None, "replicates": replicates,
           "replicate_mse_adl": [], "replicate_mse_cog": [], "status": "ok", "error": None}
    t0 = time.perf_counter()
    try:
        for targets in cell.target_groups():
            for r in range(replicates):
                _, pred = fit_cell(config, data, cell, targets, r)
                for j, f in enumerate(targets):
                    row[f"replicate_mse_{f}"].append(_mse(pred[:, j], truth[f]))
        for f in dataset.DYNAMIC_FEATURES:
            row[f"mse_{f}"] = float(np.median(row[f"replicate_mse_{f}"]))
    except (TrainingDivergedError, NumericalFailureError, SingularSystemError) as exc:
        row.update(status="failed", error=str(exc), mse_adl=None, mse_cog=None)
    row["train_seconds"] = time.perf_counter() - t0
    return row


def run_grid(config, data=None, progress=None):
    """Every requested cell on one shared split. A diverging cell is marked failed."""
    config.validate()
    data = data or prepare(config)
    rows = []
    for cell in config.grid_cells():
        rows.append(run_cell(config, data, cell))
        if progress is not None:
            progress(rows[-1])
    return MetricsReport(rows, config.master_seed, seeds_for(config.master_seed), config.digest(),
                         data.digest, len(data.train), len(data.test))


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

STAGES = ("generate", "normalize", "train", "embed", "cluster", "project", "profile")
STAGE_FILES = {
    "generate": "cohort.csv",
    "normalize": "normalization.json",
    "train": "model.json",
    "embed": "embeddings.csv",
    "cluster": "assignments.csv",
    "project": "coordinates.csv",
    "profile": "profiles.csv",
}


def _sha256(text):
    return hashlib.sha256(text.encode()).hexdigest()


class _Bundle:
    """Writes stage outputs and keeps the manifest in step with them."""

    def __init__(self, config):
        self.out = config.out
        try:
            os.makedirs(self.out, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory {self.out}: {exc.strerror}") from None
        if not os.access(self.out, os.W_OK):
            raise ConfigError(f"output directory {self.out} is not writable")
        self.manifest = {"master_seed": config.master_seed, "config_digest": config.digest(),
                         "seeds": seeds_for(config.master_seed), "stages": [], "status": "running"}

    def write(self, name, text):
        with open(os.path.join(self.out, name), "w", newline="") as fh:
            fh.write(text)
        return _sha256(text)

    def stage(self, stage, text):
        digest = self.write(STAGE_FILES[stage], text)
        self.manifest["stages"].append({"stage": stage, "file": STAGE_FILES[stage], "sha256": digest})

    def finish(self, status, error=None):
        self.manifest["status"] = status
        if error is not None:
            self.manifest["error"] = error
        self.write("manifest.json", json.dumps(self.manifest, indent=2) + "\n")


@dataclass
class PipelineResult:
    out: str
    manifest: dict
    report: dict
    cohort: object = None
    params: object = None
    embeddings: object = None
    selection: object = None
    coords: object = None


def _profile_rows(cohort, assignments, width):
    table = profiling.WaveTable.from_cohort(cohort)
    out, summary = [], {}
    with warnings.catch_warnings():
        # empty score bins are routine on small cohorts; they are simply absent
        warnings.simplefilter("ignore", profiling.EmptyGroupWarning)
        for grouping in ("cluster", "adl_bin", "cog_bin"):
            for fld in profiling.UTILIZATION_FIELDS:
                profs = profiling.occurrence_ratio(table, grouping, fld, width, assignments)
                out.append((grouping, profs))
                summary[f"{grouping}/{fld}"] = {p.label: p.ratio for p in profs}
    return out, summary


def _profiles_csv(groups):
    lines = []
    for i, (grouping, profs) in enumerate(groups):
        text = profiling.profiles_to_csv_text(profs).splitlines()
        if i == 0:
            lines.append("grouping," + text[0])
        lines.extend(f"{grouping},{line}" for line in text[1:])
    return "\n".join(lines) + "\n"


def run_pipeline(config, stop_after="profile"):
    """Run the stages up to ``stop_after`` and write each output plus a manifest.

    The manifest (``manifest.json``) lists every completed stage with the
    sha256 of its file; it holds no timings or absolute paths, so reruns with
    the same config and master seed reproduce it byte for byte. On failure
    the manifest records the completed stages and the error, then the
    exception propagates.
    """
    config.validate()
    if stop_after not in STAGES:
        raise ConfigError(f"unknown stage {stop_after!r}")
    last = STAGES.index(stop_after)
    bundle = _Bundle(config)
    report = {"master_seed": config.master_seed, "config_digest": config.digest()}
    result = PipelineResult(config.out, bundle.manifest, report)
    stage = STAGES[0]
    try:
        data = prepare(config)
        result.cohort = data.cohort
        bundle.stage("generate", dataset.cohort_to_csv_text(data.cohort))
        report["cohort"] = {"participants": len(data.cohort), "waves": data.cohort.n_waves(),
                            "n_train": len(data.train), "n_test": len(data.test),
                            "split_digest": data.digest}
        desc = profiling.descriptive_stats(data.cohort)
        report["descriptive"] = {"numeric": desc.numeric, "categorical": desc.categorical}
        if last >= 1:
            stage = "normalize"
            bundle.stage("normalize", data.stats.to_json() + "\n")
        if last >= 2:
            stage = "train"
            cell = GridCell.parse(config.pipeline_cell)
            if cell.method != "lstm" or not cell.multi:
                raise ConfigError("pipeline_cell must be a multi-output LSTM cell (L10 or L11)")
            params, pred = fit_cell(config, data, cell, dataset.DYNAMIC_FEATURES)
            result.params = params
            truth = np.stack([t.scores()[-1] for t in data.test.trajectories])
            report["model"] = {"cell": cell.token, "hidden_dim": params.hidden_dim,
                               "mse_adl": _mse(pred[:, 0], truth[:, 0]),
                               "mse_cog": _mse(pred[:, 1], truth[:, 1])}
            bundle.stage("train", params.to_json() + "\n")
        if last >= 3:
            stage = "embed"
            full, _ = dataset.normalize(data.cohort, data.stats)
            emb = lstm.extract_embeddings(result.params, full)
            result.embeddings = emb
            bundle.stage("embed", emb.to_csv_text())
        if last >= 4:
            stage = "cluster"
            k_lo, k_hi = config.k_range
            k_hi = min(k_hi, len(emb) - 1)
            rng = make_rng(child_seed(config.master_seed, "kmeans"))
            sel = clustering.select_k(emb, k_lo, k_hi, rng, config.kmeans_restarts)
            result.selection = sel
            model = sel.models[sel.chosen_k]
            sel_doc = json.loads(sel.to_json())
            planted = data.cohort.planted
            if planted is not None:
                sel_doc["ari_vs_planted"] = clustering.adjusted_rand_index(model.assignments, planted)
            sel_doc["sizes"] = np.bincount(model.assignments, minlength=model.k).tolist()
            report["clustering"] = sel_doc
            bundle.stage("cluster", clustering.assignments_to_csv_text(emb.ids, model.assignments))
        if last >= 5:
            stage = "project"
            if config.projection == "pca":
                proj = projection.pca_2d(emb)
                diag = {"explained_variance_ratio": proj.diagnostics["explained_variance_ratio"]}
            else:
                proj = projection.tsne_2d(emb, config.tsne_config())
                d = proj.diagnostics
                diag = {"kl_initial": d["kl_initial"], "kl_final": d["kl_final"],
                        "perplexity": d["perplexity"], "iterations": d["iterations"]}
            result.coords = proj.coords
            report["projection"] = {"method": proj.method, **diag}
            bundle.stage("project", projection.coordinates_to_csv_text(
                emb.ids, proj.coords, model.assignments, data.cohort.planted))
        if last >= 6:
            stage = "profile"
            groups, summary = _profile_rows(data.cohort, model.assignments, config.bin_width)
            report["profiles"] = summary
            bundle.stage("profile", _profiles_csv(groups))
    except (DegradeNetError, OSError) as exc:
        bundle.manifest["failed_stage"] = stage
        report["status"] = "failed"
        bundle.write("report.json", json.dumps(report, indent=2) + "\n")
        bundle.finish("failed", f"{type(exc).__name__}: {exc}")
        raise
    report["status"] = "ok"
    report_digest = bundle.write("report.json", json.dumps(report, indent=2) + "\n")
    bundle.manifest["report_sha256"] = report_digest
    bundle.finish("ok")
    return result
