"""Command-line front end.

Subcommands::

    stabsel gen        --config synth.json --out DIR
    stabsel parcellate --config parcellate.json --out DIR
    stabsel study      --config study.json --out DIR
    stabsel infer      --config infer.json --out DIR
    stabsel report     --out DIR

Every command takes ``--seed`` (overrides the config's ``seed``) and
``--jobs``; all randomness derives from the seed. Each output directory
gets one ``run_manifest.json``. Relative paths in a config resolve against
the config file's directory. Verbosity follows the ``STABSEL_LOG`` variable.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .ale import AleParams
from .exceptions import ConfigError, IoError, StabselError
from .inference import write_report_json, write_table2
from .parcellation import build_tree, cut, save_parcellation
from .synth import SynthConfig
from .transfer import CVConfig, FeatureSpace, run_study, screening_study
from .volume import ContrastImage, adjacency, read_dataset, write_dataset, write_volume

logger = logging.getLogger("stabsel")

MANIFEST = "run_manifest.json"


class Run:
    """Per-command context: config, seed, output directory and artifact list."""

    def __init__(self, args):
        self.command = args.command
        self.jobs = args.jobs
        self.out = Path(args.out)
        self.config_path = Path(args.config) if getattr(args, "config", None) else None
        self.config = {}
        self.config_hash = None
        if self.config_path is not None:
            raw = _read_bytes(self.config_path)
            self.config_hash = hashlib.sha256(raw).hexdigest()
            try:
                self.config = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{self.config_path}: invalid JSON ({exc.msg})") from exc
            if not isinstance(self.config, dict):
                raise ConfigError(f"{self.config_path}: config must be a JSON object")
        self.seed = args.seed if args.seed is not None else int(self.config.get("seed", 0))
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        self.artifacts = []
        self.start = time.monotonic()
        try:
            self.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise IoError(f"cannot create output directory {self.out}: {exc.strerror}") from exc

    def path(self, key):
        value = self.config.get(key)
        if value is None:
            raise ConfigError(f"missing required field '{key}'")
        return self.resolve(value)

    def resolve(self, value):
        p = Path(value)
        if not p.is_absolute() and self.config_path is not None:
            p = self.config_path.parent / p
        return p

    def artifact(self, rel):
        self.artifacts.append(str(rel))
        return self.out / rel

    def finish(self):
        for rel in self.artifacts:
            if not (self.out / rel).exists():
                raise IoError(f"artifact {rel} was not written")
        manifest = {"command": self.command, "config_sha256": self.config_hash,
                    "seed": self.seed, "artifacts": sorted(set(self.artifacts)),
                    "version": __version__,
                    "wall_time_s": round(time.monotonic() - self.start, 3)}
        (self.out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _read_bytes(path):
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror}") from exc


def _synth(run, block):
    if not isinstance(block, dict):
        raise ConfigError("field 'synth' must be a JSON object")
    return SynthConfig.from_dict(block)


def _generated(run, synth):
    space, rt, tt, ref, tgt = synth.generate(run.seed)
    data = {"reference": ref, "target": tgt}
    for i, d in enumerate(synth.generate_database(space, rt, tt, run.seed)):
        data[f"database_{i}"] = d
    return data, (rt, tt)


def _load_datasets(run):
    """Datasets from a ``synth`` block or from ``datasets`` manifest paths."""
    if "synth" in run.config:
        data, _ = _generated(run, _synth(run, run.config["synth"]))
        return data
    entries = run.config.get("datasets")
    if not isinstance(entries, dict) or not entries:
        raise ConfigError("missing required field 'datasets' (or 'synth')")
    return {name: read_dataset(run.resolve(p)) for name, p in sorted(entries.items())}


# --- commands ---------------------------------------------------------------

def cmd_gen(run):
    synth = _synth(run, run.config)
    data, (rt, tt) = _generated(run, synth)
    for name, d in data.items():
        write_dataset(d, run.out / name)
        run.artifact(f"{name}/manifest.json")
        run.artifacts += [f"{name}/mask.vol1"] + [f"{name}/volumes/{s}.vol1" for s in d.sample_ids]
    truth = {"reference_support": rt.support.tolist(), "target_support": tt.support.tolist(),
             "shared_fraction": tt.shared_fraction}
    run.artifact("truth.json").write_text(json.dumps(truth) + "\n")


def cmd_parcellate(run):
    if "datasets" not in run.config and "synth" not in run.config:
        raise ConfigError("missing required field 'datasets'")
    if "K" not in run.config:
        raise ConfigError("missing required field 'K'")
    data = _load_datasets(run)
    names = run.config.get("use", sorted(data))
    sets = [data[n] for n in names]
    space = sets[0].space
    X = np.vstack([d.X for d in sets])
    tree = build_tree(X, adjacency(space))
    parcels = cut(tree, int(run.config["K"]))
    save_parcellation(parcels, space, run.artifact("parcels.vol1"), tree)
    run.artifact("parcels.vol1.json")


def _spaces(cfg):
    specs = cfg.get("spaces", [{"kind": "raw"}])
    out = []
    for s in specs:
        if not isinstance(s, dict) or "kind" not in s:
            raise ConfigError("each entry of 'spaces' needs a 'kind'")
        ale = AleParams(**s.get("ale", {}))
        out.append(FeatureSpace(s["kind"], s.get("K"), ale))
    return out


def cmd_study(run):
    cfg = run.config
    data = _load_datasets(run)
    pairs = cfg.get("pairs", [["reference", "target"]] if "synth" in cfg else None)
    if not pairs:
        raise ConfigError("missing required field 'pairs'")
    cv = CVConfig(**cfg.get("cv", {}))
    report = run_study(data, [tuple(p) for p in pairs], _spaces(cfg), run.seed, cv,
                       cfg.get("meta_datasets"), n_jobs=run.jobs)
    report.write_csv(run.artifact("table1.csv"))
    report.write_summary(run.artifact("fig1_summary.json"))


def cmd_infer(run):
    cfg = run.config
    data = _load_datasets(run)
    ref = data[cfg.get("reference", "reference")]
    tgt = data[cfg.get("target", "target")]
    if "K" not in cfg:
        raise ConfigError("missing required field 'K'")
    tau = float(cfg.get("tau", 0.01))
    cohorts = [int(c) for c in cfg.get("cohort_sizes", [10, 20, 40])]
    res = screening_study(ref, tgt, int(cfg["K"]), tau, cohorts, float(cfg.get("q", 0.05)),
                          run.seed, cfg.get("stability"), n_jobs=run.jobs)
    write_table2(res.rows, run.artifact("table2.csv"))
    write_report_json(res.rows, run.artifact("report.json"),
                      {"tau": tau, "n_selected": int(res.selection.size),
                       "n_anova": int(res.anova_selection.size), "n_voxels": ref.p})
    for n_star, reports in sorted(res.rows.items()):
        for arm, rep in reports.items():
            rep.write_qq_csv(run.artifact(f"qq_n{n_star}_{arm}.csv"))
            rep.write_stats_csv(run.artifact(f"stats_n{n_star}_{arm}.csv"))
    write_volume(ContrastImage(ref.space, res.voxel_frequencies), run.artifact("stability_map.vol1"))
    run.artifact("profile.json").write_text(res.profile.to_json() + "\n")


def cmd_report(run):
    path = run.out / MANIFEST
    if not path.exists():
        raise IoError(f"no {MANIFEST} in {run.out}")
    manifest = json.loads(path.read_text())
    missing = [a for a in manifest["artifacts"] if not (run.out / a).exists()]
    if missing:
        raise IoError(f"{len(missing)} listed artifacts are missing, first: {missing[0]}")
    print(f"{manifest['command']} seed={manifest['seed']} artifacts={len(manifest['artifacts'])}")
    for name in ("table1.csv", "table2.csv"):
        if (run.out / name).exists():
            print((run.out / name).read_text(), end="")


COMMANDS = {"gen": cmd_gen, "parcellate": cmd_parcellate, "study": cmd_study,
            "infer": cmd_infer, "report": cmd_report}


def build_parser():
    parser = argparse.ArgumentParser(prog="stabsel", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        if name != "report":
            p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--out", required=True, help="output directory")
    return parser


def _setup_logging():
    level = os.environ.get("STABSEL_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        run = Run(args)
        if run.command == "report":
            cmd_report(run)
            return 0
        COMMANDS[run.command](run)
        run.finish()
    except StabselError as exc:
        print(f"stabsel: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except KeyError as exc:
        print(f"stabsel: error: ConfigError: unknown dataset {exc}", file=sys.stderr)
        return 1
    except (TypeError, ValueError) as exc:
        print(f"stabsel: error: ConfigError: {exc}".replace("\n", " "), file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"stabsel: error: IoError: {exc}".replace("\n", " "), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
