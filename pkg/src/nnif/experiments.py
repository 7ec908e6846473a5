"""Detection, feature ablation, cross-attack generalisation and white-box experiments."""
from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .detector import DetectorModel, build_matrix, fit_detector, tune_m
from .metrics import detection_accuracy, roc_auc, roc_curve
from .neighbors import KINDS, FeatureSet

log = logging.getLogger(__name__)

# (normal, adversarial) features of the same source examples, row for row
Pair = tuple[FeatureSet, FeatureSet]

ABLATION_SUBSETS = tuple(c for r in range(1, 5) for c in itertools.combinations(KINDS, r))


class ExperimentError(ValueError):
    pass


def subset_name(kinds: Sequence[str]) -> str:
    return "+".join(kinds)


def _matrix(pair: Pair, kinds=KINDS, layers=None, m=None):
    normal, adv = pair
    x, y = build_matrix(normal, adv, kinds, layers, m)
    groups = np.r_[normal.indices, adv.indices]
    return x, y, groups


def fit_tuned(pair: Pair, kinds, layers, m_grid: Sequence[int], folds: int = 5, l2: float = 1.0,
              seed: int = 0, **meta) -> DetectorModel:
    """Choose ``M`` by grouped cross-validation on ``pair`` and refit on all of it."""
    normal, _ = pair
    grid = sorted({m for m in m_grid if m <= normal.m})
    if not grid:
        raise ExperimentError(f"no M in {list(m_grid)} fits features with M={normal.m}")
    candidates = {m: _matrix(pair, kinds, layers, m) for m in grid}
    n_groups = np.unique(candidates[grid[0]][2]).size
    best, cv = tune_m(candidates, n_folds=min(folds, n_groups), seed=seed, l2=l2)
    det = fit_detector(*pair, kinds=kinds, layers=layers, m=best, l2=l2, seed=seed, **meta)
    det.meta["cv_auc"] = {str(m): v for m, v in cv.items()}
    return det


def evaluate(det: DetectorModel, pair: Pair, threshold: float = 0.5) -> dict:
    x, y = build_matrix(*pair, det.kinds, det.layers, det.m)
    prob = det.predict_proba(x)
    return {"auc": roc_auc(prob, y), "accuracy": detection_accuracy(prob, y, threshold), "n": len(y),
            "scores": prob, "labels": y}


def layer_modes(n_hidden: int, mode: str) -> dict[str, tuple[int, ...]]:
    """``embedding`` uses the last hidden layer; ``all`` adds a detector over every hidden layer."""
    modes = {"embedding": (n_hidden - 1,)}
    if mode == "all":
        modes["all"] = tuple(range(n_hidden))
    return modes


@dataclass
class DetectorSuite:
    """Every detector one seed needs, keyed by a short name."""

    detectors: dict[str, DetectorModel] = field(default_factory=dict)

    def __getitem__(self, key: str) -> DetectorModel:
        try:
            return self.detectors[key]
        except KeyError:
            raise ExperimentError(f"no detector named {key!r}") from None


def fit_all(val: Mapping[str, Pair], n_hidden: int, *, modes: str = "all", m_grid=(5, 10, 20, 40),
            folds: int = 5, l2: float = 1.0, seed: int = 0, ablation_attack: str | None = None,
            whitebox_m: int | None = None) -> DetectorSuite:
    """Fit the per-attack detectors (each layer mode), the ablation detectors and the white-box pair."""
    suite = DetectorSuite()
    emb = (n_hidden - 1,)
    for attack, pair in val.items():
        for mode, layers in layer_modes(n_hidden, modes).items():
            suite.detectors[f"{attack}/{mode}"] = fit_tuned(pair, KINDS, layers, m_grid, folds, l2, seed,
                                                           attack=attack, mode=mode)
            log.info("fit %s/%s detector (M=%s)", attack, mode, suite.detectors[f"{attack}/{mode}"].m)
    if ablation_attack is not None:
        m = suite[f"{ablation_attack}/embedding"].m
        for kinds in ABLATION_SUBSETS:
            suite.detectors[f"ablation/{subset_name(kinds)}"] = fit_detector(
                *val[ablation_attack], kinds=kinds, layers=emb, m=m, l2=l2, seed=seed, attack=ablation_attack)
    if whitebox_m is not None:
        for label, kinds in (("helpful", ("Rup", "Dup")), ("Dup", ("Dup",))):
            suite.detectors[f"whitebox/{label}"] = fit_detector(*val["cw"], kinds=kinds, layers=emb,
                                                                m=whitebox_m, l2=l2, seed=seed, attack="cw")
    return suite


def run_detection(suite: DetectorSuite, test: Mapping[str, Pair], attacks: Sequence[str], n_hidden: int,
                  modes: str = "all", threshold: float = 0.5) -> list[dict]:
    rows = []
    for attack in attacks:
        for mode in layer_modes(n_hidden, modes):
            det = suite[f"{attack}/{mode}"]
            res = evaluate(det, test[attack], threshold)
            fpr, tpr = roc_curve(res["scores"], res["labels"])
            rows.append({"attack": attack, "mode": mode, "m": det.m, "n": res["n"], "auc": res["auc"],
                         "accuracy": res["accuracy"], "fpr": fpr, "tpr": tpr})
    return rows


def run_ablation(suite: DetectorSuite, pair: Pair, attack: str, threshold: float = 0.5) -> list[dict]:
    """One row per non-empty subset of the four feature kinds, embedding layer only."""
    rows = []
    for kinds in ABLATION_SUBSETS:
        det = suite[f"ablation/{subset_name(kinds)}"]
        res = evaluate(det, pair, threshold)
        rows.append({"attack": attack, "features": subset_name(kinds), "m": det.m, "auc": res["auc"],
                     "accuracy": res["accuracy"]})
    return rows


def ablation_flags(rows: Sequence[dict], tolerance: float = 0.05) -> dict:
    auc = {r["features"]: r["auc"] for r in rows}
    singles = {k: auc[k] for k in KINDS}
    gap = auc[subset_name(KINDS)] - auc["Dup"]
    return {"dup_gap": gap, "dup_within_tolerance": abs(gap) <= tolerance,
            "rdn_weakest": min(singles, key=lambda k: (singles[k], KINDS.index(k))) == "Rdn"}


def run_generalization(det: DetectorModel, test: Mapping[str, Pair], source: str, attacks: Sequence[str],
                       threshold: float = 0.5) -> list[dict]:
    """A detector fit on ``source`` features, scored on every attack's test features."""
    rows = []
    for attack in attacks:
        res = evaluate(det, test[attack], threshold)
        rows.append({"source": source, "target": attack, "auc": res["auc"], "accuracy": res["accuracy"]})
    return rows


def align_pairs(a: Pair, b: Pair) -> tuple[Pair, Pair]:
    """Restrict two pairs to the source examples both contain, in a common order."""
    common = np.intersect1d(a[0].indices, b[0].indices)
    if common.size == 0:
        raise ExperimentError("no test example is shared by both attacks")

    def pick(pair: Pair) -> Pair:
        where = {int(i): k for k, i in enumerate(pair[0].indices)}
        pos = np.array([where[int(i)] for i in common])
        return tuple(FeatureSet(fs.values[pos], fs.layers, fs.labels[pos], fs.indices[pos]) for fs in pair)

    return pick(a), pick(b)


def run_whitebox(suite: DetectorSuite, cw_pair: Pair, opt_pair: Pair, threshold: float = 0.5) -> list[dict]:
    """Detection accuracy on the same test points under vanilla CW and under the embedding-aware attack."""
    cw_pair, opt_pair = align_pairs(cw_pair, opt_pair)
    rows = []
    for label in ("helpful", "Dup"):
        det = suite[f"whitebox/{label}"]
        rows.append({"features": subset_name(det.kinds), "m": det.m, "n": len(cw_pair[0]),
                     "cw_accuracy": evaluate(det, cw_pair, threshold)["accuracy"],
                     "cw_opt_accuracy": evaluate(det, opt_pair, threshold)["accuracy"]})
    return rows


# ---- report emission ----

def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_table(path, rows: Sequence[dict], columns: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def write_roc(path, fpr, tpr) -> None:
    write_table(path, [{"fpr": f, "tpr": t} for f, t in zip(fpr, tpr)], ["fpr", "tpr"])


def _spread(values) -> str:
    v = np.asarray(values, dtype=np.float64)
    if np.all(v == np.round(v)):
        return f"{v.mean():g}" if v.min() == v.max() else f"{v.mean():g} [{v.min():g}, {v.max():g}]"
    if v.size == 1:
        return f"{v[0]:.4f}"
    return f"{v.mean():.4f} [{v.min():.4f}, {v.max():.4f}]"


def _grouped(rows, keys, metrics):
    out = {}
    for row in rows:
        out.setdefault(tuple(row[k] for k in keys), []).append(row)
    table = []
    for key, group in out.items():
        table.append(list(key) + [_spread([g[m] for g in group]) for m in metrics])
    return table


def _md(header, body) -> list[str]:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(str(c) for c in row) + " |" for row in body]
    return lines + [""]


def summary_markdown(name: str, report: Mapping[str, list], flags: Sequence[dict], runtime: float | None = None,
                     hashes: Mapping[str, str] | None = None) -> str:
    """Markdown summary; cells show the mean and, across several seeds, the [min, max] range."""
    lines = [f"# NNIF run `{name}`", ""]
    if hashes:
        lines += [f"- {k}: `{v[:16]}`" for k, v in sorted(hashes.items())] + [""]
    if runtime is not None:
        lines += [f"Runtime: {runtime:.1f} s", ""]
    lines += ["## Clean accuracy", ""]
    lines += _md(["split", "accuracy"], _grouped(report["clean_accuracy"], ["split"], ["accuracy"]))
    lines += ["## Attack success rate", ""]
    lines += _md(["attack", "split", "success rate", "mean L2"],
                 _grouped(report["attacks"], ["attack", "split"], ["success_rate", "mean_l2"]))
    lines += ["## Detection", ""]
    lines += _md(["attack", "layers", "AUC", "accuracy", "M"],
                 _grouped(report["detection"], ["attack", "mode"], ["auc", "accuracy", "m"]))
    lines += ["## Feature ablation (embedding layer)", ""]
    lines += _md(["attack", "features", "AUC", "accuracy"],
                 _grouped(report["ablation"], ["attack", "features"], ["auc", "accuracy"]))
    for f in flags:
        lines.append(f"- seed {f['seed']}: all-features AUC minus Dup-only AUC = {f['dup_gap']:.4f} "
                     f"(within 0.05: {'yes' if f['dup_within_tolerance'] else 'no'}); "
                     f"Rdn weakest single feature: {'yes' if f['rdn_weakest'] else 'no'}")
    lines += ["", "## Generalisation from one attack", ""]
    lines += _md(["trained on", "evaluated on", "AUC", "accuracy"],
                 _grouped(report["generalization"], ["source", "target"], ["auc", "accuracy"]))
    if report.get("orientation"):
        lines += ["## Helpful/harmful orientation", ""]
        lines += _md(["seed", "setting", "inverted", "val Dup separation literal", "val Dup separation flipped"],
                     [[r["seed"], r["setting"], "yes" if r["invert_sign"] else "no",
                       f"{r['val_dup_sep_literal']:.4f}", f"{r['val_dup_sep_inverted']:.4f}"]
                      for r in report["orientation"]])
    if report.get("whitebox"):
        lines += ["## White-box attack", ""]
        lines += _md(["features", "CW accuracy", "CW-Opt accuracy", "CW-Opt lower embedding loss"],
                     _grouped(report["whitebox"], ["features"],
                              ["cw_accuracy", "cw_opt_accuracy", "lstar_lower_frac"]))
    return "\n".join(lines) + "\n"


def write_reports(out_dir, report: Mapping[str, list], flags: Sequence[dict]) -> dict[str, Path]:
    """Write every report table as CSV; returns the written paths by table name."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    columns = {
        "clean_accuracy": ["seed", "split", "accuracy"],
        "attacks": ["seed", "attack", "split", "n", "success_rate", "mean_l0", "mean_l1", "mean_l2", "mean_linf"],
        "detection": ["seed", "attack", "mode", "m", "n", "auc", "accuracy"],
        "ablation": ["seed", "attack", "features", "m", "auc", "accuracy"],
        "generalization": ["seed", "source", "target", "auc", "accuracy"],
        "whitebox": ["seed", "features", "m", "n", "cw_accuracy", "cw_opt_accuracy", "lstar_lower_frac"],
        "orientation": ["seed", "setting", "invert_sign", "val_dup_sep_literal", "val_dup_sep_inverted"],
    }
    paths = {}
    for table, cols in columns.items():
        if table in report:
            paths[table] = out / f"{table}.csv"
            write_table(paths[table], report[table], cols)
    paths["ablation_flags"] = out / "ablation_flags.csv"
    write_table(paths["ablation_flags"], flags, ["seed", "attack", "dup_gap", "dup_within_tolerance", "rdn_weakest"])
    for row in report["detection"]:
        key = f"roc_{row['attack']}_{row['mode']}_seed{row['seed']}"
        paths[key] = out / f"{key}.csv"
        write_roc(paths[key], row["fpr"], row["tpr"])
    return paths
