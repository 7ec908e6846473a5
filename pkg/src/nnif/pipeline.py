"""Cached, resumable pipeline stages over a run directory.

Every artifact is keyed by a hash of the config slice that produced it plus the
SHA-256 of each upstream file it read. A rerun rebuilds exactly the artifacts
whose key changed, or whose files went missing or were edited.
"""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
from filelock import FileLock, Timeout

from . import __version__
from . import attacks as atk
from . import data as dt
from . import experiments as ex
from . import influence as inf
from . import model as nn
from . import neighbors as nb
from .config import RunConfig, section_hash
from .detector import load_detector, save_detector
from .metrics import roc_auc

log = logging.getLogger(__name__)

STAGES = ("train", "attack", "influence", "features", "detect", "eval")
SPLITS = ("val", "test")


class PipelineError(RuntimeError):
    """A user-fixable problem: missing upstream stage, locked run directory, bad inputs."""


def file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _save_features(fs: nb.FeatureSet, path: Path) -> None:
    with open(path, "wb") as fh:
        np.savez(fh, values=fs.values, layers=np.asarray(fs.layers, dtype=np.int64), labels=fs.labels,
                 indices=fs.indices)


def _load_features(path: Path) -> nb.FeatureSet:
    with np.load(path) as z:
        return nb.FeatureSet(z["values"], tuple(int(l) for l in z["layers"]), z["labels"], z["indices"])


class Pipeline:
    def __init__(self, cfg: RunConfig, run_dir, force: Iterable[str] = ()):
        self.cfg = cfg
        self.root = Path(run_dir)
        self.force = set(force)
        bad = self.force - set(STAGES)
        if bad:
            raise PipelineError(f"unknown stage(s) to force: {sorted(bad)}")
        self.built: list[str] = []  # artifacts rebuilt by this process
        self._sha_cache: dict[tuple, str] = {}
        self._forced: set[str] = set()
        self.manifest = self._read_manifest()

    # ---- manifest and artifact bookkeeping ----

    @property
    def manifest_path(self) -> Path:
        return self.root / "manifest.json"

    def _read_manifest(self) -> dict:
        if self.manifest_path.exists():
            try:
                return json.loads(self.manifest_path.read_text())
            except json.JSONDecodeError as exc:
                raise PipelineError(f"{self.manifest_path} is corrupt: {exc}") from exc
        return {"artifacts": {}}

    def _write_manifest(self) -> None:
        m = self.manifest
        m["tool_version"] = __version__
        m["config"] = self.cfg.to_dict()
        m["seeds"] = list(self.cfg.seeds)
        m["stages"] = {s: self.stage_complete(s) for s in STAGES}
        tmp = self.manifest_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(m, indent=2, sort_keys=True) + "\n")
        tmp.replace(self.manifest_path)

    def sha(self, rel: str) -> str:
        path = self.root / rel
        st = path.stat()
        key = (rel, st.st_mtime_ns, st.st_size)
        if key not in self._sha_cache:
            self._sha_cache[key] = file_sha256(path)
        return self._sha_cache[key]

    def _valid(self, label: str, key: str) -> bool:
        entry = self.manifest["artifacts"].get(label)
        if entry is None or entry["key"] != key:
            return False
        for rel, digest in entry["files"].items():
            if not (self.root / rel).exists() or self.sha(rel) != digest:
                return False
        return True

    def _artifact(self, stage: str, label: str, key: str, files: list[str], build: Callable[[], None],
                  check_only: bool) -> None:
        forced = stage in self.force and label not in self._forced
        if not forced and self._valid(label, key):
            return
        if check_only:
            raise PipelineError(f"artifact {label} is missing or stale; run stage '{stage}' first")
        for rel in files:
            (self.root / rel).parent.mkdir(parents=True, exist_ok=True)
        start = time.perf_counter()
        log.info("building %s", label)
        build()
        self._forced.add(label)
        prev = self.manifest["artifacts"].get(label, {})
        self.manifest["artifacts"][label] = {
            "stage": stage, "key": key, "files": {rel: self.sha(rel) for rel in files},
            "builds": prev.get("builds", 0) + 1, "seconds": round(time.perf_counter() - start, 3)}
        self.built.append(label)
        self._write_manifest()

    def stage_complete(self, stage: str) -> bool:
        entries = [e for e in self.manifest["artifacts"].values() if e["stage"] == stage]
        return bool(entries) and all(all((self.root / r).exists() for r in e["files"]) for e in entries)

    # ---- shared loaders ----

    def _p(self, *parts) -> Path:
        return self.root.joinpath(*parts)

    def dataset(self, seed: int) -> dt.LabeledDataset:
        return dt.load_dataset(self._p(f"model/seed{seed}/dataset.bin"))

    def model(self, seed: int) -> nn.ModelParams:
        return nn.load_model(self._p(f"model/seed{seed}/model.bin"))

    def _curvature(self, seed: int):
        with np.load(self._p(f"model/seed{seed}/curvature.npz")) as z:
            h = z["hessian"]
            return (h if h.size else None), float(z["damping"])

    def _correct(self, seed: int, split: str) -> np.ndarray:
        return dt.filter_correct(self.model(seed), self.dataset(seed), split)

    def subset(self, seed: int, split: str, n_train: int) -> np.ndarray:
        """Training rows scored for influence: all of them for validation, a sample for test."""
        frac = self.cfg.influence.subsample_frac
        if split == "val" or frac >= 1.0:
            return np.arange(n_train)
        return inf.subsample_train(n_train, max(1, int(round(frac * n_train))), seed)

    def _engine(self, seed: int, split: str):
        ds, params = self.dataset(seed), self.model(seed)
        xtr, ytr, _ = ds.subset("train")
        hessian, damping = self._curvature(seed)
        c = self.cfg.influence
        icfg = inf.InverseHvpConfig(method=c.method, damping=damping, weight_decay=self.cfg.train.weight_decay,
                                    lissa_depth=c.lissa_depth, lissa_scale=c.lissa_scale,
                                    lissa_repeats=c.lissa_repeats, lissa_batch_size=c.lissa_batch_size,
                                    cg_max_iter=c.cg_max_iter, cg_tol=c.cg_tol, seed=seed)
        return inf.InfluenceEngine(params, xtr, ytr, icfg, hessian=hessian), self.subset(seed, split, len(ytr))

    def attack_names(self, split: str) -> list[str]:
        names = list(self.cfg.attacks)
        if split == "test" and self.cfg.whitebox.enabled:
            names.append("cw_opt")
        return names

    # ---- stages ----

    def stage_train(self, seed: int, check_only: bool = False) -> None:
        c = self.cfg
        ds_rel = f"model/seed{seed}/dataset.bin"
        ds_key = section_hash("dataset", asdict(c.dataset), seed, self._idx_digests())
        self._artifact("train", ds_rel, ds_key, [ds_rel], lambda: dt.save_dataset(self._make_dataset(seed),
                                                                                    self._p(ds_rel)), check_only)
        model_rel = f"model/seed{seed}/model.bin"
        model_key = section_hash("model", asdict(c.model), asdict(c.train), seed, self.sha(ds_rel))
        self._artifact("train", model_rel, model_key, [model_rel], lambda: self._train(seed, model_rel),
                       check_only)
        curv_rel = f"model/seed{seed}/curvature.npz"
        curv_key = section_hash("curvature", c.influence.method, c.influence.damping, c.influence.calibrate,
                                c.train.weight_decay, self.sha(ds_rel), self.sha(model_rel))
        self._artifact("train", curv_rel, curv_key, [curv_rel], lambda: self._build_curvature(seed, curv_rel),
                       check_only)

    def _idx_digests(self):
        ds = self.cfg.dataset
        if ds.kind != "idx":
            return None
        try:
            return [file_sha256(Path(ds.images)), file_sha256(Path(ds.labels))]
        except OSError as exc:
            raise PipelineError(f"cannot read IDX dataset: {exc}") from exc

    def _make_dataset(self, seed: int) -> dt.LabeledDataset:
        d = self.cfg.dataset
        if d.kind == "blobs":
            full = dt.gen_gaussian_blobs(d.n_classes, d.per_class, d.dim, d.spread, seed, spacing=d.spacing)
        elif d.kind == "rings":
            full = dt.gen_two_rings(d.per_class, d.noise, seed)
        else:
            full = dt.load_idx(d.images, d.labels, d.limit, d.n_classes)
        if d.n_train + d.n_val + d.n_test > len(full):
            raise PipelineError(f"split sizes need {d.n_train + d.n_val + d.n_test} examples, "
                                f"dataset has {len(full)}")
        return dt.split(full, d.n_train, d.n_val, d.n_test, seed)

    def _train(self, seed: int, rel: str) -> None:
        ds = self.dataset(seed)
        xtr, ytr, _ = ds.subset("train")
        xv, yv, _ = ds.subset("val")
        t = self.cfg.train
        params = nn.init_model([ds.dim, *self.cfg.model.hidden, ds.n_classes], seed)
        hyper = nn.TrainConfig(lr=t.lr, momentum=t.momentum, epochs=t.epochs, batch_size=t.batch_size,
                               weight_decay=t.weight_decay, seed=seed)
        params = nn.train(params, xtr, ytr, hyper, val=(xv, yv))
        nn.save_model(params, self._p(rel))

    def _build_curvature(self, seed: int, rel: str) -> None:
        c = self.cfg.influence
        params, ds = self.model(seed), self.dataset(seed)
        need = c.method == "exact" or c.calibrate
        if need and params.n_params > inf.InverseHvpConfig().exact_cap:
            if c.method == "exact":
                raise PipelineError(f"{params.n_params} parameters exceed the exact solver's cap; "
                                    "use influence.method lissa or cg")
            need = False
        hessian = np.empty((0, 0))
        damping = c.damping
        if need:
            xtr, ytr, _ = ds.subset("train")
            hessian = nn.hessian(params, xtr, ytr)
            if c.calibrate:
                damping = inf.calibrate_damping(hessian, self.cfg.train.weight_decay, c.damping)
        log.info("seed %d: damping %.6g", seed, damping)
        with open(self._p(rel), "wb") as fh:
            np.savez(fh, hessian=hessian, damping=np.float64(damping))

    def _adv_rel(self, seed, attack, split):
        return f"adv/seed{seed}/{attack}_{split}.bin"

    def stage_attack(self, seed: int, check_only: bool = False) -> None:
        up = [self.sha(f"model/seed{seed}/dataset.bin"), self.sha(f"model/seed{seed}/model.bin")]
        for split in SPLITS:
            for attack in self.cfg.attacks:
                rel = self._adv_rel(seed, attack, split)
                key = section_hash("attack", asdict(self.cfg.attack_config(attack, seed)), split, up)
                self._artifact("attack", rel, key, [rel],
                               lambda a=attack, s=split, r=rel: self._attack(seed, a, s, r), check_only)

    def _attack(self, seed, attack, split, rel) -> None:
        ds, params = self.dataset(seed), self.model(seed)
        idx = self._correct(seed, split)
        if idx.size == 0:
            raise PipelineError(f"no correctly classified {split} examples to attack")
        batch = atk.run_attack(params, ds.x[idx], ds.y[idx], self.cfg.attack_config(attack, seed), idx)
        log.info("seed %d %s/%s success rate %.3f", seed, attack, split, atk.success_rate(batch))
        atk.save_batch(batch, self._p(rel))

    def class_helpful(self, seed: int, idx: np.ndarray, preds: np.ndarray, invert: bool) -> np.ndarray:
        """Most helpful training rows restricted to each point's predicted class, ``(n, m)``."""
        ds = self.dataset(seed)
        engine, subset = self._engine(seed, "test")
        scores = engine.scores(ds.x[idx], preds, subset)
        if invert:
            scores = -scores
        ytr = ds.subset("train")[1]
        m = self.cfg.whitebox.m
        out = np.empty((len(idx), m), dtype=np.int64)
        for i, row in enumerate(scores):
            order = subset[np.argsort(-row, kind="stable")]
            same = order[ytr[order] == preds[i]]
            if same.size < m:
                raise PipelineError(f"only {same.size} scored training points share class {preds[i]}; "
                                    f"whitebox.m={m} is too large")
            out[i] = same[:m]
        return out

    def _attack_cw_opt(self, seed, rel, helpful_rel) -> None:
        ds, params = self.dataset(seed), self.model(seed)
        idx = self._correct(seed, "test")
        preds = nn.predict(params, ds.x[idx])
        helpful = self.class_helpful(seed, idx, preds, self.inverted(seed))
        xtr = ds.subset("train")[0]
        emb = nn.embedding(params, xtr)[helpful]
        batch = atk.cw_opt(params, ds.x[idx], ds.y[idx], emb, self.cfg.attack_config("cw_opt", seed), idx)
        log.info("seed %d cw_opt/test success rate %.3f", seed, atk.success_rate(batch))
        atk.save_batch(batch, self._p(rel))
        with open(self._p(helpful_rel), "wb") as fh:
            np.save(fh, helpful)

    def _inf_rel(self, seed, kind, split):
        return f"influence/seed{seed}/{kind}_{split}.bin"

    def _orient_rel(self, seed):
        return f"influence/seed{seed}/orientation.json"

    def _inf_key(self, seed, *upstream):
        base = [self.sha(f"model/seed{seed}/{f}") for f in ("dataset.bin", "model.bin", "curvature.npz")]
        c = asdict(self.cfg.influence)
        c.pop("invert_sign")  # caches hold the literal selection; orientation is applied on load
        return section_hash("influence", c, self.cfg.max_m, seed, base, list(upstream))

    def stage_influence(self, seed: int, check_only: bool = False) -> None:
        """Influence selections for clean and attacked points, the helpful/harmful orientation,
        and the CW-Opt attack (which needs both)."""
        for split in SPLITS:
            rel = self._inf_rel(seed, "normal", split)
            self._artifact("influence", rel, self._inf_key(seed, split), [rel],
                           lambda s=split, r=rel: self._influence_normal(seed, s, r), check_only)
            for attack in self.cfg.attacks:
                self._influence_adv_artifact(seed, attack, split, check_only)
        rel = self._orient_rel(seed)
        val = [self.sha(self._inf_rel(seed, k, "val")) for k in ["normal", *self.cfg.attacks]]
        key = section_hash("orientation", self.cfg.influence.invert_sign, asdict(self.cfg.detector), seed, val)
        self._artifact("influence", rel, key, [rel], lambda: self._orientation(seed, rel), check_only)
        if self.cfg.whitebox.enabled:
            adv = self._adv_rel(seed, "cw_opt", "test")
            helpful_rel = f"adv/seed{seed}/cw_opt_test_helpful.npy"
            up = [self.sha(f"model/seed{seed}/{f}") for f in ("dataset.bin", "model.bin", "curvature.npz")]
            c = asdict(self.cfg.influence)
            key = section_hash("cw_opt", asdict(self.cfg.attack_config("cw_opt", seed)), self.cfg.whitebox.m, c,
                               up, self.sha(rel))
            self._artifact("influence", adv, key, [adv, helpful_rel],
                           lambda: self._attack_cw_opt(seed, adv, helpful_rel), check_only)
            self._influence_adv_artifact(seed, "cw_opt", "test", check_only)

    def _influence_adv_artifact(self, seed, attack, split, check_only):
        adv = self._adv_rel(seed, attack, split)
        rel = self._inf_rel(seed, attack, split)
        self._artifact("influence", rel, self._inf_key(seed, split, self.sha(adv)), [rel],
                       lambda: self._influence_adv(seed, adv, split, rel), check_only)

    def _select(self, seed, split, x, labels, indices, rel) -> None:
        engine, subset = self._engine(seed, split)
        m = self.cfg.max_m
        if m > subset.size:
            raise PipelineError(f"M={m} exceeds the {subset.size} training points scored for influence")
        scores = engine.scores(x, labels, subset)
        inf.save_influence(inf.select_batch(scores, indices, subset, m), self._p(rel))

    def _influence_normal(self, seed, split, rel) -> None:
        ds, params = self.dataset(seed), self.model(seed)
        idx = self._correct(seed, split)
        self._select(seed, split, ds.x[idx], nn.predict(params, ds.x[idx]), idx, rel)

    def _influence_adv(self, seed, adv_rel, split, rel) -> None:
        batch = atk.load_batch(self._p(adv_rel))
        keep = batch.success
        # the detector only ever sees successful adversarial examples
        self._select(seed, split, batch.x_adv[keep], batch.pred_after[keep], batch.indices[keep], rel)

    def _orientation(self, seed: int, rel: str) -> None:
        """Decide which end of the influence ranking counts as helpful.

        Separation is ``|AUC - 0.5|`` of the mean embedding-layer distance to the
        selected points, normal vs adversarial validation examples, averaged over
        attacks. ``auto`` keeps the literal orientation unless the flipped one
        separates strictly better.
        """
        setting = self.cfg.influence.invert_sign
        ds, params = self.dataset(seed), self.model(seed)
        store = nb.fit_layer_store(params, ds.subset("train")[0], "embedding")
        normal = inf.load_influence(self._p(self._inf_rel(seed, "normal", "val")))
        sep = {False: [], True: []}
        for attack in self.cfg.attacks:
            adv_sel = inf.load_influence(self._p(self._inf_rel(seed, attack, "val")))
            if adv_sel.test_indices.size == 0:
                continue
            batch = atk.load_batch(self._p(self._adv_rel(seed, attack, "val")))
            keep = np.isin(normal.test_indices, adv_sel.test_indices)
            nrm = nb.compute_features(params, [store], ds.x[normal.test_indices[keep]], normal.helpful[keep],
                                      normal.harmful[keep], 0, normal.test_indices[keep])
            adv = nb.compute_features(params, [store], batch.x_adv[batch.success], adv_sel.helpful,
                                      adv_sel.harmful, 1, adv_sel.test_indices)
            labels = np.r_[np.zeros(len(nrm.labels)), np.ones(len(adv.labels))]
            for invert, kind in ((False, nb.KINDS.index("Dup")), (True, nb.KINDS.index("Ddn"))):
                dist = np.r_[nrm.values[:, 0, kind].mean(1), adv.values[:, 0, kind].mean(1)]
                sep[invert].append(abs(roc_auc(dist, labels) - 0.5))
        scores = {k: float(np.mean(v)) if v else float("nan") for k, v in sep.items()}
        if setting == "auto":
            chosen = bool(scores[True] > scores[False])
        else:
            chosen = bool(setting)
        log.info("seed %d: invert_sign=%s (val Dup separation literal %.4f, flipped %.4f)", seed, chosen,
                 scores[False], scores[True])
        self._p(rel).write_text(json.dumps({"invert_sign": chosen, "setting": str(setting).lower(),
                                            "val_dup_sep_literal": scores[False],
                                            "val_dup_sep_inverted": scores[True]}, indent=2, sort_keys=True) + "\n")

    def orientation(self, seed: int) -> dict:
        return json.loads(self._p(self._orient_rel(seed)).read_text())

    def inverted(self, seed: int) -> bool:
        return bool(self.orientation(seed)["invert_sign"])

    def _feat_rel(self, seed, kind, split):
        return f"features/seed{seed}/{kind}_{split}.npz"

    def stage_features(self, seed: int, check_only: bool = False) -> None:
        base = [self.sha(f"model/seed{seed}/{f}") for f in ("dataset.bin", "model.bin")]
        for split in SPLITS:
            for kind in ["normal", *self.attack_names(split)]:
                src = self._inf_rel(seed, kind, split)
                rel = self._feat_rel(seed, kind, split)
                csv_rel = rel[:-4] + ".csv"
                upstream = [self.sha(src)] + ([self.sha(self._adv_rel(seed, kind, split))] if kind != "normal" else [])
                key = section_hash("features", base, upstream)
                self._artifact("features", rel, key, [rel, csv_rel],
                               lambda k=kind, s=split, r=rel, c=csv_rel: self._features(seed, k, s, r, c),
                               check_only)

    def _features(self, seed, kind, split, rel, csv_rel) -> None:
        ds, params = self.dataset(seed), self.model(seed)
        xtr = ds.subset("train")[0]
        sel = inf.load_influence(self._p(self._inf_rel(seed, kind, split)))
        if kind == "normal":
            x, label = ds.x[sel.test_indices], 0
        else:
            batch = atk.load_batch(self._p(self._adv_rel(seed, kind, split)))
            x, label = batch.x_adv[batch.success], 1
        # ranks are taken within the scored training subset, which the selection positions index
        if sel.helpful.size and sel.helpful.max(initial=0) >= sel.subset.size:
            raise PipelineError(f"{kind}/{split} influence selection does not match its training subset")
        stores = [nb.fit_layer_store(params, xtr[sel.subset], layer, train_indices=sel.subset)
                  for layer in range(params.n_hidden)]
        fs = nb.compute_features(params, stores, x, sel.helpful, sel.harmful, label, sel.test_indices)
        _save_features(fs, self._p(rel))
        nb.export_csv(fs, self._p(csv_rel))

    def _oriented(self, fs: nb.FeatureSet, invert: bool) -> nb.FeatureSet:
        if not invert:
            return fs
        # flipping the influence sign swaps helpful and harmful, so (Rup, Dup) <-> (Rdn, Ddn)
        return nb.FeatureSet(fs.values[:, :, [2, 3, 0, 1], :], fs.layers, fs.labels, fs.indices)

    def pairs(self, seed: int, split: str) -> dict[str, ex.Pair]:
        """``attack -> (normal, adversarial)`` features for the successfully attacked examples."""
        invert = self.inverted(seed)
        normal = self._oriented(_load_features(self._p(self._feat_rel(seed, "normal", split))), invert)
        out = {}
        for attack in self.attack_names(split):
            adv = self._oriented(_load_features(self._p(self._feat_rel(seed, attack, split))), invert)
            keep = np.isin(normal.indices, adv.indices)
            nrm = nb.FeatureSet(normal.values[keep], normal.layers, normal.labels[keep], normal.indices[keep])
            if not np.array_equal(nrm.indices, adv.indices):
                raise PipelineError(f"normal and {attack} features are not aligned; rerun stage 'features'")
            out[attack] = (nrm, adv)
        return out

    def _feature_digests(self, seed: int, split: str) -> list[str]:
        kinds = ["normal", *self.attack_names(split)]
        return [self.sha(self._feat_rel(seed, k, split)) for k in kinds]

    def _det_dir(self, seed: int) -> str:
        return f"detector/seed{seed}"

    def _suite_names(self, n_hidden: int) -> list[str]:
        names = [f"{a}/{m}" for a in self.cfg.attacks for m in ex.layer_modes(n_hidden, self.cfg.detector.layers)]
        names += [f"ablation/{ex.subset_name(k)}" for k in ex.ABLATION_SUBSETS]
        if self.cfg.whitebox.enabled:
            names += ["whitebox/helpful", "whitebox/Dup"]
        return names

    def _det_file(self, seed: int, name: str) -> str:
        return f"{self._det_dir(seed)}/{name.replace('/', '__')}.bin"

    def stage_detect(self, seed: int, check_only: bool = False) -> None:
        n_hidden = len(self.cfg.model.hidden)
        names = self._suite_names(n_hidden)
        files = []
        for name in names:
            files += [self._det_file(seed, name), self._det_file(seed, name) + ".json"]
        key = section_hash("detect", asdict(self.cfg.detector), asdict(self.cfg.eval), self.cfg.whitebox.m,
                           self.cfg.whitebox.enabled, seed, self._feature_digests(seed, "val"),
                           self.sha(self._orient_rel(seed)))
        self._artifact("detect", f"{self._det_dir(seed)}/suite", key, files,
                       lambda: self._detect(seed, n_hidden), check_only)

    def _detect(self, seed: int, n_hidden: int) -> None:
        d = self.cfg.detector
        suite = ex.fit_all(self.pairs(seed, "val"), n_hidden, modes=d.layers, m_grid=d.m_grid, folds=d.folds,
                           l2=d.l2, seed=seed, ablation_attack=self.cfg.eval.ablation_attack,
                           whitebox_m=self.cfg.whitebox.m if self.cfg.whitebox.enabled else None)
        for name, det in suite.detectors.items():
            save_detector(det, self._p(self._det_file(seed, name)))

    def load_suite(self, seed: int) -> ex.DetectorSuite:
        n_hidden = len(self.cfg.model.hidden)
        return ex.DetectorSuite({name: load_detector(self._p(self._det_file(seed, name)))
                                 for name in self._suite_names(n_hidden)})

    REPORT_TABLES = ("clean_accuracy", "attacks", "detection", "ablation", "generalization", "orientation",
                     "whitebox")

    def stage_eval(self, check_only: bool = False) -> None:
        digests = []
        for seed in self.cfg.seeds:
            suite = self.manifest["artifacts"][f"{self._det_dir(seed)}/suite"]["files"]
            digests.append([self.sha(f) for f in sorted(suite)])
            digests.append(self._feature_digests(seed, "test"))
            digests.append(self.sha(self._orient_rel(seed)))
            digests.append([self.sha(self._adv_rel(seed, a, s)) for s in SPLITS for a in self.attack_names(s)])
        key = section_hash("eval", self.cfg.to_dict(), digests)
        attacks = list(self.cfg.attacks)
        seeds = self.cfg.seeds
        files = [f"reports/{t}.csv" for t in self.REPORT_TABLES if t != "whitebox" or self.cfg.whitebox.enabled]
        files += ["reports/ablation_flags.csv", "reports/summary.md"]
        files += [f"reports/roc_{a}_{m}_seed{s}.csv" for s in seeds for a in attacks
                  for m in ex.layer_modes(len(self.cfg.model.hidden), self.cfg.detector.layers)]
        self._artifact("eval", "reports", key, files, self._eval, check_only)

    def collect(self) -> tuple[dict, list]:
        """Run every experiment over every seed; returns report tables and ablation flags."""
        cfg = self.cfg
        report = {t: [] for t in self.REPORT_TABLES if t != "whitebox" or cfg.whitebox.enabled}
        flags = []
        thr = cfg.detector.threshold
        for seed in cfg.seeds:
            ds, params = self.dataset(seed), self.model(seed)
            for split in dt.SPLITS:
                x, y, _ = ds.subset(split)
                report["clean_accuracy"].append({"seed": seed, "split": split, "accuracy": nn.accuracy(params, x, y)})
            for split in SPLITS:
                for attack in self.attack_names(split):
                    b = atk.load_batch(self._p(self._adv_rel(seed, attack, split)))
                    ok = b.success
                    mean = (lambda v: float(v[ok].mean()) if ok.any() else float("nan"))
                    report["attacks"].append({"seed": seed, "attack": attack, "split": split, "n": len(b),
                                              "success_rate": atk.success_rate(b), "mean_l0": mean(b.l0),
                                              "mean_l1": mean(b.l1), "mean_l2": mean(b.l2),
                                              "mean_linf": mean(b.linf)})
            report["orientation"].append({"seed": seed, **self.orientation(seed)})
            suite = self.load_suite(seed)
            test = self.pairs(seed, "test")
            n_hidden = params.n_hidden
            for row in ex.run_detection(suite, test, list(cfg.attacks), n_hidden, cfg.detector.layers, thr):
                report["detection"].append({"seed": seed, **row})
            rows = ex.run_ablation(suite, test[cfg.eval.ablation_attack], cfg.eval.ablation_attack, thr)
            report["ablation"] += [{"seed": seed, **r} for r in rows]
            flags.append({"seed": seed, "attack": cfg.eval.ablation_attack, **ex.ablation_flags(rows)})
            src = cfg.eval.generalization_source
            rows = ex.run_generalization(suite[f"{src}/embedding"], test, src, list(cfg.attacks), thr)
            report["generalization"] += [{"seed": seed, **r} for r in rows]
            if cfg.whitebox.enabled:
                lower = self.lstar_lower_fraction(seed)
                rows = ex.run_whitebox(suite, test["cw"], test["cw_opt"], thr)
                report["whitebox"] += [{"seed": seed, **r, "lstar_lower_frac": lower} for r in rows]
        return report, flags

    def lstar_comparison(self, seed: int) -> tuple[np.ndarray, np.ndarray]:
        """Embedding loss toward the helpful training points for vanilla CW and CW-Opt outputs."""
        ds, params = self.dataset(seed), self.model(seed)
        helpful = np.load(self._p(f"adv/seed{seed}/cw_opt_test_helpful.npy"))
        targets = nn.embedding(params, ds.subset("train")[0])[helpful]
        cw = atk.load_batch(self._p(self._adv_rel(seed, "cw", "test")))
        opt = atk.load_batch(self._p(self._adv_rel(seed, "cw_opt", "test")))
        norm = self.cfg.whitebox.reg_norm
        l_cw = atk.embedding_distance_sum(nn.embedding(params, cw.x_adv), targets, norm)[0]
        l_opt = atk.embedding_distance_sum(nn.embedding(params, opt.x_adv), targets, norm)[0]
        return l_cw, l_opt

    def lstar_lower_fraction(self, seed: int) -> float:
        l_cw, l_opt = self.lstar_comparison(seed)
        return float(np.mean(l_opt < l_cw))

    def _eval(self) -> None:
        report, flags = self.collect()
        out = self._p("reports")
        ex.write_reports(out, report, flags)
        runtime = sum(e.get("seconds", 0.0) for e in self.manifest["artifacts"].values())
        hashes = {"config": section_hash(self.cfg.to_dict())}
        (out / "summary.md").write_text(ex.summary_markdown(self.cfg.name, report, flags, runtime, hashes))

    # ---- drivers ----

    def run_stage(self, stage: str, check_only: bool = False) -> None:
        if stage == "eval":
            self.stage_eval(check_only)
            return
        fn = getattr(self, f"stage_{stage}")
        for seed in self.cfg.seeds:
            fn(seed, check_only)

    def run(self, stage: str | None = None) -> list[str]:
        """Run one stage (validating upstream caches) or, with ``stage=None``, every stage in order."""
        if stage is not None and stage not in STAGES:
            raise PipelineError(f"unknown stage {stage!r}; choose from {', '.join(STAGES)}")
        self.root.mkdir(parents=True, exist_ok=True)
        lock = FileLock(str(self._p("run.lock")))
        try:
            lock.acquire(timeout=0)
        except Timeout:
            raise PipelineError(f"run directory {self.root} is locked by another process") from None
        try:
            start = time.perf_counter()
            targets = STAGES if stage is None else STAGES[:STAGES.index(stage) + 1]
            for s in targets:
                self.run_stage(s, check_only=stage is not None and s != stage)
            self.manifest.setdefault("runs", []).append(
                {"stage": stage or "all", "rebuilt": len(self.built),
                 "seconds": round(time.perf_counter() - start, 3)})
            self._write_manifest()
        finally:
            lock.release()
        return self.built
