"""Command-line driver: gen, train, eval, analyze, sweep.

Every command is a pure function of its config file and input files:
reruns produce byte-identical datasets, checkpoints, logs, and reports
(wall-clock chatter goes to stderr only). Reports are written as JSON and
CSV with a rendered figure alongside.

Exit codes: 0 success, 2 configuration or contract error, 3 missing input
file, 4 numerical abort (non-finite loss).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis, figures, synthdata
from .config import COMMAND_SECTIONS, RunConfig, derive_seed, load_config, write_resolved_config
from .errors import ConfigError, ContractViolation, DivergenceError, MissingInputError
from .losses import ClassifierWeights, ClsLossConfig, SoftmaxConfig
from .metrics import DEFAULT_FPR_TARGETS, cosine_rows, mls_rows, rank1, roc_from_arrays
from .model import EncoderModel, load_checkpoint, save_checkpoint
from .training import (
    REGRESSION_LOSS,
    TrainConfig,
    train_baseline,
    train_dul_cls,
    train_dul_rgs,
)

TRAIN_MODES = ("baseline", "dul-cls", "dul-rgs")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING_INPUT = 3
EXIT_NUMERICAL = 4


def _fnum(v) -> str:
    return repr(float(v))


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _write_csv(path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(
            _fnum(v) if isinstance(v, float) else str(v) for v in row
        ))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _fpr_key(target: float) -> str:
    return repr(float(target))


def _summary(final_loss=None, sigma_bar=None, train_acc=None,
             tpr_at=None, interval_auc=None) -> dict:
    return {
        "final_loss": final_loss,
        "sigma_bar": sigma_bar,
        "train_acc": train_acc,
        "tpr_at": tpr_at,
        "interval_auc": interval_auc,
    }


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------

def cmd_gen(cfg: RunConfig, out_dir: Path) -> None:
    d = cfg.sections["dataset"]
    seed = cfg.get("run", "seed")
    if d["kind"] == "identity":
        ds = synthdata.gen_identities(
            num_classes=d["num_classes"], per_class=d["per_class"],
            input_dim=d["input_dim"], center_spread=d["center_spread"],
            base_noise=d["base_noise"], seed=seed,
        )
        if d["corrupt_fraction"] > 0.0:
            ds = synthdata.corrupt_fraction(
                ds, d["corrupt_fraction"], d["corruption_scale"],
                seed=derive_seed(seed, "corrupt"),
            )
        synthdata.save_identity_csv(out_dir / "dataset.csv", ds)
        synthdata.save_identity_bin(out_dir / "dataset.bin", ds)
        n_corrupted = int(np.count_nonzero(ds.noise_levels > ds.noise_levels.min()))
        manifest = {
            "kind": "identity",
            "n": ds.n,
            "input_dim": ds.input_dim,
            "num_classes": ds.num_classes,
            "seed": seed,
            "spec_hash": synthdata.spec_hash(ds.generator_spec),
            "n_corrupted": n_corrupted,
            "files": ["dataset.csv", "dataset.bin"],
        }
    elif d["kind"] == "hetreg":
        ds = synthdata.gen_hetreg(
            n=d["n"], f=synthdata.FuncSpec.parse(d["f"]),
            sigma=synthdata.FuncSpec.parse(d["sigma"]),
            x_range=(d["x_min"], d["x_max"]), seed=seed,
        )
        synthdata.save_hetreg_csv(out_dir / "dataset.csv", ds)
        manifest = {
            "kind": "hetreg",
            "n": ds.n,
            "seed": seed,
            "f": str(ds.f),
            "sigma": str(ds.sigma),
            "x_range": [ds.x_range[0], ds.x_range[1]],
            "files": ["dataset.csv"],
        }
    else:
        raise ConfigError(f"unknown dataset kind {d['kind']!r}")
    _write_json(out_dir / "manifest.json", manifest)


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _loss_config(t: dict) -> ClsLossConfig:
    softmax = SoftmaxConfig.for_variant(
        t["variant"], margin=t["margin"], scale=t["scale"],
        normalize_features=t["normalize_features"],
    )
    return ClsLossConfig(softmax=softmax, lam=t["lambda"])


def _train_config(t: dict, seed: int, loss) -> TrainConfig:
    return TrainConfig(
        steps=t["steps"], batch_size=t["batch_size"], max_lr=t["max_lr"],
        base_lr=t["base_lr"], momentum=t["momentum"],
        weight_decay=t["weight_decay"], seed=seed, loss=loss,
    )


def _write_trainlog(path, log) -> None:
    rows = [
        [step, float(log.lr[step]), float(log.loss[step]), float(log.loss_main[step]),
         float(log.loss_reg[step]), float(log.sigma_bar[step])]
        for step in range(len(log.loss))
    ]
    _write_csv(path, ["step", "lr", "loss", "loss_main", "loss_reg", "sigma_bar"], rows)


def cmd_train(cfg: RunConfig, out_dir: Path) -> None:
    t = cfg.sections["train"]
    m = cfg.sections["model"]
    seed = cfg.get("run", "seed")
    mode = t["mode"]
    if mode not in TRAIN_MODES:
        raise ConfigError(f"unknown train mode {mode!r}")
    ds = synthdata.load_identity(t["dataset"])

    if mode == "dul-rgs":
        if not t["baseline_checkpoint"]:
            raise MissingInputError("dul-rgs requires baseline_checkpoint")
        base_model, base_w, _ = load_checkpoint(t["baseline_checkpoint"])
        tc = _train_config(t, seed, REGRESSION_LOSS)
        model, log = train_dul_rgs(ds, base_model, base_w, tc)
        weights = base_w
    else:
        model = EncoderModel.create(
            in_dim=ds.input_dim, hidden_dim=m["hidden_dim"],
            embed_dim=m["embed_dim"], seed=derive_seed(seed, "model"),
        )
        weights = ClassifierWeights.random_normalized(
            m["embed_dim"], ds.num_classes,
            np.random.default_rng(np.random.SeedSequence([int(seed), 2])),
        )
        tc = _train_config(t, seed, _loss_config(t))
        if mode == "baseline":
            model, weights, log = train_baseline(ds, model, weights, tc)
        else:
            model, weights, log = train_dul_cls(ds, model, weights, tc,
                                                zero_eps=t["debug_zero_eps"])

    sigma_all = analysis.sigma_scores(model, ds.x)
    meta = {"mode": mode, "seed": seed, "has_sigma": mode != "baseline"}
    save_checkpoint(out_dir / "checkpoint.bin", model, weights, meta)
    _write_trainlog(out_dir / "trainlog.csv", log)
    _write_json(out_dir / "summary.json", _summary(
        final_loss=float(log.loss[-1]),
        sigma_bar=float(sigma_all.mean()),
        train_acc=log.train_accuracy,
    ))


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def _decode_pair_codes(codes: np.ndarray, n: int):
    """Map lexicographic pair codes to (i, j) with i < j.

    code(i, j) = i*(2n-i-1)/2 + (j-i-1).
    """
    c = codes.astype(np.float64)
    i = np.floor(((2 * n - 1) - np.sqrt((2 * n - 1) ** 2 - 8.0 * c)) / 2.0).astype(np.int64)
    # guard against float rounding at block boundaries
    for _ in range(2):
        start = i * (2 * n - i - 1) // 2
        i -= codes < start
        start = i * (2 * n - i - 1) // 2
        nxt = (i + 1) * (2 * n - i - 2) // 2
        i += codes >= nxt
    start = i * (2 * n - i - 1) // 2
    j = codes - start + i + 1
    return i, j


def build_pairs(labels: np.ndarray, cap: int, seed: int):
    """All genuine/imposter index pairs, or a seeded subsample above ``cap``.

    When subsampling: genuine pairs are enumerated exactly and kept up to
    cap/2 (seeded subsample beyond that); the imposter budget fills the
    rest of the cap, drawn without replacement from the full pair space.
    """
    labels = np.asarray(labels)
    n = labels.shape[0]
    total = n * (n - 1) // 2
    if total <= cap:
        ia, ja = np.triu_indices(n, k=1)
        return ia, ja, labels[ia] == labels[ja]

    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    gi = []
    gj = []
    for c in np.unique(labels):
        idx = np.nonzero(labels == c)[0]
        if idx.size >= 2:
            a, b = np.triu_indices(idx.size, k=1)
            gi.append(idx[a])
            gj.append(idx[b])
    gi = np.concatenate(gi) if gi else np.empty(0, dtype=np.int64)
    gj = np.concatenate(gj) if gj else np.empty(0, dtype=np.int64)
    n_gen = gi.shape[0]
    keep_gen = min(n_gen, cap // 2)
    if keep_gen < n_gen:
        sel = np.sort(rng.choice(n_gen, size=keep_gen, replace=False))
        gi, gj = gi[sel], gj[sel]
    budget = cap - keep_gen

    want = min(total, budget * 3 + 64)
    codes = rng.choice(total, size=want, replace=False)
    ia, ja = _decode_pair_codes(codes, n)
    imposter = labels[ia] != labels[ja]
    ia, ja = ia[imposter][:budget], ja[imposter][:budget]
    if ia.shape[0] < budget:
        # extremely imbalanced labels; fall back to the exhaustive space
        fa, fb = np.triu_indices(n, k=1)
        mask = labels[fa] != labels[fb]
        fa, fb = fa[mask], fb[mask]
        sel = np.sort(rng.choice(fa.shape[0], size=min(budget, fa.shape[0]), replace=False))
        ia, ja = fa[sel], fb[sel]

    idx_a = np.concatenate([gi, ia])
    idx_b = np.concatenate([gj, ja])
    return idx_a, idx_b, labels[idx_a] == labels[idx_b]


def _rank1_split(labels: np.ndarray):
    """Gallery = first sample of each class (by index), probes = the rest."""
    _, first = np.unique(labels, return_index=True)
    gallery = np.sort(first)
    mask = np.ones(labels.shape[0], dtype=bool)
    mask[gallery] = False
    return np.nonzero(mask)[0], gallery


def cmd_eval(cfg: RunConfig, out_dir: Path) -> None:
    e = cfg.sections["eval"]
    seed = cfg.get("run", "seed")
    if e["metric"] not in ("cosine", "mls"):
        raise ConfigError(f"unknown metric {e['metric']!r}")
    model, _, meta = load_checkpoint(e["checkpoint"])
    if e["metric"] == "mls" and not meta.get("has_sigma", False):
        raise ConfigError("metric=mls needs a checkpoint trained with a sigma head")
    ds = synthdata.load_identity(e["dataset"])

    mu, sigma = model.embed(ds.x)
    idx_a, idx_b, genuine = build_pairs(ds.labels, e["pair_cap"], seed)
    if e["metric"] == "cosine":
        scores = cosine_rows(mu[idx_a], mu[idx_b])
    else:
        # mutual likelihood on unit-normalized means, paired with the
        # predicted spread; with constant sigma this ranks exactly like
        # cosine
        mu_hat = mu / np.linalg.norm(mu, axis=1, keepdims=True)
        scores = mls_rows(mu_hat[idx_a], sigma[idx_a], mu_hat[idx_b], sigma[idx_b])

    targets = e["fpr_targets"] or DEFAULT_FPR_TARGETS
    report = roc_from_arrays(scores, genuine, targets)

    probes, gallery = _rank1_split(ds.labels)
    rank1_acc = None
    if probes.size:
        rank1_acc = rank1(mu[probes], ds.labels[probes], mu[gallery], ds.labels[gallery])

    _write_csv(out_dir / "roc.csv", ["fpr", "tpr"],
               [[float(f), float(t)] for f, t in report.points])
    tpr_at = {_fpr_key(t): report.tpr_at[float(t)] for t in targets}
    _write_json(out_dir / "report.json", {
        "metric": e["metric"],
        "n_genuine": report.n_genuine,
        "n_imposter": report.n_imposter,
        "tpr_at": tpr_at,
        "interval_auc": report.interval_auc,
        "rank1": rank1_acc,
    })
    _write_json(out_dir / "summary.json", _summary(
        tpr_at=tpr_at, interval_auc=report.interval_auc,
    ))
    figures.save_roc_figure(report, out_dir / "roc.png")


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------

def cmd_analyze(cfg: RunConfig, out_dir: Path) -> None:
    a = cfg.sections["analyze"]
    seed = cfg.get("run", "seed")
    base_model, base_w, _ = load_checkpoint(a["baseline_checkpoint"])
    dul_model, dul_w, _ = load_checkpoint(a["dul_checkpoint"])
    ds = synthdata.load_identity(a["dataset"])

    unc = analysis.uncertainty_report(dul_model, ds)
    _write_json(out_dir / "uncertainty.json", {
        "n": unc.n,
        "auc_corrupted_vs_clean": unc.auc,
        "buckets": [
            {"noise_level": b.noise_level, "count": b.count,
             "sigma_mean": b.sigma_mean, "sigma_std": b.sigma_std}
            for b in unc.buckets
        ],
    })
    _write_csv(out_dir / "uncertainty.csv",
               ["noise_level", "count", "sigma_mean", "sigma_std"],
               [[b.noise_level, b.count, b.sigma_mean, b.sigma_std] for b in unc.buckets])
    figures.save_uncertainty_figure(unc, ds.noise_levels, out_dir / "uncertainty.png")

    bad = analysis.bad_case_report(base_model, base_w, dul_model, dul_w, ds,
                                   sigma_model=dul_model, names=("baseline", "dul"))
    _write_json(out_dir / "bad_case.json", {
        "thresholds": list(bad.thresholds),
        "models": {
            name: {
                "errors": bad.total_errors[name],
                "counts": bad.counts[name].tolist(),
                "proportions": None if bad.proportions[name] is None
                else bad.proportions[name].tolist(),
            }
            for name in bad.counts
        },
    })
    bad_rows = []
    for name in bad.counts:
        for k, cat in enumerate(analysis.CATEGORY_NAMES):
            prop = bad.proportions[name]
            bad_rows.append([name, cat, int(bad.counts[name][k]),
                             float(prop[k]) if prop is not None else ""])
    _write_csv(out_dir / "bad_case.csv", ["model", "category", "count", "proportion"], bad_rows)
    figures.save_bad_case_figure(bad, out_dir / "bad_case.png")

    cats, _ = analysis.assign_tertiles(analysis.sigma_scores(dul_model, ds.x))
    dists = {
        "baseline": analysis.intra_class_distances(base_model, base_w, ds, cats),
        "dul": analysis.intra_class_distances(dul_model, dul_w, ds, cats),
    }
    _write_json(out_dir / "intra_class.json", {
        "categories": list(analysis.CATEGORY_NAMES),
        "models": {k: v.tolist() for k, v in dists.items()},
    })
    _write_csv(out_dir / "intra_class.csv", ["model", "category", "mean_distance"],
               [[name, cat, float(dists[name][k])]
                for name in dists for k, cat in enumerate(analysis.CATEGORY_NAMES)])
    figures.save_intra_class_figure(dists, out_dir / "intra_class.png")

    pairs = analysis.make_probe_pairs(ds, a["probe_pairs"], seed=derive_seed(seed, "pairs"))
    rows = analysis.blur_pair_probe({"baseline": base_model, "dul": dul_model},
                                    pairs, a["blur_levels"], seed=derive_seed(seed, "blur"))
    _write_csv(out_dir / "blur_pairs.csv",
               ["level", "model", "genuine_similarity", "imposter_similarity"],
               [[r.level, r.model, r.genuine_similarity, r.imposter_similarity] for r in rows])
    _write_json(out_dir / "blur_pairs.json", [
        {"level": r.level, "model": r.model,
         "genuine_similarity": r.genuine_similarity,
         "imposter_similarity": r.imposter_similarity}
        for r in rows
    ])
    figures.save_blur_pair_figure(rows, out_dir / "blur_pairs.png")


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def _single_cls_run(ds_train, ds_test, m: dict, t: dict, lam: float,
                    mode: str, model_seed: int, train_seed: int,
                    targets, pair_cap: int, eval_seed: int) -> dict:
    """Train one classifier and evaluate it on the clean test set."""
    model = EncoderModel.create(ds_train.input_dim, m["hidden_dim"],
                                m["embed_dim"], seed=model_seed)
    weights = ClassifierWeights.random_normalized(
        m["embed_dim"], ds_train.num_classes,
        np.random.default_rng(np.random.SeedSequence([int(train_seed), 2])),
    )
    softmax = SoftmaxConfig.for_variant(
        t["variant"], margin=t["margin"], scale=t["scale"],
        normalize_features=t["normalize_features"],
    )
    tc = _train_config(t, train_seed, ClsLossConfig(softmax=softmax, lam=lam))
    if mode == "baseline":
        model, weights, log = train_baseline(ds_train, model, weights, tc)
    else:
        model, weights, log = train_dul_cls(ds_train, model, weights, tc)

    out = {
        "sigma_bar": float(analysis.sigma_scores(model, ds_train.x).mean()),
        "train_acc": float(log.train_accuracy),
    }
    mu, _ = model.embed(ds_test.x)
    idx_a, idx_b, genuine = build_pairs(ds_test.labels, pair_cap, eval_seed)
    report = roc_from_arrays(cosine_rows(mu[idx_a], mu[idx_b]), genuine, targets)
    for target in targets:
        out[f"tpr_at_{_fpr_key(target)}"] = report.tpr_at[float(target)]
    out["interval_auc"] = report.interval_auc
    return out


def cmd_sweep(cfg: RunConfig, out_dir: Path) -> None:
    s = cfg.sections["sweep"]
    d = cfg.sections["dataset"]
    m = cfg.sections["model"]
    t = cfg.sections["train"]
    e = cfg.sections["eval"]
    seed = cfg.get("run", "seed")
    if s["kind"] not in ("lambda", "noise"):
        raise ConfigError(f"unknown sweep kind {s['kind']!r}")
    if not s["values"]:
        raise ConfigError("sweep grid is empty")
    targets = e["fpr_targets"] or DEFAULT_FPR_TARGETS
    tpr_cols = [f"tpr_at_{_fpr_key(target)}" for target in targets]
    num_cols = ["sigma_bar", "train_acc"] + tpr_cols + ["interval_auc"]

    def gen_train(rep: int, fraction: float):
        ds = synthdata.gen_identities(
            num_classes=d["num_classes"], per_class=d["per_class"],
            input_dim=d["input_dim"], center_spread=d["center_spread"],
            base_noise=d["base_noise"], seed=derive_seed(seed, "data", rep),
        )
        if fraction > 0.0:
            ds = synthdata.corrupt_fraction(ds, fraction, d["corruption_scale"],
                                            seed=derive_seed(seed, "corrupt", rep))
        return ds

    def gen_test(rep: int):
        return synthdata.gen_identities(
            num_classes=d["num_classes"], per_class=d["per_class"],
            input_dim=d["input_dim"], center_spread=d["center_spread"],
            base_noise=d["base_noise"], seed=derive_seed(seed, "test", rep),
        )

    rows = []
    for value in s["values"]:
        if s["kind"] == "lambda":
            model_runs = [("dul-cls", float(value), 0.0)]
        else:
            model_runs = [("baseline", t["lambda"], float(value)),
                          ("dul-cls", t["lambda"], float(value))]
        for mode, lam, fraction in model_runs:
            acc = {col: [] for col in num_cols}
            failures = []
            for rep in range(s["seeds"]):
                try:
                    ds_train = gen_train(rep, fraction)
                    ds_test = gen_test(rep)
                    result = _single_cls_run(
                        ds_train, ds_test, m, t, lam, mode,
                        model_seed=derive_seed(seed, "model", rep),
                        train_seed=derive_seed(seed, "train", rep),
                        targets=targets, pair_cap=e["pair_cap"],
                        eval_seed=derive_seed(seed, "eval", rep),
                    )
                except Exception as exc:  # record and continue per contract
                    failures.append(f"rep{rep}:{type(exc).__name__}")
                    continue
                for col in num_cols:
                    acc[col].append(result[col])
            n_ok = s["seeds"] - len(failures)
            row = {"value": float(value), "model": mode, "n_seeds": n_ok}
            for col in num_cols:
                row[col] = float(np.mean(acc[col])) if acc[col] else float("nan")
            row["status"] = "ok" if not failures else "failed:" + ";".join(failures)
            rows.append(row)

    header = ["value", "model", "n_seeds"] + num_cols + ["status"]
    _write_csv(out_dir / "sweep.csv", header,
               [[row[col] for col in header] for row in rows])
    _write_json(out_dir / "sweep.json", rows)
    figures.save_sweep_figure(rows, s["kind"], out_dir / "sweep.png")


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

_DISPATCH = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "analyze": cmd_analyze,
    "sweep": cmd_sweep,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dulearn",
        description="Data-uncertainty learning on synthetic identity data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMAND_SECTIONS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run config file")
        p.add_argument("--seed", type=int, default=None, help="override [run] seed")
        p.add_argument("--out", default=None, help="override [run] out directory")
        p.add_argument("--debug-zero-eps", action="store_true",
                       help="force eps=0 in stochastic training")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    overrides = {
        ("run", "seed"): args.seed,
        ("run", "out"): args.out,
    }
    if args.debug_zero_eps:
        overrides[("train", "debug_zero_eps")] = True
    try:
        cfg = load_config(args.config, args.command, overrides)
        out_dir = Path(cfg.get("run", "out"))
        out_dir.mkdir(parents=True, exist_ok=True)
        write_resolved_config(cfg, out_dir)
        _DISPATCH[args.command](cfg, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ContractViolation as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingInputError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except DivergenceError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
