"""Experiment harness: splits, simulated active-learning runs, learning curves,
normalized AUC, word-level cross-validation, PCA, and report emission.

Simulated runs use the training pool itself as the labeling oracle: every
pool page carries its true label, revealed batch by batch as the sampler
queries it.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize

from .errors import ConfigError, InsufficientDataError, ValidationError
from .ingest import CLASSES
from .llp import similarity_matrix, train_llp, predict_many
from .sampler import Strategy, select_batch
from .word_features import FEATURE_NAMES

log = logging.getLogger(__name__)

FEATURE_SUBSETS: dict[str, tuple[int, ...]] = {
    "ALL": tuple(range(len(FEATURE_NAMES))),
    "ZM": tuple(range(3, len(FEATURE_NAMES))),
    "SLD-CW": (0, 1, 2),
}

STRATEGY_ORDER = (
    Strategy.S1,
    Strategy.S2,
    Strategy.S3,
    Strategy.S4,
    Strategy.S5,
    Strategy.S6,
    Strategy.RANDOM,
)


@dataclass
class ExperimentConfig:
    """Knobs for a simulated active-learning experiment."""

    strategies: tuple[Strategy, ...] = STRATEGY_ORDER
    batch_size: int = 20
    repetitions: int = 20
    sigma: float = 300.0
    lambda_weight: float = 0.1
    seed: int = 0
    test_per_class: int = 200
    seed_per_class: int = 1
    llp_max_iter: int = 2000
    llp_grad_tol: float = 1e-5
    synthetic_class_counts: tuple[int, int, int] = (375, 375, 150)
    synthetic_concentration: float = 60.0


def synthetic_protocol_config(seed: int = 0, **overrides) -> ExperimentConfig:
    """Desk-scale protocol defaults for the synthetic Dirichlet dataset.

    900 synthetic pages (mixed-font pages rarest, echoing the historical
    skew) split into a 600-page training pool and a 300-page stratified
    test set. The similarity bandwidth is scaled to the unit-simplex BoF
    geometry: on [0,1]-scale vectors a bandwidth of hundreds saturates
    every similarity at 1, which would blind the dissimilarity and
    diversity criteria, so the protocol uses 0.1. The smoothness weight and
    the gradient-descent budget are sized so each retrain is both useful
    and fast enough for a 20-repetition sweep on a laptop.
    """
    cfg = ExperimentConfig(
        seed=seed,
        test_per_class=100,
        sigma=0.1,
        lambda_weight=5.0,
        llp_max_iter=400,
        llp_grad_tol=1e-5,
    )
    for key, value in overrides.items():
        setattr(cfg, key, value)
    return cfg


def synthetic_protocol_dataset(config: ExperimentConfig) -> tuple[np.ndarray, np.ndarray]:
    """The dataset matching synthetic_protocol_config (deterministic per seed)."""
    rng = np.random.default_rng(config.seed)
    return synthetic_bof_dataset(
        config.synthetic_class_counts, rng, concentration=config.synthetic_concentration
    )


@dataclass
class LearningCurve:
    """Test accuracy as a function of how many pages have been labeled."""

    labeled_counts: np.ndarray
    accuracies: np.ndarray
    strategy: Strategy
    repetition: int = 0

    def __post_init__(self):
        self.labeled_counts = np.asarray(self.labeled_counts, dtype=int)
        self.accuracies = np.asarray(self.accuracies, dtype=np.float64)
        if np.any(np.diff(self.labeled_counts) <= 0):
            raise ValidationError("labeled counts must be strictly increasing")


@dataclass
class RepeatedResult:
    """Aggregate of several repetitions of one strategy."""

    strategy: Strategy
    curves: list[LearningCurve]
    mean_accuracy: np.ndarray = field(init=False)
    std_accuracy: np.ndarray = field(init=False)
    labeled_counts: np.ndarray = field(init=False)
    naucs: np.ndarray = field(init=False)

    def __post_init__(self):
        grids = {tuple(c.labeled_counts.tolist()) for c in self.curves}
        if len(grids) != 1:
            raise ValidationError("repetitions produced mismatched labeled-count grids")
        acc = np.vstack([c.accuracies for c in self.curves])
        self.labeled_counts = self.curves[0].labeled_counts
        self.mean_accuracy = acc.mean(axis=0)
        self.std_accuracy = acc.std(axis=0)
        self.naucs = np.array([normalized_auc(c) for c in self.curves])


def split_dataset(
    labels: np.ndarray, rng: np.random.Generator, test_per_class: int
) -> tuple[np.ndarray, np.ndarray]:
    """Stratified test draw; everything else becomes the training pool."""
    labels = np.asarray(labels, dtype=int)
    test_parts = []
    for c in range(len(CLASSES)):
        members = np.nonzero(labels == c)[0]
        if members.size < test_per_class:
            raise ConfigError(
                f"class {CLASSES[c]} has {members.size} pages; "
                f"test split needs {test_per_class}"
            )
        test_parts.append(rng.permutation(members)[:test_per_class])
    test_idx = np.sort(np.concatenate(test_parts))
    train_idx = np.setdiff1d(np.arange(labels.size), test_idx)
    if train_idx.size == 0:
        log.warning("test split consumed the whole dataset; training pool is empty")
    return train_idx, test_idx


def _seed_indices(labels: np.ndarray, rng: np.random.Generator, per_class: int) -> np.ndarray:
    parts = []
    for c in range(len(CLASSES)):
        members = np.nonzero(labels == c)[0]
        if members.size < per_class:
            raise ConfigError(f"class {CLASSES[c]} has too few pool pages for the seed set")
        parts.append(rng.permutation(members)[:per_class])
    return np.sort(np.concatenate(parts))


def accuracy_score(model, x: np.ndarray, y: np.ndarray) -> float:
    pred = np.argmax(predict_many(model, x), axis=1)
    return float(np.mean(pred == np.asarray(y)))


def per_class_recall(model, x: np.ndarray, y: np.ndarray) -> dict[str, float]:
    pred = np.argmax(predict_many(model, x), axis=1)
    y = np.asarray(y)
    out = {}
    for c, name in enumerate(CLASSES):
        mask = y == c
        out[name] = float(np.mean(pred[mask] == c)) if mask.any() else float("nan")
    return out


def run_active_learning(
    pool_bofs: np.ndarray,
    pool_labels: np.ndarray,
    test_bofs: np.ndarray,
    test_labels: np.ndarray,
    strategy: Strategy,
    rng: np.random.Generator,
    config: ExperimentConfig,
    repetition: int = 0,
) -> LearningCurve:
    """Simulate one oracle-labeled active-learning run over the pool.

    Seeds with one labeled page per class, then alternates retraining,
    test evaluation, and batch querying until the pool is exhausted. The
    curve gets one point per retrain, so labeled counts run 3, 23, 43, ...
    Training data is always assembled in ascending pool order, which makes
    the final round identical across strategies.
    """
    pool_bofs = np.asarray(pool_bofs, dtype=np.float64)
    pool_labels = np.asarray(pool_labels, dtype=int)
    n = pool_bofs.shape[0]
    s_pool = similarity_matrix(pool_bofs, config.sigma)
    labeled = _seed_indices(pool_labels, rng, config.seed_per_class)
    unlabeled = np.setdiff1d(np.arange(n), labeled)

    counts: list[int] = []
    accs: list[float] = []
    while True:
        order = np.concatenate([labeled, unlabeled])
        model = train_llp(
            pool_bofs[labeled],
            pool_labels[labeled],
            pool_bofs[unlabeled],
            sigma=config.sigma,
            lambda_weight=config.lambda_weight,
            max_iter=config.llp_max_iter,
            grad_tol=config.llp_grad_tol,
            similarity_precomputed=s_pool[np.ix_(order, order)],
        )
        counts.append(int(labeled.size))
        accs.append(accuracy_score(model, test_bofs, test_labels))
        if unlabeled.size == 0:
            break
        batch = select_batch(
            strategy, model, unlabeled, labeled, s_pool, pool_bofs,
            batch_size=config.batch_size, rng=rng,
        )
        picked = np.asarray(batch.indices, dtype=int)
        labeled = np.sort(np.concatenate([labeled, picked]))
        unlabeled = np.setdiff1d(unlabeled, picked)
    return LearningCurve(np.array(counts), np.array(accs), strategy, repetition)


def normalized_auc(curve: LearningCurve) -> float:
    """Trapezoidal area under accuracy vs labeled count, scaled to [0, 1]."""
    x = curve.labeled_counts.astype(np.float64)
    y = curve.accuracies
    if x.size < 2:
        raise InsufficientDataError("normalized AUC needs at least 2 curve points")
    return float(np.trapezoid(y, x) / (x[-1] - x[0]))


def _one_repetition(
    config: ExperimentConfig,
    strategy: Strategy,
    bofs: np.ndarray,
    labels: np.ndarray,
    rep: int,
) -> LearningCurve:
    rng = np.random.default_rng([config.seed, rep])
    train_idx, test_idx = split_dataset(labels, rng, config.test_per_class)
    return run_active_learning(
        bofs[train_idx], labels[train_idx], bofs[test_idx], labels[test_idx],
        strategy, rng, config, repetition=rep,
    )


def repeat_experiment(
    config: ExperimentConfig,
    strategy: Strategy,
    bofs: np.ndarray,
    labels: np.ndarray,
    n_jobs: int = 1,
) -> RepeatedResult:
    """Run the strategy config.repetitions times with paired rng streams.

    Repetition r always draws from default_rng([seed, r]), so different
    strategies see identical splits and seed sets in the same repetition;
    curves are directly paired for significance testing. Repetitions are
    independent tasks, so n_jobs > 1 fans them out over processes without
    changing any result.
    """
    reps = range(config.repetitions)
    if n_jobs != 1 and config.repetitions > 1:
        from joblib import Parallel, delayed

        curves = Parallel(n_jobs=n_jobs)(
            delayed(_one_repetition)(config, strategy, bofs, labels, rep) for rep in reps
        )
    else:
        curves = [_one_repetition(config, strategy, bofs, labels, rep) for rep in reps]
    return RepeatedResult(strategy=strategy, curves=list(curves))


def run_protocol(
    config: ExperimentConfig, bofs: np.ndarray, labels: np.ndarray, n_jobs: int = 1
) -> dict[Strategy, RepeatedResult]:
    """repeat_experiment for every configured strategy, in fixed order."""
    results = {}
    for strategy in STRATEGY_ORDER:
        if strategy in config.strategies:
            results[strategy] = repeat_experiment(config, strategy, bofs, labels, n_jobs=n_jobs)
    return results


def sign_test_greater(a: np.ndarray, b: np.ndarray) -> float:
    """One-sided exact sign test p-value for H1: a tends to exceed b."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    diff = a - b
    n_eff = int(np.sum(diff != 0.0))
    if n_eff == 0:
        return 1.0
    k = int(np.sum(diff > 0.0))
    return sum(math.comb(n_eff, j) for j in range(k, n_eff + 1)) / 2.0**n_eff


def synthetic_bof_dataset(
    class_counts: tuple[int, int, int] | int,
    rng: np.random.Generator,
    k: int = 20,
    concentration: float = 60.0,
    profile_concentration: float = 2.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Three-class Dirichlet mixture over the k-bin simplex.

    Blackletter and Roman draw around two random histogram profiles; the
    Mixed class draws around the average of the two, overlapping both lobes
    (that is also where its real pages live, between the pure fonts). An
    int class_counts generates balanced classes; pass a triple to mimic the
    historical skew where mixed-font pages are the rarest. Returns
    (bofs, labels) grouped by class in order Blackletter=0, Roman=1,
    Mixed=2. concentration sets cluster tightness (lower = noisier pages).
    """
    if isinstance(class_counts, (int, np.integer)):
        class_counts = (int(class_counts),) * 3
    profile_b = rng.dirichlet(np.full(k, profile_concentration))
    profile_r = rng.dirichlet(np.full(k, profile_concentration))
    profile_m = 0.5 * (profile_b + profile_r)
    parts, labs = [], []
    for c, (profile, n) in enumerate(zip((profile_b, profile_r, profile_m), class_counts)):
        parts.append(rng.dirichlet(concentration * profile + 0.15, size=n))
        labs.append(np.full(n, c))
    return np.vstack(parts), np.concatenate(labs)


def synthetic_word_features(
    n_per_class: int, rng: np.random.Generator, separation: float = 4.0
) -> tuple[np.ndarray, np.ndarray]:
    """Two-class Gaussian word-feature clouds for exercising the CV harness.

    Clouds live in the positive orthant (word features are nonnegative) and
    class 1 is shifted along a random nonnegative direction.
    """
    d = len(FEATURE_NAMES)
    direction = np.abs(rng.normal(size=d))
    direction /= np.linalg.norm(direction)
    base = 3.0
    x0 = base + rng.normal(size=(n_per_class, d))
    x1 = base + rng.normal(size=(n_per_class, d)) + separation * direction
    x = np.clip(np.vstack([x0, x1]), 0.0, None)
    y = np.repeat([0, 1], n_per_class)
    return x, y


# ---------------------------------------------------------------------------
# Word-level cross-validation


def _stratified_folds(labels: np.ndarray, n_folds: int, rng: np.random.Generator | None) -> np.ndarray:
    fold = np.empty(labels.size, dtype=int)
    for c in np.unique(labels):
        members = np.nonzero(labels == c)[0]
        if rng is not None:
            members = rng.permutation(members)
        fold[members] = np.arange(members.size) % n_folds
    return fold


def _fit_binary_logistic(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Maximum-likelihood logistic weights (tiny L2 for uniqueness), via L-BFGS."""
    xb = np.hstack([x, np.ones((x.shape[0], 1))])
    y = np.asarray(y, dtype=np.float64)
    l2 = 1e-6

    def loss_grad(w):
        z = xb @ w
        # log(1 + exp(z)) computed stably
        log1pexp = np.where(z > 30, z, np.log1p(np.exp(np.minimum(z, 30))))
        loss = float(np.mean(log1pexp - y * z)) + 0.5 * l2 * float(w @ w)
        p = 1.0 / (1.0 + np.exp(-z))
        grad = xb.T @ (p - y) / xb.shape[0] + l2 * w
        return loss, grad

    res = optimize.minimize(loss_grad, np.zeros(xb.shape[1]), jac=True, method="L-BFGS-B")
    return res.x


def _best_threshold(probs: np.ndarray, y: np.ndarray) -> float:
    # Candidate cuts fall midway between consecutive distinct probabilities,
    # so on separable data the chosen threshold sits mid-gap rather than on
    # a training point.
    uniq = np.unique(probs)
    mids = (uniq[:-1] + uniq[1:]) / 2.0 if uniq.size > 1 else np.empty(0)
    candidates = np.concatenate(([0.0], mids, [1.0 + 1e-12]))
    best_t, best_acc = 0.5, -1.0
    for t in candidates:
        acc = float(np.mean((probs >= t) == (y == 1)))
        if acc > best_acc:
            best_acc, best_t = acc, float(t)
    return best_t


def word_level_cv(
    features: np.ndarray,
    labels: np.ndarray,
    feature_subset: str = "ALL",
    n_folds: int = 5,
    rng: np.random.Generator | None = None,
) -> float:
    """Stratified k-fold accuracy of a binary logistic word classifier.

    The decision threshold is tuned on each training split (maximizing
    training accuracy) before scoring the held-out fold. feature_subset is
    one of ALL (18 columns), ZM (15), SLD-CW (3).
    """
    if feature_subset not in FEATURE_SUBSETS:
        raise ValidationError(
            f"unknown feature subset {feature_subset!r}; expected one of {sorted(FEATURE_SUBSETS)}"
        )
    cols = list(FEATURE_SUBSETS[feature_subset])
    x = np.asarray(features, dtype=np.float64)[:, cols]
    y = np.asarray(labels, dtype=int)
    class_counts = np.bincount(y)
    if np.count_nonzero(class_counts) < 2:
        raise ValidationError("word-level CV needs two classes present")
    if class_counts[class_counts > 0].min() < n_folds:
        raise InsufficientDataError(f"need >= {n_folds} samples per class for {n_folds}-fold CV")

    fold = _stratified_folds(y, n_folds, rng)
    accs = []
    for f in range(n_folds):
        train, test = fold != f, fold == f
        mu = x[train].mean(axis=0)
        sd = x[train].std(axis=0)
        sd[sd == 0.0] = 1.0
        xtr = (x[train] - mu) / sd
        xte = (x[test] - mu) / sd
        w = _fit_binary_logistic(xtr, y[train])
        p_train = 1.0 / (1.0 + np.exp(-(np.hstack([xtr, np.ones((xtr.shape[0], 1))]) @ w)))
        thr = _best_threshold(p_train, y[train])
        p_test = 1.0 / (1.0 + np.exp(-(np.hstack([xte, np.ones((xte.shape[0], 1))]) @ w)))
        accs.append(float(np.mean((p_test >= thr) == (y[test] == 1))))
    return float(np.mean(accs))


# ---------------------------------------------------------------------------
# PCA projection


@dataclass
class PcaResult:
    coords: np.ndarray  # (n, 2)
    components: np.ndarray  # (2, d)
    explained_variance: np.ndarray  # (d,) all eigenvalues, descending


def pca_projection(bofs: np.ndarray) -> PcaResult:
    """Project pages onto the top-2 principal components of their BoFs.

    Sign convention: each component's largest-magnitude loading is made
    positive, so projections are reproducible across runs.
    """
    x = np.asarray(bofs, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3:
        raise InsufficientDataError("PCA projection needs at least 3 pages")
    centered = x - x.mean(axis=0)
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:2].copy()
    for i in range(2):
        j = int(np.argmax(np.abs(comps[i])))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    coords = centered @ comps.T
    explained = svals**2 / max(1, x.shape[0] - 1)
    return PcaResult(coords=coords, components=comps, explained_variance=explained)


# ---------------------------------------------------------------------------
# Report emission


CURVE_CSV_HEADER = ["strategy", "repetition", "labeled_count", "accuracy"]
AUC_CSV_HEADER = ["strategy", "mean_normalized_auc", "std_normalized_auc", "repetitions"]

_SVG_COLORS = {
    Strategy.S1: "#1f77b4",
    Strategy.S2: "#ff7f0e",
    Strategy.S3: "#2ca02c",
    Strategy.S4: "#d62728",
    Strategy.S5: "#9467bd",
    Strategy.S6: "#8c564b",
    Strategy.RANDOM: "#000000",
}


def emit_report(results: dict[Strategy, RepeatedResult], out_dir: str | Path) -> list[Path]:
    """Write learning-curve CSV, AUC summary CSV, and a self-contained HTML plot."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    curve_path = out / "learning_curves.csv"
    auc_path = out / "auc_summary.csv"
    html_path = out / "report.html"

    ordered = [s for s in STRATEGY_ORDER if s in results]
    with curve_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVE_CSV_HEADER)
        for strategy in ordered:
            for curve in results[strategy].curves:
                for cnt, acc in zip(curve.labeled_counts, curve.accuracies):
                    writer.writerow([strategy.value, curve.repetition, int(cnt), repr(float(acc))])

    with auc_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(AUC_CSV_HEADER)
        for strategy in ordered:
            r = results[strategy]
            writer.writerow(
                [strategy.value, repr(float(r.naucs.mean())), repr(float(r.naucs.std())), len(r.curves)]
            )

    html_path.write_text(_report_html(results, ordered), encoding="utf-8")
    return [curve_path, auc_path, html_path]


def _svg_header(width: int, height: int) -> str:
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">'
    )


def _curves_svg(results, ordered, width=560, height=360) -> str:
    ml, mr, mt, mb = 50, 130, 20, 40
    pw, ph = width - ml - mr, height - mt - mb
    parts = [_svg_header(width, height)]
    parts.append(f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#999"/>')
    if ordered:
        xs = results[ordered[0]].labeled_counts
        x_min, x_max = float(xs[0]), float(xs[-1])
        span = max(1.0, x_max - x_min)

        def px(v):
            return ml + (v - x_min) / span * pw

        def py(v):
            return mt + (1.0 - v) * ph

        for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
            yy = py(frac)
            parts.append(f'<line x1="{ml}" y1="{yy:.1f}" x2="{ml + pw}" y2="{yy:.1f}" stroke="#eee"/>')
            parts.append(f'<text x="{ml - 6}" y="{yy + 4:.1f}" text-anchor="end">{frac:.2f}</text>')
        for i in range(5):
            v = x_min + span * i / 4
            parts.append(
                f'<text x="{px(v):.1f}" y="{mt + ph + 16}" text-anchor="middle">{v:.0f}</text>'
            )
        for k, strategy in enumerate(ordered):
            r = results[strategy]
            pts = " ".join(
                f"{px(float(c)):.2f},{py(float(a)):.2f}"
                for c, a in zip(r.labeled_counts, r.mean_accuracy)
            )
            color = _SVG_COLORS[strategy]
            parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
            ly = mt + 14 + 16 * k
            parts.append(f'<line x1="{ml + pw + 10}" y1="{ly - 4}" x2="{ml + pw + 30}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
            parts.append(f'<text x="{ml + pw + 36}" y="{ly}">{strategy.value}</text>')
    parts.append(f'<text x="{ml + pw / 2:.0f}" y="{height - 6}" text-anchor="middle">labeled pages</text>')
    parts.append("</svg>")
    return "".join(parts)


def _auc_svg(results, ordered, width=560, height=300) -> str:
    ml, mr, mt, mb = 50, 20, 20, 60
    pw, ph = width - ml - mr, height - mt - mb
    parts = [_svg_header(width, height)]
    parts.append(f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#999"/>')
    if ordered:
        n = len(ordered)
        bar_w = pw / (1.5 * n + 0.5)
        for i, strategy in enumerate(ordered):
            mean = float(results[strategy].naucs.mean())
            x0 = ml + bar_w * (0.5 + 1.5 * i)
            y0 = mt + (1.0 - mean) * ph
            color = _SVG_COLORS[strategy]
            parts.append(
                f'<rect x="{x0:.1f}" y="{y0:.1f}" width="{bar_w:.1f}" height="{mt + ph - y0:.1f}" fill="{color}"/>'
            )
            parts.append(
                f'<text x="{x0 + bar_w / 2:.1f}" y="{mt + ph + 16}" text-anchor="middle">{strategy.value}</text>'
            )
            parts.append(
                f'<text x="{x0 + bar_w / 2:.1f}" y="{y0 - 4:.1f}" text-anchor="middle">{mean:.3f}</text>'
            )
        for frac in (0.0, 0.5, 1.0):
            yy = mt + (1.0 - frac) * ph
            parts.append(f'<text x="{ml - 6}" y="{yy + 4:.1f}" text-anchor="end">{frac:.1f}</text>')
    parts.append("</svg>")
    return "".join(parts)


def _report_html(results, ordered) -> str:
    return (
        "<!DOCTYPE html><html><head><meta charset='utf-8'>"
        "<title>Active-learning report</title></head><body>"
        "<h1>Active-learning simulation</h1>"
        "<h2>(a) Learning curves (mean over repetitions)</h2>"
        + _curves_svg(results, ordered)
        + "<h2>(b) Normalized AUC</h2>"
        + _auc_svg(results, ordered)
        + "</body></html>"
    )
