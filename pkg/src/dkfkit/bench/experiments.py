"""Seeded experiment runners.

Every (seed, filter) trial owns a generator derived from
``(master_seed, seed, crc32(filter))``; shared per-seed work (model
draw, simulation, learner fits) uses fixed streams of the same seed, so
results do not depend on how trials are scheduled.
"""
import csv
import io
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..dkf import DiscriminativeModel, dkf_filter, pf_dkf_reweight_loglik
from ..errors import ConfigError, DkfError
from ..filters import (
    GridPosterior,
    GridTransition,
    UkfConfig,
    ekf_step,
    gaussian_filter_loop,
    grid_step,
    iekf_step,
    kalman_filter,
    particle_filter,
    ukf_step,
)
from ..gaussian import GaussianBelief, symmetrize
from ..learn import (
    SupervisedSet,
    default_bandwidth_grid,
    fit_constant_q,
    fit_q_residuals,
    fit_state_dynamics,
    gp_fit,
    mlp_fit,
    nw_fit,
    ridge_epsilon,
    sparsify_octants,
)
from ..models import (
    BernoulliMixtureObs,
    BernoulliMoments,
    FloorDefaults,
    KalmanMixtureObs,
    LinearGaussianObs,
    LinearStateSpec,
    MixtureMoments,
    Trajectory,
    default_bernoulli_model,
    default_floor_model,
    default_mixture_model,
    simulate,
)
from .metrics import mean_abs_angular_error, normalized_rmse, rmse, tv_distance_grid
from .neural import NeuralDefaults, neural_surrogate, top_snr_feature
from .noise import FeatureStats, inject_noise, saturate_features

# fixed per-seed streams
_MODEL, _TRAIN, _TEST, _LEARN, _STATIONARY, _FILTER = range(6)


def _rng(*key):
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


def filter_rng(master_seed, seed, name):
    """Trial generator keyed by ``(master_seed, seed, crc32(name))``."""
    return _rng(master_seed, seed, _FILTER, zlib.crc32(name.encode("utf-8")))


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------


def _params(raw, allowed, kind):
    unknown = set(raw) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown {kind} model parameter(s): {', '.join(sorted(unknown))}")
    out = dict(allowed)
    out.update(raw)
    return out


def build_model(kind, params, rng):
    """Instantiate ``(dynamics, obs)`` for a model kind."""
    if kind == "linear":
        p = _params(params, {"d": 2, "n": 4, "a": 0.9, "noise": 1.0}, kind)
        state = LinearStateSpec.from_stationary(p["a"] * np.eye(p["d"]), np.eye(p["d"]))
        H = rng.standard_normal((p["n"], p["d"]))
        return state, LinearGaussianObs(H, np.zeros(p["n"]), p["noise"] * np.eye(p["n"]))
    if kind == "mixture":
        p = _params(params, {"n": 16, "d": 10, "n_pool": None, "reading": "all"}, kind)
        pool = p["n_pool"] or p["n"]
        if pool < p["n"]:
            raise ConfigError("n_pool must be >= n")
        H1 = rng.standard_normal((pool, p["d"]))
        return default_mixture_model(p["n"], rng, d=p["d"], reading=p["reading"], H1=H1)
    if kind == "bernoulli":
        p = _params(params, {"n": 12, "d": 3, "alpha": 0.001, "beta": 0.998, "reading": "all"}, kind)
        return default_bernoulli_model(p["n"], d=p["d"], reading=p["reading"], alpha=p["alpha"], beta=p["beta"])
    if kind == "floor":
        defaults = FloorDefaults()
        p = _params(params, {k: getattr(defaults, k) for k in defaults.__dataclass_fields__}, kind)
        return default_floor_model(FloorDefaults(**p))
    if kind == "neural":
        defaults = NeuralDefaults()
        p = _params(params, {k: getattr(defaults, k) for k in defaults.__dataclass_fields__}, kind)
        return neural_surrogate(rng, NeuralDefaults(**p))
    raise ConfigError(f"unknown model kind {kind!r}")


def exact_moments(dynamics, obs):
    """Closed-form ``(f, Q)`` batch evaluator, where one exists."""
    if not isinstance(dynamics, LinearStateSpec):
        raise ConfigError("exact moments need linear state dynamics")
    if isinstance(obs, LinearGaussianObs):
        return obs.kalman_moments(dynamics.S)
    if isinstance(obs, KalmanMixtureObs):
        return MixtureMoments(obs, dynamics.S)
    if isinstance(obs, BernoulliMixtureObs):
        return BernoulliMoments(obs, np.diag(dynamics.S))
    raise ConfigError(f"no closed-form moments for {type(obs).__name__}")


# ---------------------------------------------------------------------------
# learners
# ---------------------------------------------------------------------------

_LEARNER_OPTIONS = {
    "exact": {},
    "mlp": {"hidden_width": 20, "epochs": 3000, "step_size": 0.05, "q": "constant"},
    "nw": {"grid_points": 20, "q": "nw"},
    "gp": {"family": "rbf", "sparsify": None, "max_points": 1000, "q": "constant"},
}


def learner_options(spec):
    spec = dict(spec)
    kind = spec.pop("kind", "exact")
    if kind not in _LEARNER_OPTIONS:
        raise ConfigError(f"unknown learner {kind!r}")
    return kind, _params(spec, _LEARNER_OPTIONS[kind], f"{kind} learner")


def fit_learner(spec, data, rng):
    """Fit ``f`` on two thirds of ``data`` and ``Q`` on the rest.

    Returns ``{"f": model, "q": covariance}``; both parts serialize.
    """
    kind, opt = learner_options(spec)
    if kind == "exact":
        raise ConfigError("the exact learner is not fitted from data")
    fit_set, held = data.split(rng)
    if kind == "mlp":
        f = mlp_fit(fit_set, hidden_width=opt["hidden_width"], epochs=opt["epochs"],
                    step_size=opt["step_size"], seed=int(rng.integers(2 ** 31)))
    elif kind == "nw":
        f = nw_fit(fit_set, default_bandwidth_grid(fit_set.xs, opt["grid_points"]))
    else:
        if opt["sparsify"] == "octants":
            fit_set = sparsify_octants(fit_set)
        elif opt["sparsify"] is not None:
            raise ConfigError(f"unknown sparsification {opt['sparsify']!r}")
        if fit_set.m > opt["max_points"]:
            fit_set = fit_set.subset(np.sort(rng.choice(fit_set.m, opt["max_points"], replace=False)))
        f = gp_fit(fit_set, opt["family"])
    if opt["q"] == "constant":
        q = fit_constant_q(held, f.predict)
    elif opt["q"] == "nw":
        q = fit_q_residuals(held, f.predict)
    else:
        raise ConfigError(f"unknown covariance learner {opt['q']!r}")
    return {"f": f, "q": q}


def discriminative_model(bundle):
    """Wrap a fitted ``{"f", "q"}`` bundle as a :class:`DiscriminativeModel`."""
    f, q = bundle["f"], bundle["q"]

    def batch(X):
        X = np.atleast_2d(X)
        return f.predict(X), q(X)

    return DiscriminativeModel.from_batch(batch)


# ---------------------------------------------------------------------------
# per-seed context
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class SeedContext:
    """Everything a trial needs besides its own generator."""

    seed: int
    dynamics: object
    obs: object
    train: Trajectory
    test: Trajectory
    filter_state: object
    prior: GaussianBelief
    S_approx: np.ndarray
    preprocess: object = None
    feature_stats: FeatureStats = None
    top_feature: int = None
    dkf_init: str = "prior"
    learned: dict = field(default_factory=dict)
    ukf: UkfConfig = UkfConfig()

    def features(self, X):
        return X if self.preprocess is None else self.preprocess(X)

    @property
    def X_test(self):
        return self.features(self.test.observations)

    def dm(self, learner):
        if learner == "exact":
            return DiscriminativeModel.from_batch(exact_moments(self.dynamics, self.obs))
        return discriminative_model(self.learned[learner])

    def train_set(self):
        return SupervisedSet(self.features(self.train.observations), self.train.states)


def _learners_needed(cfg):
    default_kind = cfg.learner.get("kind", "exact")
    out = set()
    for name in cfg.filters:
        if name in ("dkf", "robust-dkf", "hybrid-ekf", "hybrid-ukf", "unfiltered") or name.startswith("pf-dkf"):
            out.add(default_kind)
        elif name.startswith("dkf:"):
            out.add(name[4:])
    return out


def build_context(cfg, seed, saturation=None):
    """Draw the model, simulate train/test data and fit learners for one seed."""
    m = cfg.master_seed
    dynamics, obs = build_model(cfg.model_kind, cfg.model_params, _rng(m, seed, _MODEL))
    train = simulate(dynamics, obs, cfg.train_T, _rng(m, seed, _TRAIN)) if cfg.train_T > 0 else None
    test = simulate(dynamics, obs, cfg.T, _rng(m, seed, _TEST))
    ukf = UkfConfig(**cfg.ukf)
    if isinstance(dynamics, LinearStateSpec):
        S_approx = dynamics.S
        prior = GaussianBelief(np.zeros(dynamics.dim), dynamics.S)
    else:
        mu, S_approx = dynamics.empirical_stationary(cfg.s_approx_samples, _rng(m, seed, _STATIONARY))
        prior = GaussianBelief(mu, S_approx)
    ctx = SeedContext(seed, dynamics, obs, train, test, dynamics, prior, S_approx, ukf=ukf)

    if cfg.model_kind == "neural":
        # decoder side: standardized features, learned dynamics, data-initialized DKF
        if train is None:
            raise ConfigError("the neural surrogate needs train_T > 0")
        stats = FeatureStats.from_block(train.observations)

        def prep(X, stats=stats):
            Zs = (np.asarray(X, dtype=float) - stats.mean) / stats.std
            return Zs if saturation is None else np.clip(Zs, -saturation, saturation)

        ctx.preprocess = prep
        ctx.feature_stats = stats
        ctx.top_feature = top_snr_feature(obs)
        ctx.filter_state = fit_state_dynamics(train.states)
        ctx.prior = GaussianBelief(np.zeros(2), ctx.filter_state.S)
        ctx.S_approx = ctx.filter_state.S
        ctx.dkf_init = "data"
    elif saturation is not None:
        raise ConfigError("saturation applies to the neural surrogate only")

    learn_rng = _rng(m, seed, _LEARN)
    for kind in sorted(_learners_needed(cfg)):
        if kind == "exact":
            continue
        if train is None:
            raise ConfigError(f"learner {kind!r} needs train_T > 0")
        spec = dict(cfg.learner) if cfg.learner.get("kind") == kind else {"kind": kind}
        ctx.learned[kind] = fit_learner(spec, ctx.train_set(), learn_rng)
    return ctx


# ---------------------------------------------------------------------------
# filters
# ---------------------------------------------------------------------------


def _linear_readout(ctx):
    """Linear-Gaussian observation model for the KF: exact when the model
    is linear-Gaussian, else least squares of features on states."""
    if isinstance(ctx.obs, LinearGaussianObs) and ctx.preprocess is None:
        return ctx.obs
    if ctx.train is None:
        raise ConfigError("a learned linear readout needs train_T > 0")
    X = ctx.features(ctx.train.observations)
    Z = ctx.train.states
    P = np.column_stack([Z, np.ones(Z.shape[0])])
    W = np.linalg.lstsq(P, X, rcond=None)[0]
    R = X - P @ W
    lam = symmetrize(R.T @ R / R.shape[0] + ridge_epsilon(X) * np.eye(X.shape[1]))
    return LinearGaussianObs(W[:-1].T, W[-1], lam)


def _gaussian_lambda(ctx):
    """Observation noise covariance for the EKF/IEKF/UKF."""
    lam = getattr(ctx.obs, "lam", None)
    if lam is not None:
        return lam
    if ctx.train is None:
        raise ConfigError("EKF/UKF on this model need train_T > 0 to estimate the noise covariance")
    R = ctx.train.observations - ctx.obs.mean(ctx.train.states)
    eps = ridge_epsilon(ctx.train.observations)
    return symmetrize(R.T @ R / R.shape[0] + eps * np.eye(R.shape[1]))


def _needs_linear(ctx, name):
    if not isinstance(ctx.filter_state, LinearStateSpec):
        raise ConfigError(f"filter {name!r} needs linear state dynamics; use hybrid-ekf or hybrid-ukf")


def run_filter(name, ctx, X, rng, learner_kind="exact"):
    """Run one named filter over feature rows ``X``.

    Returns ``(means, covs or None, fallback_count)``.
    """
    if name == "kf":
        _needs_linear(ctx, name)
        means, covs = kalman_filter(X, ctx.filter_state, _linear_readout(ctx))
        return means, covs, 0
    if name in ("ekf", "iekf", "ukf"):
        if ctx.preprocess is not None:
            raise ConfigError(f"{name} is not defined on preprocessed features")
        lam = _gaussian_lambda(ctx)
        obs, dyn = ctx.obs, ctx.dynamics
        if name == "ekf":
            def step(b, x):
                return ekf_step(b, dyn, obs.mean, obs.jacobian, lam, x)
        elif name == "iekf":
            def step(b, x):
                return iekf_step(b, dyn, obs.mean, obs.jacobian, lam, x)
        else:
            def step(b, x):
                return ukf_step(b, dyn, obs.mean, lam, ctx.ukf, x)
        means, covs = gaussian_filter_loop(X, step, ctx.prior)
        return means, covs, 0
    if name.startswith("pf:") or name.startswith("pf-dkf:"):
        if ctx.preprocess is not None:
            raise ConfigError("particle filters need the raw observation model")
        N = int(name.split(":")[1])
        if name.startswith("pf:"):
            loglik = ctx.obs.loglik
        else:
            loglik = pf_dkf_reweight_loglik(ctx.dm(learner_kind), ctx.S_approx, ctx.prior.mean)
        return particle_filter(X, ctx.dynamics, loglik, N, rng), None, 0
    if name == "unfiltered":
        F, Qs = ctx.dm(learner_kind).evaluate(X)
        return F, Qs, 0
    if name in ("hybrid-ekf", "hybrid-ukf"):
        r = dkf_filter(X, None, ctx.dm(learner_kind), variant=name, dynamics=ctx.dynamics,
                       S_approx=ctx.S_approx, cfg=ctx.ukf)
        return r.means, r.covs, r.fallback_count
    if name == "robust-dkf" or name == "dkf" or name.startswith("dkf:"):
        _needs_linear(ctx, name)
        learner = name[4:] if name.startswith("dkf:") else learner_kind
        variant = "robust" if name == "robust-dkf" else "exact"
        r = dkf_filter(X, ctx.filter_state, ctx.dm(learner), variant=variant, init=ctx.dkf_init)
        return r.means, r.covs, r.fallback_count
    raise ConfigError(f"unknown filter {name!r}")


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

_METRIC_FNS = {
    "rmse": rmse,
    "normalized_rmse": normalized_rmse,
    "mean_abs_angular_error": mean_abs_angular_error,
}


@dataclass(frozen=True)
class TrialRow:
    filter: str
    seed: int
    metrics: dict
    wall_time_seconds: float
    fallback_count: int
    error: str = ""

    @property
    def ok(self):
        return not self.error


@dataclass(frozen=True)
class MetricReport:
    name: str
    metrics: tuple
    rows: tuple

    @property
    def failed(self):
        return [r for r in self.rows if not r.ok]

    def values(self, filter_name, metric):
        return np.array([r.metrics[metric] for r in self.rows if r.filter == filter_name and r.ok])

    def summary(self):
        """``{filter: {metric: (mean, sample std)}}`` over successful seeds."""
        out = {}
        for f in dict.fromkeys(r.filter for r in self.rows):
            stats = {}
            for m in self.metrics + ("wall_time_seconds",):
                if m == "wall_time_seconds":
                    v = np.array([r.wall_time_seconds for r in self.rows if r.filter == f and r.ok])
                else:
                    v = self.values(f, m)
                if v.size:
                    stats[m] = (float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0)
            out[f] = stats
        return out

    def to_csv(self):
        return write_report_csv(self)


def _fmt(v):
    if v is None or v == "":
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


TIMING_COLUMNS = ("wall_time_seconds",)


def write_report_csv(report):
    """Rows per (filter, seed), then ``mean`` and ``std`` rows per filter."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ["filter", "seed", "status"] + list(report.metrics) + ["wall_time_seconds", "fallback_count", "error"]
    w.writerow(cols)
    for r in report.rows:
        vals = [r.metrics.get(m) if r.ok else None for m in report.metrics]
        w.writerow([r.filter, r.seed, "ok" if r.ok else "failed"] + [_fmt(v) for v in vals]
                   + [_fmt(r.wall_time_seconds), r.fallback_count if r.ok else "", r.error])
    for f, stats in report.summary().items():
        for k, label in ((0, "mean"), (1, "std")):
            vals = [stats.get(m, (None, None))[k] for m in report.metrics]
            wt = stats.get("wall_time_seconds", (None, None))[k]
            w.writerow([f, label, "summary"] + [_fmt(v) for v in vals] + [_fmt(wt), "", ""])
    return buf.getvalue()


def strip_columns(csv_text, columns=TIMING_COLUMNS):
    """Drop named columns, e.g. to compare runs ignoring wall times."""
    rows = list(csv.reader(io.StringIO(csv_text)))
    keep = [i for i, c in enumerate(rows[0]) if c not in columns]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for r in rows:
        w.writerow([r[i] for i in keep])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# runners
# ---------------------------------------------------------------------------


def _trial(cfg, ctx, name, X=None):
    X = ctx.X_test if X is None else X
    rng = filter_rng(cfg.master_seed, ctx.seed, name)
    learner = cfg.learner.get("kind", "exact")
    t0 = time.perf_counter()
    try:
        means, _, fb = run_filter(name, ctx, X, rng, learner)
        wall = max(time.perf_counter() - t0, 1e-9)
        metrics = {}
        for m in cfg.metrics:
            v = _METRIC_FNS[m](means, ctx.test.states)
            if not np.isfinite(v):
                raise DkfError(f"{m} is not finite")
            metrics[m] = v
        return TrialRow(name, ctx.seed, metrics, wall, int(fb))
    except (DkfError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        wall = max(time.perf_counter() - t0, 1e-9)
        return TrialRow(name, ctx.seed, {}, wall, 0, f"{type(exc).__name__}: {exc}")


def _contexts(cfg, pool, saturation=None):
    futs = {s: pool.submit(_safe_context, cfg, s, saturation) for s in cfg.seeds}
    return {s: f.result() for s, f in futs.items()}


def _safe_context(cfg, seed, saturation):
    try:
        return build_context(cfg, seed, saturation)
    except (DkfError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return f"{type(exc).__name__}: {exc}"


def run_experiment(cfg, threads=1):
    """Run every (filter, seed) trial; failures are recorded, not raised."""
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        ctxs = _contexts(cfg, pool)
        futs = {}
        for name in cfg.filters:
            for s in cfg.seeds:
                if isinstance(ctxs[s], str):
                    continue
                futs[(name, s)] = pool.submit(_trial, cfg, ctxs[s], name)
        rows = []
        for name in cfg.filters:
            for s in cfg.seeds:
                if isinstance(ctxs[s], str):
                    rows.append(TrialRow(name, s, {}, 1e-9, 0, ctxs[s]))
                else:
                    rows.append(futs[(name, s)].result())
    return MetricReport(cfg.name, tuple(cfg.metrics), tuple(rows))


@dataclass(frozen=True)
class RobustnessRow:
    filter: str
    seed: int
    saturation: float
    offset: float
    error: float
    failure: str = ""


def run_robustness(cfg, offsets=(0, 1, 2, 3, 5), saturation=None, threads=1):
    """Angular error per offset injected into the top-SNR feature.

    Without ``saturation`` only unsaturated rows are produced; with it,
    a second block uses decoders trained and evaluated on features
    clipped at ``saturation`` z-scores.
    """
    if cfg.model_kind != "neural":
        raise ConfigError("the robustness protocol runs on the neural surrogate")
    sats = [None] if saturation is None else [None, float(saturation)]
    rows = []
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for sat in sats:
            ctxs = _contexts(cfg, pool, sat)
            futs = []
            for name in cfg.filters:
                for s in cfg.seeds:
                    ctx = ctxs[s]
                    for off in offsets:
                        if isinstance(ctx, str):
                            futs.append((name, s, off, None, ctx))
                            continue
                        X = ctx.features(inject_noise(ctx.test.observations, ctx.top_feature, off,
                                                      ctx.feature_stats))
                        futs.append((name, s, off, pool.submit(_trial, _angular(cfg), ctx, name, X), ""))
            for name, s, off, fut, msg in futs:
                if fut is None:
                    rows.append(RobustnessRow(name, s, sat, off, float("nan"), msg))
                    continue
                r = fut.result()
                rows.append(RobustnessRow(name, s, sat, off,
                                          r.metrics.get("mean_abs_angular_error", float("nan")), r.error))
    return rows


def _angular(cfg):
    from dataclasses import replace
    return replace(cfg, metrics=("mean_abs_angular_error",))


def robustness_summary(rows):
    """Mean angular error per (saturation, filter, offset)."""
    out = {}
    for r in rows:
        if not r.failure:
            out.setdefault((r.saturation, r.filter, r.offset), []).append(r.error)
    return {k: float(np.mean(v)) for k, v in out.items()}


def write_robustness_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["saturation", "offset", "filter", "seed", "mean_abs_angular_error", "error"])
    for r in rows:
        w.writerow([_fmt(r.saturation), _fmt(float(r.offset)), r.filter, r.seed,
                    "" if r.failure else _fmt(r.error), r.failure])
    for (sat, f, off), v in robustness_summary(rows).items():
        w.writerow([_fmt(sat), _fmt(float(off)), f, "mean", _fmt(v), ""])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# consistency against the 1-D grid oracle
# ---------------------------------------------------------------------------


class IidMixtureObs:
    """Conditionally iid coordinates given a scalar state:
    ``x_i | z ~ 0.5 N(h_i z, 1) + 0.5 N(-h_i z, 1/8)``."""

    def __init__(self, h):
        self.h = np.asarray(h, dtype=float).ravel()
        self.var = np.array([1.0, 1.0 / 8.0])

    @property
    def dim(self):
        return self.h.shape[0]

    def sample(self, Z, rng):
        Z = np.atleast_2d(Z)
        sign = np.where(rng.random((Z.shape[0], self.dim)) < 0.5, 1.0, -1.0)
        sd = np.sqrt(np.where(sign > 0, self.var[0], self.var[1]))
        return sign * Z[:, :1] * self.h + sd * rng.standard_normal((Z.shape[0], self.dim))

    def loglik(self, x, Z):
        z = np.atleast_2d(Z)[:, :1]
        x = np.asarray(x, dtype=float)
        parts = []
        for sign, v in ((1.0, self.var[0]), (-1.0, self.var[1])):
            r = x[None, :] - sign * z * self.h[None, :]
            parts.append(np.log(0.5) - 0.5 * r * r / v - 0.5 * np.log(2 * np.pi * v))
        return np.logaddexp(parts[0], parts[1]).sum(axis=1)


class QuadratureMoments:
    """Conditional mean and variance of a scalar state under ``N(0, s)``
    by quadrature on a fixed grid."""

    def __init__(self, obs, s, grid):
        self.obs = obs
        self.grid = np.asarray(grid, dtype=float)
        self.log_prior = -0.5 * self.grid ** 2 / s

    def grid_loglik(self, X):
        """``log p(x_t | g_j)`` for every row and grid point, shape (T, G)."""
        return np.array([self.obs.loglik(x, self.grid[:, None]) for x in np.atleast_2d(X)])

    def from_loglik(self, L):
        lw = L + self.log_prior
        w = np.exp(lw - lw.max(axis=1, keepdims=True))
        w /= w.sum(axis=1, keepdims=True)
        m = w @ self.grid
        v = np.einsum("tj,tj->t", w, (self.grid[None, :] - m[:, None]) ** 2)
        return m[:, None], v[:, None, None]

    def __call__(self, X):
        return self.from_loglik(self.grid_loglik(X))


CONSISTENCY_FAMILIES = ("mixture", "vector-mixture", "bernoulli")


@dataclass(frozen=True)
class ConsistencyConfig:
    """``mixture`` has conditionally iid coordinates (exact moments by
    quadrature); ``vector-mixture`` draws one component for the whole
    observation vector; ``bernoulli`` uses equal-mass cells."""

    family: str = "mixture"
    n_list: tuple = (4, 16, 64, 256)
    repetitions: int = 20
    steps: int = 200
    grid_size: int = 2001
    grid_low: float = -10.0
    grid_high: float = 10.0
    a: float = 0.81
    master_seed: int = 0

    def __post_init__(self):
        if self.family not in CONSISTENCY_FAMILIES:
            raise ConfigError(f"unknown consistency family {self.family!r}")
        if len(self.n_list) < 2 or any(n < 1 for n in self.n_list):
            raise ConfigError("n_list needs at least two positive entries")
        if self.steps < 1 or self.repetitions < 1 or self.grid_size < 3:
            raise ConfigError("steps, repetitions and grid_size must be positive")

    @property
    def grid(self):
        return np.linspace(self.grid_low, self.grid_high, self.grid_size)


def _consistency_model(cc, n, H_pool):
    state = LinearStateSpec.from_stationary([[cc.a]], [[1.0]])
    if cc.family == "mixture":
        obs = IidMixtureObs(H_pool[:n])
        return state, obs, QuadratureMoments(obs, 1.0, cc.grid)
    if cc.family == "vector-mixture":
        H1 = H_pool[:n]
        obs = KalmanMixtureObs((0.5, 0.5), (H1, -H1), (np.eye(n), np.eye(n) / 8.0))
        return state, obs, MixtureMoments(obs, state.S)
    obs = BernoulliMixtureObs.equal_mass(n, state_dim=1)
    return state, obs, BernoulliMoments(obs, np.diag(state.S))


def median_tv(cc, n, rep, H_pool):
    """Median over steps of TV(DKF belief, grid posterior)."""
    state, obs, moments = _consistency_model(cc, n, H_pool)
    traj = simulate(state, obs, cc.steps, _rng(cc.master_seed, rep, _TEST, n))
    grid = cc.grid
    if isinstance(moments, QuadratureMoments):
        # share the likelihood table between the moments and the oracle
        L = moments.grid_loglik(traj.observations)
        F, Qs = moments.from_loglik(L)
        dm = DiscriminativeModel.from_batch(lambda X: (F, Qs))
    else:
        L = None
        dm = DiscriminativeModel.from_batch(moments)
    r = dkf_filter(traj.observations, state, dm)
    trans = GridTransition(grid, state)
    post = GridPosterior.from_gaussian(grid, 0.0, state.S[0, 0])
    tvs = np.empty(cc.steps)
    for t, x in enumerate(traj.observations):
        loglik = obs.loglik if L is None else (lambda _x, _g, row=L[t]: row)
        post = grid_step(post, trans, loglik, x)
        tvs[t] = tv_distance_grid(GaussianBelief(r.means[t], r.covs[t]), post)
    return float(np.median(tvs))


def _consistency_rep(cc, rep):
    H_pool = _rng(cc.master_seed, rep, _MODEL).standard_normal((max(cc.n_list), 1))
    return [median_tv(cc, n, rep, H_pool) for n in cc.n_list]


def run_consistency(cc, threads=1):
    """Median TV per (repetition, n); models are nested in ``n``."""
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        rows = list(pool.map(lambda rep: _consistency_rep(cc, rep), range(cc.repetitions)))
    return np.array(rows)


def decreasing_fraction(tv):
    """Per repetition, the fraction of adjacent n-pairs where TV fell."""
    return np.mean(np.diff(tv, axis=1) < 0, axis=1)


def write_consistency_csv(cc, tv):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["repetition", "n", "median_tv"])
    for rep in range(tv.shape[0]):
        for j, n in enumerate(cc.n_list):
            w.writerow([rep, n, _fmt(tv[rep, j])])
    frac = decreasing_fraction(tv)
    for rep in range(tv.shape[0]):
        w.writerow([rep, "decreasing_fraction", _fmt(frac[rep])])
    w.writerow(["all", "strictly_decreasing_share", _fmt(float(np.mean(frac == 1.0)))])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# trajectory and belief CSV
# ---------------------------------------------------------------------------


def write_trajectory_csv(traj):
    Z, X = traj.states, traj.observations
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"z{i + 1}" for i in range(Z.shape[1])] + [f"x{i + 1}" for i in range(X.shape[1])])
    for t in range(Z.shape[0]):
        w.writerow([t + 1] + [_fmt(v) for v in Z[t]] + [_fmt(v) for v in X[t]])
    return buf.getvalue()


def read_trajectory_csv(text, source="<trajectory>"):
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][:1] != ["t"]:
        raise ConfigError(f"{source}: missing 't' header")
    head = rows[0]
    zi = [i for i, c in enumerate(head) if c.startswith("z")]
    xi = [i for i, c in enumerate(head) if c.startswith("x")]
    if not zi or not xi or len(rows) < 2:
        raise ConfigError(f"{source}: need z and x columns and at least one row")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:]])
    except ValueError as exc:
        raise ConfigError(f"{source}: non-numeric entry: {exc}") from exc
    return Trajectory(data[:, zi], data[:, xi])


def write_belief_csv(means, covs, fallback):
    T, d = means.shape
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"mu{i + 1}" for i in range(d)]
               + [f"sigma{i + 1}{j + 1}" for i in range(d) for j in range(d)] + ["fallback"])
    for t in range(T):
        w.writerow([t + 1] + [_fmt(v) for v in means[t]] + [_fmt(v) for v in covs[t].ravel()]
                   + [int(fallback[t])])
    return buf.getvalue()
