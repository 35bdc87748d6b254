"""
Maximum-likelihood training, checkpoints, evaluation metrics and timing.
"""

import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import i0e, logsumexp

from .exceptions import FormatVersionMismatch, NonFiniteLoss, ShapeMismatch
from .flow import HAAR, TORUS, FlowModel
from .neural import Adam
from .rotations import euler_to_rotmat, geodesic_distance, rotmat_to_euler

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    layers: int = 24
    kernels: int = 64
    hidden: tuple = (64, 64)
    batch: int = 1024
    lr: float = 1e-4
    iterations: int = 50000
    seed: int = 0
    eval_every: int = 1000
    eval_n: int = 2000
    clip_norm: float = 100.0
    threads: int = 1
    checkpoint_path: str = None
    log_path: str = None

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        for name in ("layers", "kernels", "batch", "iterations", "eval_every", "threads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")


PRESETS = {
    "paper": TrainConfig(layers=24, kernels=64, batch=1024, lr=1e-4, iterations=50000),
    "desk": TrainConfig(layers=4, kernels=16, batch=256, lr=1e-3, iterations=5000, eval_every=500),
}


def preset(name, **overrides):
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    return replace(PRESETS[name], **overrides)


@dataclass
class MetricsReport:
    test_ll: float = None
    ll_mode: str = TORUS
    acc15: float = None
    acc30: float = None
    median_error_deg: float = None
    ms_per_iter: float = None
    extra: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(asdict(self))


# -- checkpoints ----------------------------------------------------------


def save_checkpoint(path, model, optimizer=None, seed=None, iteration=None, extra=None):
    """Write an .npz container: a JSON ``meta`` record plus one array per tensor."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "model": model.config(),
        "shapes": [list(p.shape) for p in model.parameters()],
        "seed": seed,
        "iteration": iteration,
        "optimizer": None if optimizer is None else optimizer.state_dict(),
        "extra": extra or {},
    }
    arrays = {f"p{i}": p for i, p in enumerate(model.parameters())}
    if optimizer is not None and optimizer.m:
        arrays.update({f"m{i}": m for i, m in enumerate(optimizer.m)})
        arrays.update({f"v{i}": v for i, v in enumerate(optimizer.v)})
    buf = io.BytesIO()
    np.savez(buf, meta=np.array(json.dumps(meta)), **arrays)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path):
    """Return (model, optimizer or None, meta)."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise FormatVersionMismatch(f"{path}: checkpoint version {meta.get('version')}")
        cfg = meta["model"]
        model = FlowModel(cfg["n_layers"], cfg["n_kernels"], cfg["context_width"],
                          hidden=tuple(cfg["hidden"]))
        params = model.parameters()
        if [list(p.shape) for p in params] != meta["shapes"]:
            raise ShapeMismatch(f"{path}: parameter shapes do not match the model config")
        for i, p in enumerate(params):
            p[...] = data[f"p{i}"]
        optimizer = None
        if meta["optimizer"] is not None:
            optimizer = Adam(**meta["optimizer"])
            if "m0" in data:
                optimizer.m = [data[f"m{i}"].copy() for i in range(len(params))]
                optimizer.v = [data[f"v{i}"].copy() for i in range(len(params))]
    return model, optimizer, meta


def model_card(model):
    """Human-readable summary with the definitions of both reporting modes."""
    return {
        **model.config(),
        "n_parameters": int(model.n_parameters()),
        "reporting_modes": {
            TORUS: "log density w.r.t. d(omega) d(phi) d(kappa) on [0, 2pi)^3",
            HAAR: "log density of the rotation w.r.t. the normalised Haar measure: "
                  "logsumexp over both Euler preimages + log(8 pi^2) - log|cos phi|",
        },
    }


# -- training ---------------------------------------------------------------


def _clip(grads, max_norm):
    norm = float(np.sqrt(sum(np.sum(g * g) for g in grads)))
    if max_norm and norm > max_norm:
        grads = [g * (max_norm / norm) for g in grads]
    return grads, norm


def train(config, dataset, model=None, log=None, progress=None):
    """
    Fit a flow by minibatch Adam on the torus-mode negative log-likelihood.

    Parameters
    ----------
    config : TrainConfig
    dataset : Dataset
    model : FlowModel, optional
        Continue training this model instead of building a fresh one.
    log : file-like, optional
        Receives one JSON line per evaluation snapshot.
    progress : callable, optional
        Called as ``progress(iteration, loss)`` after every step.

    Returns
    -------
    model, history (list of per-iteration losses)
    """
    if len(dataset.train) == 0:
        raise ValueError("training set is empty")
    x_eval = rotmat_to_euler(dataset.test[:config.eval_n]) if len(dataset.test) else None
    c_eval = None if dataset.test_context is None else dataset.test_context[:config.eval_n]
    return train_euler(config, rotmat_to_euler(dataset.train), dataset.train_context,
                       x_eval, c_eval, model=model, log=log, progress=progress)


def train_euler(config, x_train, c_train=None, x_eval=None, c_eval=None, model=None, log=None,
                progress=None):
    """train() on Euler-angle arrays; the rotation-free core used by the estimator."""
    rng = np.random.default_rng(config.seed)
    x_train = np.asarray(x_train, dtype=float)
    width = 0 if c_train is None else np.shape(c_train)[1]
    if len(x_train) == 0:
        raise ValueError("training set is empty")
    if model is None:
        model = FlowModel(config.layers, config.kernels, width, hidden=config.hidden,
                          seed=config.seed)
    elif model.context_width != width:
        raise ShapeMismatch(f"model context width {model.context_width} != data {width}")

    log_fh = open(config.log_path, "w") if (log is None and config.log_path) else log
    opt = Adam(lr=config.lr)
    params = model.parameters()
    history = []
    t0 = time.perf_counter()
    try:
        for it in range(config.iterations):
            idx = rng.integers(0, len(x_train), config.batch)
            loss, grads = model.nll_and_grad(x_train[idx], None if c_train is None else c_train[idx],
                                             threads=config.threads)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise NonFiniteLoss(f"non-finite loss at iteration {it}", batch_index=it)
            grads, _ = _clip(grads, config.clip_norm)
            opt.update(params, grads)
            history.append(float(loss))
            if progress is not None:
                progress(it, loss)
            last = it == config.iterations - 1
            if x_eval is not None and len(x_eval) and ((it + 1) % config.eval_every == 0 or last):
                test_ll = float(np.mean(model.log_prob(x_eval, c_eval)))
                record = {"iter": it + 1, "train_loss": float(loss), "test_ll": test_ll,
                          "wall_ms": 1000.0 * (time.perf_counter() - t0)}
                logger.info("iter %d loss %.4f test_ll %.4f", it + 1, loss, test_ll)
                if log_fh is not None:
                    log_fh.write(json.dumps(record) + "\n")
                    log_fh.flush()
    finally:
        if log_fh is not None and log_fh is not log:
            log_fh.close()
    if config.checkpoint_path:
        save_checkpoint(config.checkpoint_path, model, opt, seed=config.seed,
                        iteration=config.iterations)
    model.optimizer_ = opt
    return model, history


# -- evaluation -------------------------------------------------------------


def evaluate_ll(model, rotations, context=None, mode=TORUS):
    """Mean log-likelihood of a set of rotations (nats) in the requested mode."""
    return float(np.mean(model.log_prob_rotations(rotations, context, mode=mode)))


def pose_errors(predictions, truth):
    return np.degrees(geodesic_distance(predictions, truth))


def pose_metrics(predictions, truth):
    err = pose_errors(predictions, truth)
    return MetricsReport(acc15=float(np.mean(err < 15.0)), acc30=float(np.mean(err < 30.0)),
                         median_error_deg=float(np.median(err)))


def predict_modes(model, context, n_candidates=512, rng=None, chunk=64):
    """predict_mode for every row of ``context`` (or ``context`` = n for an unconditional model)."""
    rng = np.random.default_rng(rng)
    if model.context_width == 0:
        n_items = int(context)
        ctx = None
    else:
        ctx = np.asarray(context, dtype=float)
        n_items = ctx.shape[0]
    out = np.empty((n_items, 3, 3))
    for start in range(0, n_items, chunk):
        stop = min(start + chunk, n_items)
        m = stop - start
        c = None if ctx is None else np.repeat(ctx[start:stop], n_candidates, axis=0)
        cand = model.sample_euler(m * n_candidates, c, rng)
        lp = model.log_prob(cand, c).reshape(m, n_candidates)
        best = cand.reshape(m, n_candidates, 3)[np.arange(m), np.argmax(lp, axis=1)]
        out[start:stop] = euler_to_rotmat(best)
    return out


def evaluate_pose(model, rotations, context, n_candidates=512, rng=None, mode=TORUS):
    """Acc@15, Acc@30, median geodesic error of sample-argmax predictions, plus test LL."""
    pred = predict_modes(model, context if model.context_width else len(rotations),
                         n_candidates, rng)
    report = pose_metrics(pred, rotations)
    report.test_ll = evaluate_ll(model, rotations, context if model.context_width else None, mode)
    report.ll_mode = mode
    return report


def bench(config, dataset, n_iters=20, warmup=5):
    """Mean wall-clock milliseconds per training iteration (after warm-up)."""
    if n_iters < 10:
        raise ValueError("n_iters must be at least 10")
    rng = np.random.default_rng(config.seed)
    model = FlowModel(config.layers, config.kernels, dataset.context_width,
                      hidden=config.hidden, seed=config.seed)
    x = rotmat_to_euler(dataset.train)
    c = dataset.train_context
    opt = Adam(lr=config.lr)
    params = model.parameters()

    def step():
        idx = rng.integers(0, len(x), config.batch)
        _, grads = model.nll_and_grad(x[idx], None if c is None else c[idx], threads=config.threads)
        grads, _ = _clip(grads, config.clip_norm)
        opt.update(params, grads)

    for _ in range(warmup):
        step()
    t0 = time.perf_counter()
    for _ in range(n_iters):
        step()
    return 1000.0 * (time.perf_counter() - t0) / n_iters


# -- kernel density reference -------------------------------------------


class VonMisesKDE:
    """
    Product von Mises kernel density on the torus.

    The common concentration is chosen by held-out likelihood over a grid.
    """

    def __init__(self, concentrations=None, holdout=0.25, seed=0):
        self.concentrations = (np.geomspace(1.0, 1e4, 25) if concentrations is None
                               else np.asarray(concentrations, dtype=float))
        self.holdout = holdout
        self.seed = seed

    @staticmethod
    def _log_density(x, centres, kappa, chunk=512):
        out = np.empty(len(x))
        log_norm = 3.0 * (np.log(2.0 * np.pi) + np.log(i0e(kappa)) + kappa)
        for s in range(0, len(x), chunk):
            d = x[s:s + chunk, None, :] - centres[None, :, :]
            e = kappa * np.sum(np.cos(d), axis=-1) - log_norm
            out[s:s + chunk] = logsumexp(e, axis=1) - np.log(len(centres))
        return out

    def fit(self, x):
        x = np.asarray(x, dtype=float)
        rng = np.random.default_rng(self.seed)
        perm = rng.permutation(len(x))
        n_hold = max(1, int(self.holdout * len(x)))
        hold, fit = x[perm[:n_hold]], x[perm[n_hold:]]
        scores = [np.mean(self._log_density(hold, fit, k)) for k in self.concentrations]
        self.kappa_ = float(self.concentrations[int(np.argmax(scores))])
        self.centres_ = x
        return self

    def score_samples(self, x):
        return self._log_density(np.asarray(x, dtype=float), self.centres_, self.kappa_)
