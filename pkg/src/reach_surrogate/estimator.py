"""scikit-learn style estimator wrapping the GRU-GeoFNO surrogate."""
from __future__ import annotations

import logging
import time

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.metrics import r2_score
from sklearn.utils.validation import check_is_fitted

from .features import CHANNELS, NormStats, fit_norm_stats, kept_channels, make_windows, mode_count
from .ingest import static_features
from .model import ModelConfig, backward, forward, init_params
from .nn.optim import AdamWState, adamw_step
from .training import (
    TrainConfig,
    TrainingDivergence,
    TrainReport,
    loss,
    loss_and_grad,
    split_train_val,
)

__all__ = ["GRUGeoFNORegressor", "check_windows", "train_reach", "build_dataset"]

log = logging.getLogger(__name__)

_DTYPES = {"float64": np.float64, "float32": np.float32}


def check_windows(X, y=None, n_channels: int = len(CHANNELS)):
    """Validate window tensors [S, L, N, C] and optional targets [S, N, 2]."""
    X = np.asarray(X)
    if X.ndim != 4:
        raise ValueError(f"X must be a [samples, L, N, channels] array, got shape {X.shape}")
    if X.shape[-1] != n_channels:
        raise ValueError(f"X must carry {n_channels} channels, got {X.shape[-1]}")
    if X.shape[0] == 0:
        raise ValueError("X contains no samples")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains NaN or infinite values")
    if y is None:
        return X
    y = np.asarray(y)
    if y.shape != (X.shape[0], X.shape[2], 2):
        raise ValueError(f"y must have shape {(X.shape[0], X.shape[2], 2)}, got {y.shape}")
    if not np.all(np.isfinite(y)):
        raise ValueError("y contains NaN or infinite values")
    return X, y


class GRUGeoFNORegressor(RegressorMixin, BaseEstimator):
    """Next-hour (H, Q) regressor for a single reach.

    ``fit`` takes raw (physical unit) windows ``X`` [S, L, N, 8] in the
    canonical channel order and next-hour targets ``y`` [S, N, 2]. Samples
    must be in temporal order: the final ``val_fraction`` becomes the
    validation split and normalisation statistics come from the rest.

    Parameters
    ----------
    hidden, max_modes, seq_len, n_blocks, residual
        Network shape; see :class:`~reach_surrogate.model.ModelConfig`.
    epochs, lr, batch_size, weight_decay, smoothness_weight, val_fraction
        Training protocol.
    drop_channels
        Feature channels withheld from the network (ablation mask).
    dtype
        ``"float64"`` (default) or ``"float32"`` for the faster mode.
    random_state
        Seed for initialisation and mini-batch shuffling.
    """

    def __init__(
        self,
        hidden=96,
        max_modes=48,
        seq_len=12,
        n_blocks=1,
        residual=False,
        epochs=60,
        lr=2e-4,
        batch_size=16,
        weight_decay=1e-2,
        smoothness_weight=0.0,
        val_fraction=0.2,
        drop_channels=(),
        dtype="float64",
        random_state=0,
        verbose=0,
    ):
        self.hidden = hidden
        self.max_modes = max_modes
        self.seq_len = seq_len
        self.n_blocks = n_blocks
        self.residual = residual
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.smoothness_weight = smoothness_weight
        self.val_fraction = val_fraction
        self.drop_channels = drop_channels
        self.dtype = dtype
        self.random_state = random_state
        self.verbose = verbose

    # ------------------------------------------------------------ config views

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig(
            hidden=self.hidden,
            max_modes=self.max_modes,
            seq_len=self.seq_len,
            in_channels=len(kept_channels(self.drop_channels)),
            n_blocks=self.n_blocks,
            residual=self.residual,
        )

    @property
    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            lr=self.lr,
            batch_size=self.batch_size,
            smoothness_weight=self.smoothness_weight,
            val_fraction=self.val_fraction,
            weight_decay=self.weight_decay,
            seed=self.random_state,
        )

    def _np_dtype(self):
        try:
            return _DTYPES[self.dtype]
        except KeyError:
            raise ValueError(f"dtype must be one of {sorted(_DTYPES)}, got {self.dtype!r}") from None

    # ------------------------------------------------------------ internals

    def _prepare(self, X, stats: NormStats, dtype):
        idx = [CHANNELS.index(c) for c in self.channels_]
        mean = stats.mean[idx]
        std = stats.std[idx]
        return ((X[..., idx] - mean) / std).astype(dtype)

    def _scale_targets(self, y, stats, dtype):
        return ((y - stats.mean[:2]) / stats.std[:2]).astype(dtype)

    def _forward_batched(self, params, Xn, chunk=256):
        coord = self.x_coord_
        outs = [forward(params, Xn[i : i + chunk], coord, self.residual)[0] for i in range(0, len(Xn), chunk)]
        return np.concatenate(outs, axis=0)

    def _eval_loss(self, params, Xn, yn):
        if len(Xn) == 0:
            return float("nan")
        return loss(self._forward_batched(params, Xn), yn, self.smoothness_weight)

    # ------------------------------------------------------------ public API

    def fit(self, X, y, x_coord=None):
        X, y = check_windows(X, y)
        cfg = self.train_config
        model_cfg = self.model_config
        if X.shape[1] != model_cfg.seq_len:
            raise ValueError(f"windows have length {X.shape[1]}, model expects {model_cfg.seq_len}")
        dtype = self._np_dtype()
        S, L, N, _ = X.shape
        self.channels_ = kept_channels(self.drop_channels)
        self.n_features_in_ = len(CHANNELS)
        self.n_xs_ = N
        self.k_max_ = mode_count(N, self.max_modes)
        coord = X[0, 0, :, CHANNELS.index("x_coord")] if x_coord is None else np.asarray(x_coord, float)
        if coord.shape != (N,):
            raise ValueError(f"x_coord must have shape ({N},)")
        self.x_coord_ = coord

        train_idx, val_idx = split_train_val(np.arange(S), cfg.val_fraction)
        stats = fit_norm_stats(X[train_idx])
        self.norm_stats_ = stats
        Xn = self._prepare(X, stats, dtype)
        yn = self._scale_targets(y, stats, dtype)
        X_tr, y_tr = Xn[train_idx], yn[train_idx]
        X_va, y_va = Xn[val_idx], yn[val_idx]

        rng = np.random.default_rng(cfg.seed)
        params = init_params(model_cfg, N, rng, dtype)
        opt = AdamWState()
        report = TrainReport()
        best = None
        best_val = np.inf
        for epoch in range(1, cfg.epochs + 1):
            t_start = time.perf_counter()
            order = rng.permutation(len(X_tr))
            running = 0.0
            for start in range(0, len(order), cfg.batch_size):
                batch = order[start : start + cfg.batch_size]
                pred, cache = forward(params, X_tr[batch], coord, self.residual)
                value, dpred = loss_and_grad(pred, y_tr[batch], cfg.smoothness_weight)
                if not np.isfinite(value):
                    raise TrainingDivergence(epoch, value)
                grads = backward(dpred, cache, params)
                adamw_step(params, grads, opt, lr=cfg.lr, weight_decay=cfg.weight_decay)
                running += value * len(batch)
            train_loss = running / len(order)
            val_loss = self._eval_loss(params, X_va, y_va)
            if not np.isfinite(train_loss) or (len(X_va) and not np.isfinite(val_loss)):
                raise TrainingDivergence(epoch, train_loss if not np.isfinite(train_loss) else val_loss)
            report.train_loss.append(train_loss)
            report.val_loss.append(val_loss if len(X_va) else None)
            report.epoch_seconds.append(time.perf_counter() - t_start)
            if len(X_va) and val_loss < best_val:
                best_val = val_loss
                best = {k: v.copy() for k, v in params.items()}
                report.best_epoch = epoch
            if self.verbose:
                log.info("epoch %d train %.6g val %.6g (%.1fs)", epoch, train_loss, val_loss,
                         report.epoch_seconds[-1])
        if best is None:
            best = params
            report.best_epoch = cfg.epochs
        self.params_ = best
        self.report_ = report
        self.best_epoch_ = report.best_epoch
        return self

    def predict_normalized(self, Xn):
        """Forward pass on windows already normalised and channel-masked."""
        check_is_fitted(self, "params_")
        return self._forward_batched(self.params_, Xn)

    def transform_windows(self, X):
        """Normalise raw windows and keep only the model's channels."""
        check_is_fitted(self, "params_")
        X = check_windows(X)
        return self._prepare(X, self.norm_stats_, self.params_["enc_W"].dtype)

    def scale_targets(self, y):
        check_is_fitted(self, "params_")
        return self._scale_targets(np.asarray(y), self.norm_stats_, self.params_["enc_W"].dtype)

    def predict(self, X):
        """Next-hour (H, Q) in physical units, shape [S, N, 2]."""
        check_is_fitted(self, "params_")
        X = check_windows(X)
        if X.shape[2] != self.n_xs_:
            raise ValueError(f"model was fitted on {self.n_xs_} cross-sections, X has {X.shape[2]}")
        out = self.predict_normalized(self._prepare(X, self.norm_stats_, self.params_["enc_W"].dtype))
        stats = self.norm_stats_
        return out.astype(np.float64) * stats.std[:2] + stats.mean[:2]

    def score(self, X, y, sample_weight=None):
        """Coefficient of determination over all (section, variable) outputs."""
        pred = self.predict(X)
        y = np.asarray(y)
        return r2_score(y.reshape(len(y), -1), pred.reshape(len(pred), -1), sample_weight=sample_weight)


def build_dataset(reach, segments, L: int = 12, dtype=np.float64):
    """Concatenate one-step windows of several (state, forcings) segments in order.

    Windows never straddle a segment boundary.
    """
    static4 = static_features(reach)
    Xs, ys = [], []
    for state, forcings in segments:
        X, y = make_windows(state, static4, forcings, L, dtype)
        Xs.append(X)
        ys.append(y)
    return np.concatenate(Xs), np.concatenate(ys)


def train_reach(reach, segments, config: TrainConfig | None = None, model_config: ModelConfig | None = None,
                drop_channels=(), dtype="float64") -> GRUGeoFNORegressor:
    """Train one surrogate for ``reach`` on ``segments`` of ground truth.

    The fitted estimator carries the parameters (``params_``), the
    normalisation statistics (``norm_stats_``) and the per-epoch report
    (``report_``).
    """
    config = config or TrainConfig()
    model_config = model_config or ModelConfig()
    X, y = build_dataset(reach, segments, model_config.seq_len)
    est = GRUGeoFNORegressor(
        hidden=model_config.hidden,
        max_modes=model_config.max_modes,
        seq_len=model_config.seq_len,
        n_blocks=model_config.n_blocks,
        residual=model_config.residual,
        epochs=config.epochs,
        lr=config.lr,
        batch_size=config.batch_size,
        weight_decay=config.weight_decay,
        smoothness_weight=config.smoothness_weight,
        val_fraction=config.val_fraction,
        drop_channels=tuple(drop_channels),
        dtype=dtype,
        random_state=config.seed,
    )
    return est.fit(X, y, x_coord=reach.x_coord)
