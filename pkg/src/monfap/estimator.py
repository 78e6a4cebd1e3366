"""scikit-learn compatible wrapper around the MoNFAP network."""

import logging

import numpy as np
import torch
import torch.nn.functional as F
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .losses import total_loss
from .metrics import evaluate_predictions
from .model import ModelConfig, MoNFAP
from .training import (
    TrainingDiverged,
    derive_seed,
    load_checkpoint,
    poly_factor,
    save_checkpoint,
    shape_mismatches,
)
from .validation import check_images, check_labels, check_masks

logger = logging.getLogger(__name__)

MODEL_PARAMS = (
    "base_channels",
    "blocks_per_stage",
    "top_k",
    "w_im",
    "theta",
    "mask_threshold",
    "heads",
    "positional",
    "use_noise",
)


class CheckpointMismatch(ValueError):
    """Checkpoint tensors do not fit the configured architecture."""


class MoNFAPDetector(ClassifierMixin, BaseEstimator):
    """Multi-face forgery detector and localizer.

    ``fit(X, y, masks)`` trains on images ``X`` of shape (N, 3, H, W) in
    [0, 1], labels ``y`` (0 genuine, 1 manipulated) and binary masks
    (N, H, W). ``predict`` / ``predict_proba`` give image-level decisions and
    ``predict_mask`` returns full-resolution binary forgery masks.

    Training uses AdamW with a poly learning-rate decay, random horizontal
    flips, and re-projects the constrained noise kernels after every step.
    """

    def __init__(
        self,
        base_channels=16,
        blocks_per_stage=2,
        top_k=4,
        w_im=0.1,
        theta=0.7,
        mask_threshold=0.5,
        heads=0,
        positional=False,
        use_noise=True,
        lam=10.0,
        learning_rate=6e-5,
        beta1=0.9,
        beta2=0.999,
        weight_decay=0.01,
        poly_power=0.9,
        max_iter=100,
        batch_size=8,
        hflip=True,
        log_every=10,
        random_state=0,
    ):
        self.base_channels = base_channels
        self.blocks_per_stage = blocks_per_stage
        self.top_k = top_k
        self.w_im = w_im
        self.theta = theta
        self.mask_threshold = mask_threshold
        self.heads = heads
        self.positional = positional
        self.use_noise = use_noise
        self.lam = lam
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.weight_decay = weight_decay
        self.poly_power = poly_power
        self.max_iter = max_iter
        self.batch_size = batch_size
        self.hflip = hflip
        self.log_every = log_every
        self.random_state = random_state

    def model_config(self):
        return ModelConfig(**{name: getattr(self, name) for name in MODEL_PARAMS}).validate()

    def _build_model(self):
        config = self.model_config()
        seed = derive_seed(self.random_state, "init")
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            generator = torch.Generator().manual_seed(seed)
            return MoNFAP(config, generator=generator)

    def _validate_training_params(self):
        if self.lam <= 0:
            raise ValueError(f"lam must be positive, got {self.lam}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.max_iter < 1 or self.batch_size < 1:
            raise ValueError("max_iter and batch_size must be >= 1")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")

    def fit(self, X, y, masks=None, callback=None, warm_start=False):
        """Train for ``max_iter`` optimizer steps.

        ``callback(record, estimator)`` is called every ``log_every`` steps
        and after the last one with a dict of loss components.
        """
        X = check_images(X)
        y = check_labels(y, X.shape[0])
        masks = check_masks(masks, X, y)
        self._validate_training_params()
        if not (warm_start and hasattr(self, "model_")):
            self.model_ = self._build_model()
            self.n_iter_ = 0
            self.loss_history_ = []
        self.classes_ = np.array([0, 1])
        model = self.model_
        model.train()
        optimizer = torch.optim.AdamW(
            model.parameters(),
            lr=self.learning_rate,
            betas=(self.beta1, self.beta2),
            weight_decay=self.weight_decay,
        )
        order_rng = np.random.default_rng(derive_seed(self.random_state, "order"))
        flip_rng = np.random.default_rng(derive_seed(self.random_state, "augment"))
        gate_gen = torch.Generator().manual_seed(derive_seed(self.random_state, "gate"))
        images = torch.as_tensor(X, dtype=torch.float32)
        targets = torch.as_tensor(masks)
        labels = torch.as_tensor(y)
        n = len(X)
        batch = min(self.batch_size, n)
        queue = np.empty(0, dtype=np.int64)
        for step in range(self.max_iter):
            if len(queue) < batch:
                queue = np.concatenate([queue, order_rng.permutation(n)])
            index, queue = queue[:batch], queue[batch:]
            xb, mb, yb = images[index], targets[index], labels[index]
            if self.hflip:
                flip = torch.as_tensor(flip_rng.random(batch) < 0.5)
                xb = torch.where(flip[:, None, None, None], xb.flip(-1), xb)
                mb = torch.where(flip[:, None, None], mb.flip(-1), mb)
            for group in optimizer.param_groups:
                group["lr"] = self.learning_rate * poly_factor(step, self.max_iter, self.poly_power)
            output = model(xb, generator=gate_gen)
            losses = total_loss(output, mb, yb, self.lam)
            if not torch.isfinite(losses.total):
                raise TrainingDiverged(f"non-finite loss at iteration {self.n_iter_}: {losses.as_dict()}")
            optimizer.zero_grad(set_to_none=True)
            losses.total.backward()
            optimizer.step()
            model.project()
            self.n_iter_ += 1
            if (step + 1) % self.log_every == 0 or step + 1 == self.max_iter:
                record = {"iter": self.n_iter_, "lr": optimizer.param_groups[0]["lr"], **losses.as_dict()}
                self.loss_history_.append(record)
                logger.info("iter %d loss %.5f", self.n_iter_, record["loss"])
                if callback is not None:
                    callback(record, self)
        model.eval()
        return self

    def _forward(self, X, batch_size=16):
        check_is_fitted(self, "model_")
        X = check_images(X)
        model = self.model_
        model.eval()
        logits, masks = [], []
        with torch.no_grad():
            for start in range(0, len(X), batch_size):
                xb = torch.as_tensor(X[start : start + batch_size], dtype=torch.float32)
                out = model(xb)
                logits.append(out.Y.double().numpy())
                up = F.interpolate(out.M, size=xb.shape[-2:], mode="bilinear", align_corners=False)
                masks.append(up.argmax(dim=1).to(torch.uint8).numpy())
        return np.concatenate(logits), np.concatenate(masks)

    def decision_function(self, X):
        """Fake-minus-real image logit."""
        logits, _ = self._forward(X)
        return logits[:, 1] - logits[:, 0]

    def predict_proba(self, X):
        logits, _ = self._forward(X)
        shifted = logits - logits.max(axis=1, keepdims=True)
        probs = np.exp(shifted)
        return probs / probs.sum(axis=1, keepdims=True)

    def predict(self, X):
        logits, _ = self._forward(X)
        return self.classes_[logits.argmax(axis=1)]

    def predict_mask(self, X):
        """Binary (N, H, W) forgery masks from the channel argmax of upsampled mask logits."""
        _, masks = self._forward(X)
        return masks

    def evaluate(self, X, y, masks, average="micro"):
        """ACC / AUC / F1-f / IoU-f report for a labelled set."""
        X = check_images(X)
        y = check_labels(y, len(X))
        masks = check_masks(masks, X, y)
        logits, pred = self._forward(X)
        return evaluate_predictions(logits, pred, masks, y, average=average)

    def loss_components(self, X, y, masks, batch_size=16):
        """Sample-weighted mean of each loss term over a labelled set, in evaluation mode."""
        check_is_fitted(self, "model_")
        X = check_images(X)
        y = check_labels(y, len(X))
        masks = check_masks(masks, X, y)
        self.model_.eval()
        sums = {}
        with torch.no_grad():
            for start in range(0, len(X), batch_size):
                sl = slice(start, start + batch_size)
                xb = torch.as_tensor(X[sl], dtype=torch.float32)
                out = self.model_(xb)
                parts = total_loss(out, torch.as_tensor(masks[sl]), torch.as_tensor(y[sl]), self.lam)
                for key, value in parts.as_dict().items():
                    sums[key] = sums.get(key, 0.0) + value * len(xb)
        return {key: value / len(X) for key, value in sums.items()}

    def save(self, path, extra=None):
        check_is_fitted(self, "model_")
        info = {"n_iter": self.n_iter_, **(extra or {})}
        save_checkpoint(path, self.model_.state_dict(), self.get_params(), self.random_state, info)

    @classmethod
    def load(cls, path, **overrides):
        """Restore a fitted estimator; architecture overrides must match the stored tensors."""
        payload = load_checkpoint(path)
        params = {**payload["params"], **overrides}
        est = cls(**params)
        model = est._build_model()
        problems = shape_mismatches(model.state_dict(), payload["state_dict"])
        if problems:
            raise CheckpointMismatch("; ".join(problems))
        model.load_state_dict(payload["state_dict"])
        model.eval()
        est.model_ = model
        est.classes_ = np.array([0, 1])
        est.n_iter_ = payload["extra"].get("n_iter", 0)
        est.loss_history_ = []
        return est
