"""Two-branch graph-convolutional network: shared trunk, classifier, corrector.

Inputs are DCT features laid out as ``(batch, J*3, K)``: one graph node per
joint coordinate, the K trajectory coefficients as its features. Every graph
convolution learns a dense ``(J*3, J*3)`` adjacency.

Corrector output is residual: ``corrected = input + R``. The classifier's
argmax label re-enters the corrector through a one-hot fully-connected
feedback layer whose output is concatenated after the corrector's first block.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from .engine import ops
from .engine.tensor import Tensor, parameter
from .exceptions import ShapeError, ValidationError
from .labels import NUM_LABELS, TAXONOMY
from .motion import DctMotion

TRAIN = "train"
DROPOUT_SCOPES = ("all", "trunk+classifier", "classifier", "none")
EVAL = "eval"


@dataclass(frozen=True)
class ModelConfig:
    n_joints: int = 17
    n_coefficients: int = 25
    hidden: int = 256
    trunk_blocks: int = 1
    classifier_blocks: int = 1
    corrector_blocks: int = 2
    gcb_layers: int = 2
    residual_init_scale: float = 0.01
    conv_channels: int = 32
    conv_layers: int = 2
    kernel_size: int = 3
    feedback_width: int = 256
    dropout: float = 0.5
    dropout_scope: str = "classifier"
    bn_momentum: float = 0.1
    n_labels: int = NUM_LABELS
    use_classifier: bool = True
    use_corrector: bool = True
    feedback: bool = True
    classifier_kind: str = "pooled"
    temporal_pool: bool = False
    adjacency_noise: float = 1e-3
    label_names: tuple = field(default_factory=lambda: tuple(f"{e}/{i}" for e, i in TAXONOMY))

    def __post_init__(self):
        object.__setattr__(self, "label_names", tuple(self.label_names))
        if not (self.use_classifier or self.use_corrector):
            raise ValidationError("a model needs at least one branch")
        if self.classifier_kind not in ("pooled", "simple"):
            raise ValidationError(f"unknown classifier kind {self.classifier_kind!r}")
        if self.feedback and not (self.use_classifier and self.use_corrector):
            raise ValidationError("feedback needs both branches")
        if self.corrector_blocks < 0 or self.gcb_layers < 1 or self.trunk_blocks < 0 or self.classifier_blocks < 0:
            raise ValidationError("block counts out of range")
        if len(self.label_names) != self.n_labels:
            raise ValidationError("label_names must list every category")
        if self.dropout_scope not in DROPOUT_SCOPES:
            raise ValidationError(f"dropout_scope must be one of {DROPOUT_SCOPES}")
        if not 0 <= self.dropout < 1:
            raise ValidationError("dropout must lie in [0, 1)")

    @property
    def n_nodes(self):
        return 3 * self.n_joints

    def to_dict(self):
        d = asdict(self)
        d["label_names"] = list(self.label_names)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def _xavier(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class FeedbackNet:
    """Parameters, batch-norm statistics and the forward pass."""

    def __init__(self, config=None, seed=0):
        self.config = config or ModelConfig()
        self.params = {}
        self.bn = {}
        self.reference = None
        # None: batch norm follows the training flag; a bool pins it
        self.bn_training = None
        self._build(np.random.default_rng(seed))

    # ------------------------------------------------------------------ setup

    def _param(self, name, value):
        self.params[name] = parameter(value, name)

    def _graph_conv(self, rng, name, f_in, f_out):
        cfg = self.config
        n = cfg.n_nodes
        noise = rng.uniform(-cfg.adjacency_noise, cfg.adjacency_noise, size=(n, n))
        self._param(f"{name}.adj", np.eye(n) + noise)
        self._param(f"{name}.weight", _xavier(rng, f_in, f_out, (f_in, f_out)))
        self._param(f"{name}.bias", np.zeros(f_out))

    def _layer(self, rng, name, f_in, f_out):
        self._graph_conv(rng, name, f_in, f_out)
        shape = (self.config.n_nodes, f_out)
        self._param(f"{name}.bn.gamma", np.ones(shape))
        self._param(f"{name}.bn.beta", np.zeros(shape))
        self.bn[name] = ops.BatchNormState(shape, momentum=self.config.bn_momentum)

    def _gcb(self, rng, name, width):
        for i in range(self.config.gcb_layers):
            self._layer(rng, f"{name}.{i}", width, width)
        return name

    def _build(self, rng):
        cfg = self.config
        h = cfg.hidden
        self._layer(rng, "trunk.in", cfg.n_coefficients, h)
        self.trunk_names = [self._gcb(rng, f"trunk.gcb.{i}", h) for i in range(cfg.trunk_blocks)]

        self.classifier_names = []
        if cfg.use_classifier:
            self.classifier_names = [self._gcb(rng, f"classifier.gcb.{i}", h) for i in range(cfg.classifier_blocks)]
            if cfg.classifier_kind == "pooled":
                c_in, k = 3, cfg.kernel_size
                for i in range(cfg.conv_layers):
                    c = cfg.conv_channels
                    self._param(f"classifier.conv.{i}.weight", _xavier(rng, c_in * k, c * k, (c, c_in, k)))
                    self._param(f"classifier.conv.{i}.bias", np.zeros(c))
                    c_in = c
                n_flat = c_in if cfg.temporal_pool else c_in * h
            else:
                n_flat = cfg.n_nodes * h
            self._param("classifier.out.weight", _xavier(rng, n_flat, cfg.n_labels, (n_flat, cfg.n_labels)))
            self._param("classifier.out.bias", np.zeros(cfg.n_labels))

        self.corrector_names = []
        if cfg.use_corrector:
            self.corrector_names = [self._gcb(rng, f"corrector.gcb.{i}", h) for i in range(cfg.corrector_blocks)]
            if cfg.feedback:
                w = cfg.feedback_width
                self._param("feedback.weight", _xavier(rng, cfg.n_labels, w, (cfg.n_labels, w)))
                self._param("feedback.bias", np.zeros(w))
                self._layer(rng, "corrector.merge", h + w, h)
            self._graph_conv(rng, "corrector.out", h, cfg.n_coefficients)
            self.params["corrector.out.weight"].value *= cfg.residual_init_scale

    def parameters(self):
        return list(self.params.values())

    # ---------------------------------------------------------------- layers

    def _apply_graph_conv(self, name, x):
        p = self.params
        y = ops.matmul(p[f"{name}.adj"], x)
        y = ops.matmul(y, p[f"{name}.weight"])
        return ops.add(y, p[f"{name}.bias"])

    def _dropout_rate(self, name):
        scope = self.config.dropout_scope
        branch = name.split(".", 1)[0]
        active = {
            "all": True,
            "trunk+classifier": branch in ("trunk", "classifier"),
            "classifier": branch == "classifier",
            "none": False,
        }[scope]
        return self.config.dropout if active else 0.0

    def _apply_layer(self, name, x, training, rng):
        p = self.params
        y = self._apply_graph_conv(name, x)
        bn_training = training if self.bn_training is None else self.bn_training
        y = ops.batch_norm(y, p[f"{name}.bn.gamma"], p[f"{name}.bn.beta"], self.bn[name], bn_training)
        y = ops.relu(y)
        return ops.dropout(y, self._dropout_rate(name), training, rng)

    def _apply_gcb(self, name, x, training, rng):
        y = x
        for i in range(self.config.gcb_layers):
            y = self._apply_layer(f"{name}.{i}", y, training, rng)
        return ops.add(x, y)

    def _check_input(self, x):
        cfg = self.config
        if x.ndim != 3 or x.shape[1:] != (cfg.n_nodes, cfg.n_coefficients):
            raise ShapeError("model input", x.shape, ("B", cfg.n_nodes, cfg.n_coefficients))

    # --------------------------------------------------------------- forward

    def trunk(self, x, training=False, rng=None):
        h = x if isinstance(x, Tensor) else Tensor(x)
        h = self._apply_layer("trunk.in", h, training, rng)
        for name in self.trunk_names:
            h = self._apply_gcb(name, h, training, rng)
        return h

    def classifier_head(self, h, training=False, rng=None):
        cfg = self.config
        p = self.params
        for name in self.classifier_names:
            h = self._apply_gcb(name, h, training, rng)
        b = h.shape[0]
        if cfg.classifier_kind == "pooled":
            width = h.shape[-1]
            y = ops.reshape(h, (b, cfg.n_joints, 3, width))
            y = ops.spatial_max_pool(y, joint_axis=1)
            for i in range(cfg.conv_layers):
                y = ops.relu(ops.conv1d(y, p[f"classifier.conv.{i}.weight"], p[f"classifier.conv.{i}.bias"]))
            if cfg.temporal_pool:
                y = ops.max_pool(y, axis=2)
            else:
                y = ops.reshape(y, (b, -1))
        else:
            y = ops.reshape(h, (b, -1))
        y = ops.matmul(y, p["classifier.out.weight"])
        return ops.add(y, p["classifier.out.bias"])

    def feed_label(self, labels):
        """Feedback feature ``(B, feedback_width)`` from integer labels (no gradient to the labels)."""
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        if np.any((labels < 0) | (labels >= self.config.n_labels)):
            raise ValidationError("feedback label outside the taxonomy")
        onehot = np.eye(self.config.n_labels)[labels]
        y = ops.matmul(Tensor(onehot), self.params["feedback.weight"])
        return ops.add(y, self.params["feedback.bias"])

    def corrector_head(self, x, h, labels=None, training=False, rng=None):
        cfg = self.config
        for i, name in enumerate(self.corrector_names):
            if i == 1 and cfg.feedback:
                h = self._merge_feedback(h, labels, training, rng)
            h = self._apply_gcb(name, h, training, rng)
        if len(self.corrector_names) < 2 and cfg.feedback:
            h = self._merge_feedback(h, labels, training, rng)
        residual = self._apply_graph_conv("corrector.out", h)
        return ops.add(x, residual)

    def _merge_feedback(self, h, labels, training, rng):
        b = h.shape[0]
        fb = self.feed_label(labels)
        fb = ops.reshape(fb, (b, 1, self.config.feedback_width))
        fb = ops.matmul(Tensor(np.ones((self.config.n_nodes, 1))), fb)
        h = ops.concat([h, fb], axis=-1)
        return self._apply_layer("corrector.merge", h, training, rng)

    def forward(self, x, training=False, rng=None, feedback_labels=None):
        """Joint pass of both branches.

        ``feedback_labels`` may hold a ground-truth index per sample, with -1
        meaning "use the classifier's argmax" (lowest index on ties). ``None``
        uses the argmax everywhere. Returns ``(logits, corrected, used_labels)``;
        absent branches yield ``None``.
        """
        x = np.asarray(x, dtype=np.float64)
        self._check_input(x)
        if training and rng is None:
            raise ValidationError("training mode needs a random generator for dropout")
        xt = Tensor(x)
        h = self.trunk(xt, training, rng)
        logits = corrected = used = None
        if self.config.use_classifier:
            logits = self.classifier_head(h, training, rng)
        if self.config.use_corrector:
            if self.config.feedback:
                used = np.argmax(logits.value, axis=1)
                if feedback_labels is not None:
                    given = np.asarray(feedback_labels, dtype=np.int64).reshape(-1)
                    used = np.where(given >= 0, given, used)
            corrected = self.corrector_head(xt, h, used, training, rng)
        return logits, corrected, used

    # ------------------------------------------------------------ state i/o

    def state_dict(self):
        state = {name: p.value.copy() for name, p in self.params.items()}
        for name, s in self.bn.items():
            state[f"{name}.bn.running_mean"] = s.running_mean.copy()
            state[f"{name}.bn.running_var"] = s.running_var.copy()
        return state

    def load_state_dict(self, state):
        for name, p in self.params.items():
            if name not in state:
                raise ValidationError(f"checkpoint lacks parameter {name}")
            if state[name].shape != p.value.shape:
                raise ShapeError(name, state[name].shape, p.value.shape)
            p.value = np.array(state[name], dtype=np.float64)
        for name, s in self.bn.items():
            s.running_mean = np.array(state[f"{name}.bn.running_mean"], dtype=np.float64)
            s.running_var = np.array(state[f"{name}.bn.running_var"], dtype=np.float64)


# ---------------------------------------------------------------------------
# DctMotion-level API


def stack_features(dcts):
    """Stack DctMotion objects into a ``(B, J*3, K)`` array."""
    return np.stack([d.as_features() for d in dcts])


def _batch(model, dct):
    single = isinstance(dct, DctMotion)
    items = [dct] if single else list(dct)
    return single, stack_features(items), items


def classify(model, dct, mode=EVAL, rng=None):
    """Logits ``(11,)`` for one DctMotion, or ``(B, 11)`` for a list."""
    single, x, _ = _batch(model, dct)
    logits, _, _ = model.forward(x, training=mode == TRAIN, rng=rng)
    return logits.value[0] if single else logits.value


def feed_label(model, logits_or_index):
    """Feedback feature for a label index, or for the argmax of a logit vector."""
    arr = np.asarray(logits_or_index)
    index = int(np.argmax(arr)) if arr.ndim >= 1 and arr.size > 1 else int(arr)
    return model.feed_label([index]).value[0]


def correct(model, dct, label_logits=None, mode=EVAL, rng=None):
    """Corrected DctMotion(s); feedback label = argmax of ``label_logits`` when given."""
    single, x, items = _batch(model, dct)
    labels = None
    if label_logits is not None and model.config.feedback:
        labels = np.argmax(np.atleast_2d(label_logits), axis=1)
    _, corrected, _ = model.forward(x, training=mode == TRAIN, rng=rng, feedback_labels=labels)
    out = [DctMotion.from_features(c, d.source_length, d.skeleton) for c, d in zip(corrected.value, items)]
    return out[0] if single else out


def end_to_end(model, dct, mode=EVAL, label_source="predicted", rng=None):
    """``(logits, corrected)`` from one shared pass.

    ``label_source`` is ``"predicted"`` or ground-truth index / indices.
    """
    single, x, items = _batch(model, dct)
    labels = None
    if not (isinstance(label_source, str) and label_source == "predicted"):
        labels = np.broadcast_to(np.asarray(label_source, dtype=np.int64), (len(items),))
    logits, corrected, _ = model.forward(x, training=mode == TRAIN, rng=rng, feedback_labels=labels)
    out = None
    if corrected is not None:
        out = [DctMotion.from_features(c, d.source_length, d.skeleton) for c, d in zip(corrected.value, items)]
    lv = None if logits is None else logits.value
    if single:
        return (None if lv is None else lv[0]), (None if out is None else out[0])
    return lv, out
