"""
The two networks: the branched verification model and the pointwise pattern
model.
"""

from dataclasses import asdict, dataclass, field
from typing import Any, Dict, NamedTuple, Optional, Tuple
import logging
import threading

import numpy as np

from motionid.errors import ShapeMismatch
from motionid.nn.layers import (
    Conv1d,
    Flatten,
    GlobalAvgPool,
    L2Normalize,
    Linear,
    Parameter,
    ReLU,
    Sequential,
    softmax,
)


logger = logging.getLogger(__name__)

INPUT_MEAN = "input_mean"
INPUT_STD = "input_std"


def _standardization(x: np.ndarray, axes: Tuple[int, ...]) -> Tuple[np.ndarray, np.ndarray]:
    mean = x.mean(axis=axes, keepdims=True)[0]
    std = x.std(axis=axes, keepdims=True)[0]
    std = np.where(std > 1e-8, std, 1.0)
    return mean, std


class Model:
    """
    Shared bookkeeping: named parameters, input standardization, state dicts.
    """

    dtype: Any
    input_mean: np.ndarray
    input_std: np.ndarray

    def __init__(self):
        self._lock = threading.Lock()

    def parameters(self) -> Dict[str, Parameter]:
        raise NotImplementedError

    def config_dict(self) -> Dict[str, Any]:
        raise NotImplementedError

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def standardize(self, x: np.ndarray) -> np.ndarray:
        return ((np.asarray(x) - self.input_mean) / self.input_std).astype(self.dtype)

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.parameters().items()}
        state[INPUT_MEAN] = self.input_mean
        state[INPUT_STD] = self.input_std
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        if missing:
            raise ShapeMismatch(f"State is missing parameters {sorted(missing)}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise ShapeMismatch(f"{name}: state {state[name].shape} vs model {p.shape}")
            p.data = np.array(state[name], dtype=p.data.dtype)
            p.zero_grad()
        self.input_mean = np.array(state[INPUT_MEAN])
        self.input_std = np.array(state[INPUT_STD])


@dataclass(frozen=True)
class VerificationConfig:
    branches: int = 22
    branch_inputs: int = 3
    channels: Tuple[int, ...] = (16, 32, 32)
    kernels: Tuple[int, ...] = (5, 5, 3)
    embedding_dim: int = 64
    """Siamese embedding size."""
    projection_dims: Tuple[int, ...] = (64, 32)

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "kernels", tuple(self.kernels))
        object.__setattr__(self, "projection_dims", tuple(self.projection_dims))
        assert len(self.channels) == len(self.kernels), "One kernel size per conv layer"
        assert self.channels and self.projection_dims, "Need conv layers and a projection"

    @property
    def trunk_dim(self) -> int:
        return self.branches * self.channels[-1]

    def branch_parameter_count(self) -> int:
        count, cin = 0, self.branch_inputs
        for cout, k in zip(self.channels, self.kernels):
            count += cout * cin * k + cout
            cin = cout
        return count

    def parameter_count(self, n_classes: int) -> int:
        count = self.branches * self.branch_parameter_count()
        count += self.trunk_dim * n_classes + n_classes
        count += self.trunk_dim * self.embedding_dim + self.embedding_dim
        din = self.embedding_dim
        for dout in self.projection_dims:
            count += din * dout + dout
            din = dout
        return count


class VerificationOutput(NamedTuple):
    logits: np.ndarray
    embedding: np.ndarray
    projection: np.ndarray
    """L2-normalized contrastive embedding."""


class VerificationModel(Model):
    """
    One small 1-D CNN per feature (run as conv groups), concatenated into a
    shared trunk that feeds three heads: a classifier, a siamese embedding and
    an MLP projection of that embedding for contrastive training.
    """

    def __init__(
        self,
        n_classes: int,
        cfg: VerificationConfig = VerificationConfig(),
        seed: int = 0,
        dtype=np.float32,
    ):
        super().__init__()
        assert n_classes >= 2, "The classifier needs at least two classes"
        self.cfg = cfg
        self.n_classes = n_classes
        self.seed = seed
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)

        layers = {}
        cin = cfg.branch_inputs
        for i, (cout, k) in enumerate(zip(cfg.channels, cfg.kernels)):
            layers[f"conv{i}"] = Conv1d(cin, cout, k, groups=cfg.branches, rng=rng, dtype=dtype)
            layers[f"relu{i}"] = ReLU()
            cin = cout
        layers["pool"] = GlobalAvgPool()
        layers["flatten"] = Flatten()
        self.extractor = Sequential(**layers)
        self.classifier = Linear(cfg.trunk_dim, n_classes, rng=rng, dtype=dtype)
        self.siamese = Linear(cfg.trunk_dim, cfg.embedding_dim, rng=rng, dtype=dtype)

        head = {}
        din = cfg.embedding_dim
        for i, dout in enumerate(cfg.projection_dims):
            if i > 0:
                head[f"relu{i - 1}"] = ReLU()
            head[f"fc{i}"] = Linear(din, dout, rng=rng, dtype=dtype)
            din = dout
        head["normalize"] = L2Normalize()
        self.projection = Sequential(**head)

        self.input_mean = np.zeros((cfg.branches, cfg.branch_inputs, 1))
        self.input_std = np.ones((cfg.branches, cfg.branch_inputs, 1))
        self.extractor_frozen = False

    def parameters(self) -> Dict[str, Parameter]:
        params = {}
        for prefix, module in (
            ("extractor", self.extractor),
            ("classifier", self.classifier),
            ("siamese", self.siamese),
            ("projection", self.projection),
        ):
            for name, p in module.parameters().items():
                params[f"{prefix}.{name}"] = p
        return params

    def extractor_parameters(self) -> Dict[str, Parameter]:
        return {n: p for n, p in self.parameters().items() if n.startswith("extractor.")}

    def config_dict(self) -> Dict[str, Any]:
        return {
            "kind": "verification",
            "n_classes": self.n_classes,
            "seed": self.seed,
            "dtype": self.dtype.name,
            "config": asdict(self.cfg),
        }

    def fit_standardization(self, x: np.ndarray) -> None:
        """Per-(feature, component) mean and std over a (N, 22, 3, T) training set."""
        self.input_mean, self.input_std = _standardization(np.asarray(x, np.float64), (0, 3))

    def _check_input(self, x: np.ndarray) -> None:
        expected = (self.cfg.branches, self.cfg.branch_inputs)
        if x.ndim != 4 or x.shape[1:3] != expected:
            raise ShapeMismatch(f"Expected (B, {expected[0]}, {expected[1]}, T), got {x.shape}")

    def forward(self, x: np.ndarray) -> VerificationOutput:
        x = np.asarray(x)
        self._check_input(x)
        trunk = self.extractor.forward(self.standardize(x))
        logits = self.classifier.forward(trunk)
        embedding = self.siamese.forward(trunk)
        projection = self.projection.forward(embedding)
        return VerificationOutput(logits, embedding, projection)

    def backward(
        self,
        dlogits: Optional[np.ndarray] = None,
        dembedding: Optional[np.ndarray] = None,
        dprojection: Optional[np.ndarray] = None,
    ) -> None:
        """
        Accumulate parameter gradients for the last forward(). Heads without
        an incoming gradient are skipped; a frozen extractor is not visited.
        """
        dtrunk = None
        if dprojection is not None:
            demb = self.projection.backward(dprojection)
            dembedding = demb if dembedding is None else dembedding + demb
        if dembedding is not None:
            dtrunk = self.siamese.backward(dembedding.astype(self.dtype, copy=False))
        if dlogits is not None:
            d = self.classifier.backward(dlogits.astype(self.dtype, copy=False))
            dtrunk = d if dtrunk is None else dtrunk + d
        if dtrunk is not None and not self.extractor_frozen:
            self.extractor.backward(dtrunk)

    def freeze_extractor(self) -> None:
        for p in self.extractor_parameters().values():
            p.trainable = False
        self.extractor_frozen = True

    def replace_classifier(self, n_classes: int, seed: int = 0) -> None:
        assert n_classes >= 2, "The classifier needs at least two classes"
        rng = np.random.default_rng(seed)
        self.classifier = Linear(self.cfg.trunk_dim, n_classes, rng=rng, dtype=self.dtype)
        self.n_classes = n_classes

    def infer(self, x: np.ndarray, batch_size: int = 256) -> VerificationOutput:
        """
        Forward pass in batches. Safe to call from several threads.
        """
        outputs = []
        with self._lock:
            for start in range(0, max(len(x), 1), batch_size):
                outputs.append(self.forward(x[start : start + batch_size]))
        return VerificationOutput(*(np.concatenate(parts) for parts in zip(*outputs)))

    def predict_proba(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        return softmax(self.infer(x, batch_size).logits.astype(np.float64))

    def embed(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        return self.infer(x, batch_size).embedding.astype(np.float64)

    def clone(self) -> "VerificationModel":
        other = VerificationModel(self.n_classes, self.cfg, self.seed, self.dtype)
        other.load_state_dict({k: v.copy() for k, v in self.state_dict().items()})
        if self.extractor_frozen:
            other.freeze_extractor()
        return other


@dataclass(frozen=True)
class PatternConfig:
    in_channels: int = 19
    """Channels of a pattern window (19 with all six sensors)."""
    hidden: Tuple[int, ...] = field(default=(32, 32))
    n_classes: int = 2

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(self.hidden))
        assert self.hidden, "Need at least one pointwise layer"
        assert self.n_classes == 2, "The pattern model has two output classes"

    def parameter_count(self) -> int:
        count, cin = 0, self.in_channels
        for h in self.hidden:
            count += cin * h + h
            cin = h
        return count + cin * self.n_classes + self.n_classes


class PatternModel(Model):
    """
    Pointwise (kernel size 1) convolutions, global average pooling and a
    2-way linear output. Class 1 means an unlock is about to happen.
    """

    def __init__(self, cfg: PatternConfig = PatternConfig(), seed: int = 0, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        self.seed = seed
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        layers = {}
        cin = cfg.in_channels
        for i, h in enumerate(cfg.hidden):
            layers[f"conv{i}"] = Conv1d(cin, h, 1, rng=rng, dtype=dtype)
            layers[f"relu{i}"] = ReLU()
            cin = h
        layers["pool"] = GlobalAvgPool()
        layers["flatten"] = Flatten()
        layers["output"] = Linear(cin, cfg.n_classes, rng=rng, dtype=dtype)
        self.net = Sequential(**layers)
        self.input_mean = np.zeros((cfg.in_channels, 1))
        self.input_std = np.ones((cfg.in_channels, 1))

    def parameters(self) -> Dict[str, Parameter]:
        return {f"net.{name}": p for name, p in self.net.parameters().items()}

    def config_dict(self) -> Dict[str, Any]:
        return {
            "kind": "pattern",
            "seed": self.seed,
            "dtype": self.dtype.name,
            "config": asdict(self.cfg),
        }

    def fit_standardization(self, x: np.ndarray) -> None:
        """Per-channel mean and std over a (N, C, T) training set."""
        self.input_mean, self.input_std = _standardization(np.asarray(x, np.float64), (0, 2))

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if x.ndim != 3 or x.shape[1] != self.cfg.in_channels:
            raise ShapeMismatch(f"Expected (B, {self.cfg.in_channels}, T), got {x.shape}")
        return self.net.forward(self.standardize(x)[:, None])

    def backward(self, dlogits: np.ndarray) -> None:
        self.net.backward(dlogits.astype(self.dtype, copy=False))

    def predict_proba(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Probability of class 1 for every window."""
        parts = []
        with self._lock:
            for start in range(0, len(x), batch_size):
                logits = self.forward(x[start : start + batch_size]).astype(np.float64)
                parts.append(softmax(logits)[:, 1])
        return np.concatenate(parts) if parts else np.zeros(0)


def model_from_config(doc: Dict[str, Any]) -> Model:
    dtype = np.dtype(doc["dtype"])
    if doc["kind"] == "verification":
        return VerificationModel(
            doc["n_classes"], VerificationConfig(**doc["config"]), doc["seed"], dtype
        )
    if doc["kind"] == "pattern":
        return PatternModel(PatternConfig(**doc["config"]), doc["seed"], dtype)
    raise ValueError(f"Unknown model kind {doc['kind']!r}")
