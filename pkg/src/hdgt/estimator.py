"""scikit-learn style wrapper around training and inference."""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .autodiff import ops
from .autodiff.tensor import no_grad, precision
from .batch import collate, featurize
from .config import ModelConfig
from .core import Topology, forward_stack
from .decoder import prediction_record
from .model import initial_state
from .scene.preprocess import preprocess
from .scene.schema import Scene, load_scene, load_scene_file, scene_from_dict
from .training import TrainConfig, evaluate_scenes, load_checkpoint, predict_scenes, save_checkpoint, train

_MODEL_KEYS = ("hidden", "n_layers", "n_heads", "n_modes", "t_future", "mode", "aggregation", "typing",
               "delta_frame", "winner", "lambda_cls", "eps_lane", "agent_agent", "fully_connected",
               "merge_lane_connectivity", "homogeneous_map_node")
_TRAIN_KEYS = ("lr", "weight_decay", "batch_size", "epochs", "warmup_epochs", "agent_drop_p",
               "precision", "max_steps")


def check_scene(obj) -> Scene:
    """Accept a Scene, a parsed dict, JSON text/bytes or a path to a scene file."""
    if isinstance(obj, Scene):
        return obj
    if isinstance(obj, dict):
        return scene_from_dict(obj)
    if isinstance(obj, bytes):
        return load_scene(obj)
    if isinstance(obj, (str, os.PathLike)):
        text = str(obj)
        if text.lstrip().startswith("{"):
            return load_scene(text)
        return load_scene_file(Path(obj))
    raise TypeError(f"cannot interpret {type(obj).__name__} as a scene")


def check_scenes(X) -> list[Scene]:
    if isinstance(X, (Scene, dict, bytes, str, os.PathLike)):
        X = [X]
    scenes = [check_scene(x) for x in X]
    if not scenes:
        raise ValueError("expected at least one scene")
    return scenes


class HDGTPredictor(BaseEstimator):
    """Multi-modal trajectory predictor over scene graphs.

    ``fit`` takes a list of scenes (targets are read from each scene's agent
    flags, so ``y`` is ignored). ``predict`` returns one record per scene
    mapping agent ids to local and global mode trajectories and confidences.
    ``transform`` returns the final-layer agent features.
    """

    def __init__(self, hidden=128, n_layers=3, n_heads=4, n_modes=6, t_future=30, mode="pose_change",
                 aggregation="transformer", typing="heterogeneous", delta_frame="target",
                 winner="smooth_l1", lambda_cls=0.1, eps_lane=20.0, agent_agent=True,
                 fully_connected=False, merge_lane_connectivity=False, homogeneous_map_node=False,
                 lr=5e-4, weight_decay=1e-4, batch_size=64, epochs=30, warmup_epochs=1.0,
                 agent_drop_p=0.1, precision="float32", max_steps=None, random_state=0):
        self.hidden = hidden
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.n_modes = n_modes
        self.t_future = t_future
        self.mode = mode
        self.aggregation = aggregation
        self.typing = typing
        self.delta_frame = delta_frame
        self.winner = winner
        self.lambda_cls = lambda_cls
        self.eps_lane = eps_lane
        self.agent_agent = agent_agent
        self.fully_connected = fully_connected
        self.merge_lane_connectivity = merge_lane_connectivity
        self.homogeneous_map_node = homogeneous_map_node
        self.lr = lr
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.epochs = epochs
        self.warmup_epochs = warmup_epochs
        self.agent_drop_p = agent_drop_p
        self.precision = precision
        self.max_steps = max_steps
        self.random_state = random_state

    def _model_config(self) -> ModelConfig:
        return ModelConfig(seed=int(self.random_state), **{k: getattr(self, k) for k in _MODEL_KEYS})

    def _train_config(self) -> TrainConfig:
        return TrainConfig(seed=int(self.random_state), **{k: getattr(self, k) for k in _TRAIN_KEYS})

    def fit(self, X, y=None, X_val=None, out_dir=None):
        scenes = check_scenes(X)
        val = check_scenes(X_val) if X_val is not None else None
        self.model_config_ = self._model_config()
        tc = self._train_config()
        result = train(scenes, self.model_config_, tc, val_scenes=val, out_dir=out_dir)
        self.params_ = result.params
        self.history_ = result.history
        self.validation_ = result.validation
        self.n_steps_ = result.steps
        return self

    def _dtype(self):
        return self._train_config().dtype

    def predict(self, X) -> list[dict]:
        check_is_fitted(self, "params_")
        out = []
        with precision(self._dtype()):
            for s, pred in predict_scenes(self.params_, self.model_config_, check_scenes(X)):
                out.append({"scene_id": s.scene_id,
                            "agents": prediction_record(pred, s.agent_ids, s.frames[:s.graph.n_agents])})
        return out

    def transform(self, X) -> list[np.ndarray]:
        """(A, h) final-layer agent features per scene."""
        check_is_fitted(self, "params_")
        cfg = self.model_config_
        feats = []
        with precision(self._dtype()), no_grad():
            for s in check_scenes(X):
                batch = collate([featurize(preprocess(s), cfg)], cfg)
                state = forward_stack(self.params_, cfg, Topology.from_batch(batch, cfg.coord_scale),
                                      initial_state(self.params_, cfg, batch))
                feats.append(ops.take(state.nodes, batch.agent_nodes).data.copy())
        return feats

    def evaluate(self, X):
        check_is_fitted(self, "params_")
        with precision(self._dtype()):
            return evaluate_scenes(self.params_, self.model_config_, check_scenes(X))

    def score(self, X, y=None) -> float:
        """Negative mean minADE over target agents (higher is better)."""
        return -self.evaluate(X).min_ade

    def save(self, path) -> None:
        check_is_fitted(self, "params_")
        save_checkpoint(path, self.params_, self.model_config_, self._train_config(),
                        extra={"estimator_params": self.get_params()})

    @classmethod
    def load(cls, path) -> "HDGTPredictor":
        params, model_cfg, meta, _ = load_checkpoint(path)
        est = cls(**meta.get("estimator_params", {}))
        est.model_config_ = model_cfg
        est.params_ = params
        est.history_, est.validation_, est.n_steps_ = [], [], 0
        return est
