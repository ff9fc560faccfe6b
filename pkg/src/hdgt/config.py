"""Model configuration shared by the encoders, the graph transformer and the heads."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

from .graph import DEFAULT_BUFFERS, GraphConfig

MODES = ("pose_change", "fixed_reference", "relative_edge")
AGGREGATIONS = ("transformer", "gcn_like")
TYPINGS = ("heterogeneous", "shared")
DELTA_FRAMES = ("target", "global")
WINNER_CRITERIA = ("smooth_l1", "euclidean")


@dataclass
class ModelConfig:
    hidden: int = 128
    n_layers: int = 3
    n_heads: int = 4
    n_modes: int = 6
    t_future: int = 30
    pointnet_layers: int = 3
    embed_dim: int = 16
    ffn_mult: int = 2
    head_hidden_layers: int = 2
    fusion_hidden: bool = True
    coord_scale: float = 0.1
    mode: str = "pose_change"
    aggregation: str = "transformer"
    typing: str = "heterogeneous"
    delta_frame: str = "target"
    winner: str = "smooth_l1"
    lambda_cls: float = 0.1
    use_height: bool = False
    ln_eps: float = 1e-5
    seed: int = 0
    # graph construction
    eps_lane: float = 20.0
    buffers: dict = field(default_factory=lambda: dict(DEFAULT_BUFFERS))
    agent_agent: bool = True
    fully_connected: bool = False
    merge_lane_connectivity: bool = False
    homogeneous_map_node: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name, allowed in (("mode", MODES), ("aggregation", AGGREGATIONS), ("typing", TYPINGS),
                              ("delta_frame", DELTA_FRAMES), ("winner", WINNER_CRITERIA)):
            if getattr(self, name) not in allowed:
                raise ValueError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        if self.hidden % self.n_heads:
            raise ValueError(f"hidden={self.hidden} not divisible by n_heads={self.n_heads}")
        if self.n_layers < 1 or self.n_modes < 1 or self.t_future < 1:
            raise ValueError("n_layers, n_modes and t_future must be >= 1")
        if self.hidden < 8:
            raise ValueError("hidden must be >= 8")

    @property
    def graph(self) -> GraphConfig:
        return GraphConfig(eps_lane=self.eps_lane, buffers=dict(self.buffers),
                           agent_agent=self.agent_agent, fully_connected=self.fully_connected,
                           merge_lane_connectivity=self.merge_lane_connectivity,
                           homogeneous_map_node=self.homogeneous_map_node)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)
