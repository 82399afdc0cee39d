"""JSON run configuration shared by every CLI subcommand."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .engine import InferenceConfig, TrainConfig
from .graph import GraphKind
from .grn_sim import GrnConfig, NoiseProfile, noise_preset
from .model import ModelConfig
from .scm import MechanismKind


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GraphSection(_Strict):
    kind: Literal["ER", "SF", "SF_DIRECT", "SBM"] = "ER"
    n: int = Field(20, ge=2)
    avg_degree: float = Field(2.0, ge=0)
    blocks: int = Field(5, ge=1)
    block_ratio: float = Field(10.0, gt=0)

    def kind_spec(self) -> GraphKind:
        return GraphKind(self.kind, self.avg_degree, self.blocks, self.block_ratio)


class MechanismSection(_Strict):
    kind: Literal["LINEAR", "MLP", "POLY", "SIGMOID"] = "LINEAR"
    weight_range: tuple[float, float] = (0.5, 2.0)
    poly_degree: int = 2
    mlp_hidden: int = 16
    noise_std: float = 0.1
    rescale: bool = False

    def spec(self) -> MechanismKind:
        return MechanismKind(self.kind, weight_range=self.weight_range, poly_degree=self.poly_degree,
                             mlp_hidden=self.mlp_hidden, noise_std=self.noise_std, rescale=self.rescale)


class GrnSection(_Strict):
    cell_types: int = 10
    hill_coeff: float = 2.0
    decay: float = 0.8
    sde_dt: float = 0.01
    burn_in_steps: int = 500
    noise_amplitude: float = 1.0
    fidelity: Literal["HIGH", "MEDIUM", "LOW"] = "HIGH"
    noise_preset: str = "none"

    def spec(self) -> GrnConfig:
        try:
            profile: NoiseProfile = noise_preset(self.noise_preset)
        except KeyError as err:
            raise ConfigError(str(err)) from None
        return GrnConfig(cell_types=self.cell_types, hill_coeff=self.hill_coeff, decay=self.decay,
                         sde_dt=self.sde_dt, burn_in_steps=self.burn_in_steps,
                         noise_amplitude=self.noise_amplitude, fidelity=self.fidelity, noise_profile=profile)


class DataSection(_Strict):
    simulator: Literal["scm", "grn"] = "scm"
    graph: GraphSection = GraphSection()
    mechanism: MechanismSection = MechanismSection()
    grn: GrnSection = GrnSection()
    per_var: int = Field(5, ge=0)
    obs: int = Field(200, ge=0)
    normalize: Literal["none", "cpm", "standardize"] = "standardize"
    systems: int = Field(1, ge=1)


class ModelSection(_Strict):
    layers: int = 10
    embed_dim: int = 16
    heads: int = 16
    ff_hidden: int = 96

    def spec(self) -> ModelConfig:
        return ModelConfig(self.layers, self.embed_dim, self.heads, self.ff_hidden)


class TrainSection(_Strict):
    batch_size: int = 32
    max_steps: int = 40_000
    base_lr: float = 8e-4
    schedule: Literal["cosine", "constant"] = "cosine"
    weight_decay: float = 1e-5
    eval_every: int = 200
    patience: int = 4_000
    n_sub: int = 200
    m_sub: int = 200
    val_ensemble: int = 1

    def spec(self, seed: int) -> TrainConfig:
        return TrainConfig(batch_size=self.batch_size, max_steps=self.max_steps, base_lr=self.base_lr,
                           schedule=self.schedule, weight_decay=self.weight_decay, eval_every=self.eval_every,
                           patience=self.patience, n_sub=self.n_sub, m_sub=self.m_sub,
                           val_ensemble=self.val_ensemble, seed=seed)


class InferSection(_Strict):
    n_sub: int = 200
    m_sub: int = 200
    ensemble: int = 50

    def spec(self, seed: int) -> InferenceConfig:
        return InferenceConfig(self.n_sub, self.m_sub, self.ensemble, seed)


class BenchSection(_Strict):
    n_grid: list[int] = [500, 1000]
    T_grid: list[int] = [10, 20]
    sweep_T: list[int] = [1, 2, 5, 10]
    sweep_n_sub: list[int] = [5, 10, 20]
    repeats: int = Field(3, ge=1)
    # named data sources for the train-source x test-source relative-AUROC grid
    grid_sources: dict[str, DataSection] = {}
    grid_train_systems: int = Field(4, ge=1)
    grid_test_systems: int = Field(2, ge=1)


class Seeds(_Strict):
    graph: int = 0
    data: int = 0
    train: int = 0
    infer: int = 0


class RunConfig(_Strict):
    seeds: Seeds = Seeds()
    data: DataSection = DataSection()
    model: ModelSection = ModelSection()
    train: TrainSection = TrainSection()
    infer: InferSection = InferSection()
    bench: BenchSection = BenchSection()

    @model_validator(mode="after")
    def _check_specs(self):
        # build the runtime dataclasses once so their own checks fire at load time
        try:
            self.data.graph.kind_spec()
            self.data.mechanism.spec()
            self.model.spec()
            self.train.spec(0)
            self.infer.spec(0)
        except (ValueError, TypeError) as err:
            raise ValueError(str(err)) from None
        return self

    def with_seed(self, seed: Optional[int]) -> "RunConfig":
        """``--seed`` overrides every stage seed at once."""
        if seed is None:
            return self
        return self.model_copy(update={"seeds": Seeds(graph=seed, data=seed, train=seed, infer=seed)})


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON ({err})") from None
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as err:
        raise ConfigError(f"{path}: {err}") from None


def system_seeds(seed: int, k: int) -> tuple[int, int, int]:
    """Independent (graph, mechanism, sampling) seeds for the k-th generated system."""
    a, b, c = np.random.SeedSequence([seed, k]).generate_state(3)
    return int(a), int(b), int(c)
