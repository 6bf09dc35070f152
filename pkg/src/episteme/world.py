"""Ground-truth grid world: PoIs with hidden classes and single-modality robots."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

# Class means per modality ("ambiguity triangle"). Modality 0 cannot tell
# classes 0 and 1 apart, modality 1 cannot tell 1 and 2 apart.
CLASS_MEANS = np.array(
    [
        [[-1.0, 0.0], [-1.0, 0.0], [1.0, 0.0]],
        [[-1.0, 0.0], [1.0, 0.0], [1.0, 0.0]],
    ]
)
N_MODALITIES = CLASS_MEANS.shape[0]
N_CLASSES = CLASS_MEANS.shape[1]
OBS_DIM = CLASS_MEANS.shape[2]


@dataclass(frozen=True)
class WorldConfig:
    width: int = 10
    height: int = 10
    n_pois: int = 4
    n_robots: int = 3
    robot_modalities: tuple[int, ...] = (0, 1, 0)
    class_count: int = 3
    sigma_obs: float = 0.2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "robot_modalities", tuple(int(m) for m in self.robot_modalities))

    def validate(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("grid width and height must be positive")
        if self.n_pois < 1 or self.n_robots < 1:
            raise ValueError("need at least one PoI and one robot")
        if len(self.robot_modalities) != self.n_robots:
            raise ValueError(
                f"robot_modalities has {len(self.robot_modalities)} entries but n_robots is {self.n_robots}"
            )
        if any(not 0 <= m < N_MODALITIES for m in self.robot_modalities):
            raise ValueError(f"robot modalities must lie in [0, {N_MODALITIES})")
        if self.class_count != N_CLASSES:
            raise ValueError(f"the observation table defines exactly {N_CLASSES} classes")
        if not 0 <= self.sigma_obs < np.inf:
            raise ValueError("sigma_obs must be finite and non-negative")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.n_pois + self.n_robots > self.width * self.height:
            raise ValueError("not enough grid cells for distinct PoI and robot placement")


@dataclass(frozen=True)
class Poi:
    cell: tuple[int, int]
    class_id: int = field(repr=False)


@dataclass
class RobotPose:
    cell: tuple[int, int]
    modality: int


@dataclass(frozen=True)
class Observation:
    modality: int
    vector: np.ndarray
    poi_index: int


def manhattan(a, b) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


class GridWorld:
    """Open grid without obstacles. Robots move to a PoI in one macro-action."""

    def __init__(self, config: WorldConfig, pois: list[Poi], robots: list[RobotPose]):
        self.config = config
        self._pois = pois
        self.robots = robots

    @property
    def n_pois(self) -> int:
        return len(self._pois)

    @property
    def n_robots(self) -> int:
        return len(self.robots)

    def poi_cell(self, n: int) -> tuple[int, int]:
        return self._pois[n].cell

    def poi_cells(self) -> list[tuple[int, int]]:
        return [p.cell for p in self._pois]

    def sample_observation(self, poi_index: int, modality: int, rng: np.random.Generator) -> Observation:
        class_id = self._pois[poi_index].class_id
        mean = CLASS_MEANS[modality, class_id]
        noise = rng.normal(0.0, 1.0, size=OBS_DIM) * self.config.sigma_obs
        return Observation(modality, mean + noise, poi_index)

    def path_distance(self, robot_k: int, poi_index: int) -> int:
        return manhattan(self.robots[robot_k].cell, self._pois[poi_index].cell)

    def execute_drive(self, robot_k: int, poi_index: int, rng: np.random.Generator) -> tuple[Observation, int]:
        """Move robot ``k`` onto the PoI and observe it with the robot's modality."""
        distance = self.path_distance(robot_k, poi_index)
        robot = self.robots[robot_k]
        robot.cell = self._pois[poi_index].cell
        return self.sample_observation(poi_index, robot.modality, rng), distance

    def candidate_pois(self, robot_k: int, visit_masks, limit: int) -> list[int]:
        """Up to ``limit`` nearest PoIs not yet seen by robot k's modality.

        Sorted by (distance, index).
        """
        if limit < 1:
            raise ValueError("candidate limit must be at least 1")
        m = self.robots[robot_k].modality
        keyed = [(self.path_distance(robot_k, n), n) for n in range(self.n_pois) if not visit_masks[n][m]]
        keyed.sort()
        return [n for _, n in keyed[:limit]]

    def snapshot(self) -> dict:
        """Debug export including hidden classes. Not for policy inputs."""
        cfg = asdict(self.config)
        cfg["robot_modalities"] = list(cfg["robot_modalities"])
        return {
            "config": cfg,
            "pois": [{"cell": list(p.cell), "class": p.class_id} for p in self._pois],
            "robots": [{"cell": list(r.cell), "modality": r.modality} for r in self.robots],
        }

    def class_labels(self) -> list[int]:
        """Hidden classes, for evaluation tooling only."""
        return [p.class_id for p in self._pois]


def reset_world(config: WorldConfig, seed: int | None = None) -> GridWorld:
    """Place PoIs and robots on distinct cells and draw classes uniformly."""
    config.validate()
    rng = np.random.default_rng(config.seed if seed is None else seed)
    n_cells = config.width * config.height
    cells = rng.choice(n_cells, size=config.n_pois + config.n_robots, replace=False)
    coords = [(int(c) % config.width, int(c) // config.width) for c in cells]
    classes = rng.integers(0, config.class_count, size=config.n_pois)
    pois = [Poi(coords[i], int(classes[i])) for i in range(config.n_pois)]
    robots = [RobotPose(coords[config.n_pois + k], config.robot_modalities[k]) for k in range(config.n_robots)]
    return GridWorld(config, pois, robots)
